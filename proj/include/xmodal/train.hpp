#ifndef XMODAL_TRAIN_HPP_
#define XMODAL_TRAIN_HPP_

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/network.hpp"

namespace xmodal {

struct EpochLog {
  int epoch = 0;
  double lr_specific = 0.0;
  double lr_shared = 0.0;
  double mean_loss = 0.0;
};

struct TrainLog {
  std::vector<double> batch_losses;
  std::vector<EpochLog> epochs;

  nlohmann::json to_json() const;
};

struct TrainOutcome {
  Network network;
  TrainLog log;
};

/// Called after every epoch with the epoch index and the current network.
using EpochCallback = std::function<void(int epoch, const Network& network)>;

/// Single-threaded SGD over i.i.d. sampled N x K batches. Deterministic in
/// config.seed. Throws NumericalError on a non-finite loss.
TrainOutcome train(const RunConfig& config, const Dataset& train_set,
                   const EpochCallback& on_epoch = {});

/// One row of the ablation table.
struct AblationRow {
  std::string name;
  AblationSwitches switches;
};

/// baseline, +ML, +P, +ML+P, RF-only, +RF, +RF+CQ.
std::vector<AblationRow> ablation_matrix();
/// Rows selected by a comma-separated name list, or all of them for "all".
std::vector<AblationRow> select_ablation_rows(const std::string& names);

struct AblationResult {
  std::string name;
  std::vector<double> rank1;  // one per seed
  std::vector<double> map;
  double median_rank1 = 0.0;
  double median_map = 0.0;
};

double median(std::vector<double> values);

/// Trains and evaluates `row` for seeds config.seed .. config.seed+seeds-1.
AblationResult run_ablation_row(const RunConfig& config, const AblationRow& row,
                                std::size_t seeds);

}  // namespace xmodal

#endif  // XMODAL_TRAIN_HPP_
