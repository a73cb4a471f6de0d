#include "xmodal/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "xmodal/losses.hpp"
#include "xmodal/optim.hpp"

namespace xmodal {

nlohmann::json TrainLog::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"lr_specific", e.lr_specific},
                           {"lr_shared", e.lr_shared},
                           {"mean_loss", e.mean_loss}});
  }
  return {{"batch_losses", batch_losses}, {"epochs", epochs_json}};
}

TrainOutcome train(const RunConfig& config, const Dataset& train_set,
                   const EpochCallback& on_epoch) {
  config.validate();
  Network network(config.resolved_model(), config.seed);
  // Sampling gets its own stream so init and batches stay decoupled.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Sgd sgd(config.optim.momentum, config.optim.weight_decay);
  const auto params = network.params().named();
  TrainLog log;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    LearningRates lr;
    lr.modality_specific = scheduled_lr(config.optim.lr_specific, config.optim.decay_factor,
                                        config.optim.decay_every_epochs, epoch);
    lr.shared = scheduled_lr(config.optim.lr_shared, config.optim.decay_factor,
                             config.optim.decay_every_epochs, epoch);
    double epoch_sum = 0.0;
    for (std::size_t step = 0; step < config.batches_per_epoch; ++step) {
      Batch batch = sample_batch(train_set, config.n_ids, config.k, rng,
                                 config.flip_probability);
      FeatureBundle bundle = network.forward(batch.rgb, batch.ir);
      auto [loss, breakdown] =
          total_loss(bundle, batch.ids, batch.modalities, config.loss, config.ablation.loss,
                     epoch >= config.id_warmup_epochs);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << step << ": "
           << breakdown.to_json().dump();
        throw NumericalError(os.str());
      }
      backward(loss);
      sgd.step(params, lr);
      Sgd::zero_grad(params);
      log.batch_losses.push_back(value);
      epoch_sum += value;
    }
    log.epochs.push_back({epoch, lr.modality_specific, lr.shared,
                          epoch_sum / static_cast<double>(config.batches_per_epoch)});
    if (on_epoch) on_epoch(epoch, network);
  }
  return {std::move(network), std::move(log)};
}

std::vector<AblationRow> ablation_matrix() {
  auto row = [](std::string name, bool ml, bool p, bool rf, bool rf_only,
                MetricLoss loss) {
    AblationSwitches s;
    s.use_multi_level = ml;
    s.use_parts = p;
    s.use_relation = rf || rf_only;
    s.relation_only = rf_only;
    s.loss = loss;
    return AblationRow{std::move(name), s};
  };
  return {
      row("baseline", false, false, false, false, MetricLoss::kBdtr),
      row("+ML", true, false, false, false, MetricLoss::kBdtr),
      row("+P", false, true, false, false, MetricLoss::kBdtr),
      row("+ML+P", true, true, false, false, MetricLoss::kBdtr),
      row("RF-only", true, true, false, true, MetricLoss::kBdtr),
      row("+RF", true, true, true, false, MetricLoss::kBdtr),
      row("+RF+CQ", true, true, true, false, MetricLoss::kCq),
  };
}

std::vector<AblationRow> select_ablation_rows(const std::string& names) {
  auto all = ablation_matrix();
  if (names == "all" || names.empty()) return all;
  std::vector<AblationRow> out;
  std::stringstream ss(names);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const AblationRow& r) { return r.name == name; });
    if (it == all.end()) throw ConfigError("unknown ablation row '" + name + "'");
    out.push_back(*it);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationResult run_ablation_row(const RunConfig& config, const AblationRow& row,
                                std::size_t seeds) {
  AblationResult result;
  result.name = row.name;
  const Dataset train_set = generate_dataset(config.train_spec());
  const Dataset eval_set = generate_dataset(config.eval_spec());
  for (std::size_t s = 0; s < seeds; ++s) {
    RunConfig run = config;
    run.ablation = row.switches;
    run.seed = config.seed + s;
    TrainOutcome outcome = train(run, train_set);
    RetrievalResult r = evaluate(outcome.network, eval_set, run.eval_options());
    result.rank1.push_back(r.cmc.at(0));
    result.map.push_back(r.map);
  }
  result.median_rank1 = median(result.rank1);
  result.median_map = median(result.map);
  return result;
}

}  // namespace xmodal
