#ifndef XMODAL_LOSSES_HPP_
#define XMODAL_LOSSES_HPP_

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/network.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Raised when a batch cannot supply a positive or negative for some anchor.
class MiningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MetricLoss { kBdtr, kCq };

std::string_view metric_loss_name(MetricLoss kind);
MetricLoss parse_metric_loss(std::string_view name);

struct LossConfig {
  double rho1 = 0.3;  // BDTR margin
  double rho2 = 0.3;  // cross-modality quadruplet margin
  double rho3 = 0.3;  // single-modality triplet margin
  bool normalize_inputs = true;

  void validate() const;
};

/// Batch-hard selections per anchor; kNone where the pool is empty.
struct MinedIndices {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> cross_positive;  // farthest, other modality
  std::vector<std::size_t> cross_negative;  // nearest, other modality
  std::vector<std::size_t> intra_positive;  // farthest, same modality, not self
  std::vector<std::size_t> intra_negative;  // nearest, same modality
};

/// 0.5 * |x - y|^2.
double sq_euclidean(std::span<const double> x, std::span<const double> y);

/// Mines over a row-major B x B distance matrix. Ties go to the lowest index.
MinedIndices mine_batch_hard(std::span<const double> distances,
                             std::span<const std::size_t> ids,
                             std::span<const Modality> modalities);

// features [B,E]; ids and modalities have B entries. Each loss sums its
// hinge terms over all anchors of both modalities.
Tensor bdtr_loss(const Tensor& features, std::span<const std::size_t> ids,
                 std::span<const Modality> modalities, double rho1,
                 bool normalize = true);
Tensor cq_loss(const Tensor& features, std::span<const std::size_t> ids,
               std::span<const Modality> modalities, double rho2,
               bool normalize = true);
Tensor smt_loss(const Tensor& features, std::span<const std::size_t> ids,
                std::span<const Modality> modalities, double rho3,
                bool normalize = true);

struct LossTerm {
  int level = 0;
  std::size_t part = 0;
  double metric = 0.0;  // cq or bdtr, depending on the configured kind
  double st = 0.0;
  double id_rgb = 0.0;
  double id_ir = 0.0;
  double total = 0.0;
  std::size_t metric_hinges = 0;  // hinge terms in metric + st
};

struct LossBreakdown {
  MetricLoss kind = MetricLoss::kCq;
  std::vector<LossTerm> terms;
  double total = 0.0;

  std::size_t metric_hinge_count() const;
  nlohmann::json to_json() const;
};

/// Sum over levels and parts of metric + st + id(RGB anchors) + id(IR
/// anchors). Every batch row is an anchor; ids index the classifier.
/// With include_metric=false only the identification terms contribute
/// (metric and st are reported as 0).
std::pair<Tensor, LossBreakdown> total_loss(const FeatureBundle& bundle,
                                            std::span<const std::size_t> ids,
                                            std::span<const Modality> modalities,
                                            const LossConfig& config,
                                            MetricLoss kind = MetricLoss::kCq,
                                            bool include_metric = true);

}  // namespace xmodal

#endif  // XMODAL_LOSSES_HPP_
