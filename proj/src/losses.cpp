#include "xmodal/losses.hpp"

#include <string>

#include "xmodal/ops.hpp"

namespace xmodal {

std::string_view metric_loss_name(MetricLoss kind) {
  return kind == MetricLoss::kBdtr ? "bdtr" : "cq";
}

MetricLoss parse_metric_loss(std::string_view name) {
  if (name == "bdtr") return MetricLoss::kBdtr;
  if (name == "cq") return MetricLoss::kCq;
  throw ConfigError("unknown metric loss '" + std::string(name) +
                    "' (expected bdtr or cq)");
}

void LossConfig::validate() const {
  if (!(rho1 >= 0.0) || !(rho2 >= 0.0) || !(rho3 >= 0.0)) {
    throw ConfigError("loss margins must be >= 0");
  }
}

double sq_euclidean(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("sq_euclidean: length mismatch " +
                     std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return 0.5 * acc;
}

MinedIndices mine_batch_hard(std::span<const double> distances,
                             std::span<const std::size_t> ids,
                             std::span<const Modality> modalities) {
  const std::size_t n = ids.size();
  if (modalities.size() != n || distances.size() != n * n) {
    throw ShapeError("mine_batch_hard: inconsistent batch sizes");
  }
  constexpr std::size_t kNone = MinedIndices::kNone;
  MinedIndices m;
  m.cross_positive.assign(n, kNone);
  m.cross_negative.assign(n, kNone);
  m.intra_positive.assign(n, kNone);
  m.intra_negative.assign(n, kNone);
  for (std::size_t a = 0; a < n; ++a) {
    const double* row = distances.data() + a * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const bool same_id = ids[j] == ids[a];
      const bool cross = modalities[j] != modalities[a];
      std::size_t& slot = same_id ? (cross ? m.cross_positive[a] : m.intra_positive[a])
                                  : (cross ? m.cross_negative[a] : m.intra_negative[a]);
      // Strict comparisons keep the lowest index on ties.
      if (slot == kNone || (same_id ? row[j] > row[slot] : row[j] < row[slot])) {
        slot = j;
      }
    }
  }
  return m;
}

namespace {

struct Mined {
  Tensor distances;
  MinedIndices indices;
};

Mined prepare(const Tensor& features, std::span<const std::size_t> ids,
              std::span<const Modality> modalities, bool normalize) {
  if (features.rank() != 2 || features.dim(0) != ids.size() ||
      modalities.size() != ids.size()) {
    throw ShapeError("loss: features " + shape_str(features.shape()) +
                     " inconsistent with " + std::to_string(ids.size()) +
                     " labels");
  }
  Tensor x = normalize ? l2_normalize(features) : features;
  Tensor d = pairwise_sq_distance(x);
  MinedIndices idx = mine_batch_hard(d.data(), ids, modalities);
  return {d, std::move(idx)};
}

std::size_t require(std::size_t index, std::size_t anchor, const char* what) {
  if (index == MinedIndices::kNone) {
    throw MiningError("anchor " + std::to_string(anchor) + " has no " + what);
  }
  return index;
}

std::vector<HingeTriple> cross_triples(const MinedIndices& m) {
  std::vector<HingeTriple> t;
  for (std::size_t a = 0; a < m.cross_positive.size(); ++a) {
    t.push_back({a, require(m.cross_positive[a], a, "cross-modality positive"),
                 require(m.cross_negative[a], a, "cross-modality negative")});
  }
  return t;
}

std::vector<HingeTriple> cross_intra_triples(const MinedIndices& m) {
  std::vector<HingeTriple> t;
  for (std::size_t a = 0; a < m.cross_positive.size(); ++a) {
    t.push_back({a, require(m.cross_positive[a], a, "cross-modality positive"),
                 require(m.intra_negative[a], a, "intra-modality negative")});
  }
  return t;
}

std::vector<HingeTriple> intra_triples(const MinedIndices& m) {
  std::vector<HingeTriple> t;
  for (std::size_t a = 0; a < m.intra_positive.size(); ++a) {
    t.push_back({a, require(m.intra_positive[a], a, "intra-modality positive"),
                 require(m.intra_negative[a], a, "intra-modality negative")});
  }
  return t;
}

struct MetricResult {
  Tensor loss;
  std::size_t hinges;
};

MetricResult metric_term(const Mined& mined, MetricLoss kind, double margin) {
  std::vector<HingeTriple> triples = cross_triples(mined.indices);
  if (kind == MetricLoss::kCq) {
    // Cross-negative hinges first, then the intra-negative ones, so the sum
    // extends the BDTR partial sum with nonnegative terms.
    auto extra = cross_intra_triples(mined.indices);
    triples.insert(triples.end(), extra.begin(), extra.end());
  }
  return {hinge_sum(mined.distances, triples, margin), triples.size()};
}

}  // namespace

Tensor bdtr_loss(const Tensor& features, std::span<const std::size_t> ids,
                 std::span<const Modality> modalities, double rho1,
                 bool normalize) {
  Mined mined = prepare(features, ids, modalities, normalize);
  return metric_term(mined, MetricLoss::kBdtr, rho1).loss;
}

Tensor cq_loss(const Tensor& features, std::span<const std::size_t> ids,
               std::span<const Modality> modalities, double rho2,
               bool normalize) {
  Mined mined = prepare(features, ids, modalities, normalize);
  return metric_term(mined, MetricLoss::kCq, rho2).loss;
}

Tensor smt_loss(const Tensor& features, std::span<const std::size_t> ids,
                std::span<const Modality> modalities, double rho3,
                bool normalize) {
  Mined mined = prepare(features, ids, modalities, normalize);
  auto triples = intra_triples(mined.indices);
  return hinge_sum(mined.distances, triples, rho3);
}

std::size_t LossBreakdown::metric_hinge_count() const {
  std::size_t n = 0;
  for (const auto& t : terms) n += t.metric_hinges;
  return n;
}

nlohmann::json LossBreakdown::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : terms) {
    rows.push_back({{"level", t.level},
                    {"part", t.part},
                    {"cq", t.metric},
                    {"st", t.st},
                    {"id_rgb", t.id_rgb},
                    {"id_ir", t.id_ir},
                    {"total", t.total}});
  }
  return {{"metric_loss", metric_loss_name(kind)}, {"terms", rows},
          {"total", total}};
}

std::pair<Tensor, LossBreakdown> total_loss(const FeatureBundle& bundle,
                                            std::span<const std::size_t> ids,
                                            std::span<const Modality> modalities,
                                            const LossConfig& config,
                                            MetricLoss kind,
                                            bool include_metric) {
  config.validate();
  const std::size_t slots = bundle.levels.size() * bundle.num_parts;
  if (bundle.parts.size() != slots || bundle.logits.size() != slots) {
    throw ShapeError("total_loss: bundle holds " +
                     std::to_string(bundle.parts.size()) + " parts and " +
                     std::to_string(bundle.logits.size()) +
                     " logit sets, expected " + std::to_string(slots));
  }
  std::vector<std::size_t> rgb_rows, ir_rows, rgb_ids, ir_ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (modalities[i] == Modality::kRgb) {
      rgb_rows.push_back(i);
      rgb_ids.push_back(ids[i]);
    } else {
      ir_rows.push_back(i);
      ir_ids.push_back(ids[i]);
    }
  }
  if (rgb_rows.empty() || ir_rows.empty()) {
    throw MiningError("total_loss: batch must contain both modalities");
  }
  const double metric_margin = kind == MetricLoss::kCq ? config.rho2 : config.rho1;

  LossBreakdown breakdown;
  breakdown.kind = kind;
  Tensor total;
  for (std::size_t slot = 0; slot < slots; ++slot) {
    const Tensor& logits = bundle.logits[slot];
    if (!logits.defined() || !bundle.parts[slot].defined()) {
      throw ShapeError("total_loss: missing part features or logits at slot " +
                       std::to_string(slot));
    }
    Tensor id_rgb = softmax_cross_entropy(gather_rows(logits, rgb_rows), rgb_ids);
    Tensor id_ir = softmax_cross_entropy(gather_rows(logits, ir_rows), ir_ids);
    LossTerm row;
    row.level = bundle.levels[slot / bundle.num_parts];
    row.part = slot % bundle.num_parts;
    row.id_rgb = id_rgb.item();
    row.id_ir = id_ir.item();
    Tensor term;
    if (include_metric) {
      Mined mined = prepare(bundle.parts[slot], ids, modalities, config.normalize_inputs);
      MetricResult metric = metric_term(mined, kind, metric_margin);
      auto st_triples = intra_triples(mined.indices);
      Tensor st = hinge_sum(mined.distances, st_triples, config.rho3);
      term = add(add(add(metric.loss, st), id_rgb), id_ir);
      row.metric = metric.loss.item();
      row.st = st.item();
      row.metric_hinges = metric.hinges + st_triples.size();
    } else {
      term = add(id_rgb, id_ir);
    }
    row.total = term.item();
    breakdown.terms.push_back(row);
    total = total.defined() ? add(total, term) : term;
  }
  breakdown.total = total.item();
  return {total, breakdown};
}

}  // namespace xmodal
