#include "xmodal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xmodal/losses.hpp"
#include "xmodal/network.hpp"
#include "xmodal/ops.hpp"

namespace xmodal {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                std::span<Tensor> inputs,
                                const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
    t.zero_grad();
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<std::size_t> elements(t.numel());
    std::iota(elements.begin(), elements.end(), 0);
    if (options.max_elements_per_input > 0 &&
        elements.size() > options.max_elements_per_input) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(options.max_elements_per_input);
    }
    for (std::size_t i : elements) {
      auto data = t.mutable_data();
      const double orig = data[i];
      data[i] = orig + options.step;
      const double plus = loss_fn().item();
      data[i] = orig - options.step;
      const double minus = loss_fn().item();
      data[i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      if (options.kink_tolerance > 0.0) {
        const double center = loss_fn().item();
        const double fwd = (plus - center) / options.step;
        const double bwd = (center - minus) / options.step;
        const double scale = std::max({std::abs(fwd), std::abs(bwd), options.abs_floor});
        if (std::abs(fwd - bwd) > options.kink_tolerance * scale) {
          ++result.elements_skipped;
          continue;
        }
      }
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.elements_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_location = "input " + std::to_string(k) + " element " +
                                std::to_string(i) + " analytic " + std::to_string(a) +
                                " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kNetworkTolerance = 1e-3;

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(std::uint64_t seed) : engine(seed) {}

  std::size_t integer(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine);
  }
  double real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine);
  }
  Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = real(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(d), true);
  }
  // Values bounded away from zero so ReLU kinks are not straddled.
  Tensor away_from_zero(Shape shape) {
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) {
      const double mag = real(0.05, 1.0);
      v = integer(0, 1) ? mag : -mag;
    }
    return Tensor::from_data(std::move(shape), std::move(d), true);
  }
};

// Scalar <probe, y>, so every output element carries a distinct weight.
Tensor probe_loss(const Tensor& y, const Tensor& probe) {
  Tensor flat = reshape(y, {y.numel()});
  Tensor w = reshape(probe, {1, probe.numel()});
  return sum(fully_connected(flat, w, Tensor::zeros({1})));
}

GradCheckResult merge(GradCheckResult a, const GradCheckResult& b) {
  a.elements_checked += b.elements_checked;
  a.elements_skipped += b.elements_skipped;
  if (b.max_rel_error > a.max_rel_error) {
    a.max_rel_error = b.max_rel_error;
    a.worst_location = b.worst_location;
  }
  return a;
}

using Case = std::function<GradCheckResult(Rng&)>;

GradCheckResult check_with_probe(Rng& rng, std::vector<Tensor> inputs,
                                 const std::function<Tensor(std::span<Tensor>)>& op,
                                 Shape out_shape) {
  Tensor probe = rng.tensor(std::move(out_shape));
  probe.set_requires_grad(false);
  auto fn = [&]() { return probe_loss(op(inputs), probe); };
  GradCheckOptions opts;
  opts.seed = rng.engine();
  return check_gradients(fn, inputs, opts);
}

GradCheckResult conv2d_case(Rng& rng) {
  const std::size_t b = rng.integer(1, 2), ci = rng.integer(1, 3), co = rng.integer(1, 3);
  const std::size_t h = rng.integer(3, 6), w = rng.integer(3, 6);
  const std::size_t k = rng.integer(0, 1) ? 3 : 1;
  const std::size_t stride = rng.integer(1, 2), pad = rng.integer(0, k / 2);
  Tensor x = rng.tensor({b, ci, h, w}), wt = rng.tensor({co, ci, k, k}), bias = rng.tensor({co});
  Tensor y = conv2d(x, wt, bias, stride, pad);
  return check_with_probe(
      rng, {x, wt, bias},
      [&](std::span<Tensor> in) { return conv2d(in[0], in[1], in[2], stride, pad); },
      y.shape());
}

GradCheckResult conv3d_case(Rng& rng) {
  const std::size_t b = rng.integer(1, 2), gi = rng.integer(1, 2), go = rng.integer(1, 2);
  const std::size_t d = rng.integer(2, 4), h = rng.integer(3, 4), w = rng.integer(3, 4);
  const Triple stride{rng.integer(1, 2), rng.integer(1, 2), rng.integer(1, 2)};
  Tensor x = rng.tensor({b, gi, d, h, w}), wt = rng.tensor({go, gi, 3, 3, 3}), bias = rng.tensor({go});
  Tensor y = conv3d(x, wt, bias, stride, {1, 1, 1});
  return check_with_probe(
      rng, {x, wt, bias},
      [&](std::span<Tensor> in) { return conv3d(in[0], in[1], in[2], stride, {1, 1, 1}); },
      y.shape());
}

GradCheckResult relu_case(Rng& rng) {
  Shape s{rng.integer(1, 4), rng.integer(1, 5)};
  return check_with_probe(rng, {rng.away_from_zero(s)},
                          [](std::span<Tensor> in) { return relu(in[0]); }, s);
}

GradCheckResult add_case(Rng& rng) {
  Shape s{rng.integer(1, 4), rng.integer(1, 5)};
  return check_with_probe(rng, {rng.tensor(s), rng.tensor(s)},
                          [](std::span<Tensor> in) { return add(in[0], in[1]); }, s);
}

GradCheckResult concat_case(Rng& rng) {
  const std::size_t axis = rng.integer(0, 2);
  Shape a{rng.integer(1, 3), rng.integer(1, 3), rng.integer(1, 3)};
  Shape b = a;
  b[axis] = rng.integer(1, 4);
  Shape out = a;
  out[axis] += b[axis];
  return check_with_probe(
      rng, {rng.tensor(a), rng.tensor(b)},
      [axis](std::span<Tensor> in) { return concat(in, axis); }, out);
}

GradCheckResult slice_case(Rng& rng) {
  Shape s{rng.integer(1, 3), rng.integer(2, 6), rng.integer(1, 3)};
  const std::size_t begin = rng.integer(0, s[1] - 1);
  const std::size_t end = rng.integer(begin + 1, s[1]);
  Shape out = s;
  out[1] = end - begin;
  return check_with_probe(
      rng, {rng.tensor(s)},
      [=](std::span<Tensor> in) { return slice(in[0], 1, begin, end); }, out);
}

GradCheckResult gather_case(Rng& rng) {
  Shape s{rng.integer(2, 5), rng.integer(1, 4)};
  std::vector<std::size_t> rows(rng.integer(1, 6));
  for (auto& r : rows) r = rng.integer(0, s[0] - 1);
  return check_with_probe(
      rng, {rng.tensor(s)},
      [rows](std::span<Tensor> in) { return gather_rows(in[0], rows); },
      {rows.size(), s[1]});
}

GradCheckResult reshape_case(Rng& rng) {
  Shape s{rng.integer(1, 4), rng.integer(1, 4), rng.integer(1, 4)};
  const std::size_t n = shape_numel(s);
  return check_with_probe(
      rng, {rng.tensor(s)},
      [s, n](std::span<Tensor> in) {
        Tensor a = reshape(in[0], {n});
        Tensor b = reshape(a, {s[2], s[0] * s[1]});
        return reshape(b, {s[1], s[2], s[0]});
      },
      {s[1], s[2], s[0]});
}

GradCheckResult projection_case(Rng& rng) {
  const std::size_t depth = rng.integer(1, 3);
  Shape s{rng.integer(1, 2), depth * rng.integer(1, 3), rng.integer(1, 3), rng.integer(1, 3)};
  return check_with_probe(
      rng, {rng.tensor(s)},
      [depth](std::span<Tensor> in) { return pt2d(pt3d(in[0], depth)); }, s);
}

GradCheckResult gap_case(Rng& rng) {
  Shape s{rng.integer(1, 3), rng.integer(1, 3), rng.integer(1, 4), rng.integer(1, 4)};
  return check_with_probe(
      rng, {rng.tensor(s)},
      [](std::span<Tensor> in) { return global_avg_pool(in[0]); }, {s[0], s[1]});
}

GradCheckResult fc_case(Rng& rng) {
  const std::size_t b = rng.integer(1, 4), in_f = rng.integer(1, 5), out_f = rng.integer(1, 4);
  return check_with_probe(
      rng, {rng.tensor({b, in_f}), rng.tensor({out_f, in_f}), rng.tensor({out_f})},
      [](std::span<Tensor> in) { return fully_connected(in[0], in[1], in[2]); },
      {b, out_f});
}

GradCheckResult l2_case(Rng& rng) {
  Shape s{rng.integer(1, 4), rng.integer(2, 6)};
  return check_with_probe(
      rng, {rng.away_from_zero(s)},
      [](std::span<Tensor> in) { return l2_normalize(in[0]); }, s);
}

GradCheckResult ce_case(Rng& rng) {
  const std::size_t b = rng.integer(1, 4), classes = rng.integer(2, 6);
  std::vector<std::size_t> targets(b);
  for (auto& t : targets) t = rng.integer(0, classes - 1);
  std::vector<Tensor> inputs{rng.tensor({b, classes}, -2.0, 2.0)};
  auto fn = [&]() { return softmax_cross_entropy(inputs[0], targets); };
  GradCheckOptions opts;
  opts.seed = rng.engine();
  return check_gradients(fn, inputs, opts);
}

GradCheckResult pairwise_case(Rng& rng) {
  Shape s{rng.integer(2, 5), rng.integer(1, 4)};
  return check_with_probe(
      rng, {rng.tensor(s)},
      [](std::span<Tensor> in) { return pairwise_sq_distance(in[0]); }, {s[0], s[0]});
}

GradCheckResult hinge_case(Rng& rng) {
  const std::size_t n = rng.integer(3, 6);
  const double margin = rng.real(0.0, 0.5);
  // Resample until every pre-hinge value sits away from the kink.
  for (;;) {
    Tensor d = rng.tensor({n, n}, 0.0, 2.0);
    std::vector<HingeTriple> triples(rng.integer(1, 6));
    for (auto& t : triples) t = {rng.integer(0, n - 1), rng.integer(0, n - 1), rng.integer(0, n - 1)};
    bool clear = true;
    for (const auto& t : triples) {
      const double v = margin + d.at(t.anchor * n + t.positive) - d.at(t.anchor * n + t.negative);
      clear = clear && std::abs(v) > 1e-3;
    }
    if (!clear) continue;
    std::vector<Tensor> inputs{d};
    auto fn = [&]() { return hinge_sum(inputs[0], triples, margin); };
    GradCheckOptions opts;
    opts.seed = rng.engine();
    return check_gradients(fn, inputs, opts);
  }
}

MTMFEConfig micro_config() {
  MTMFEConfig c;
  c.image_channels = 3;
  c.image_height = 8;
  c.image_width = 6;
  c.backbone_channels = {4, 4, 4};
  c.backbone_strides = {1, 1, 1};
  c.appearance1_channels = 4;
  c.appearance2_channels = 4;
  c.depth = 2;
  c.relation_groups = 2;
  c.level2_stride = 2;
  c.num_parts = 2;
  c.num_identities = 2;
  c.embed_dim = 3;
  return c;
}

GradCheckResult network_case(Rng& rng) {
  const MTMFEConfig config = micro_config();
  Network net(config, rng.engine());
  // Small positive biases keep most units away from the ReLU kink.
  for (auto& p : net.params().named()) {
    if (p.name.ends_with(".bias")) {
      for (double& v : p.tensor.mutable_data()) v = rng.real(0.05, 0.2);
    }
  }
  Tensor rgb = rng.tensor({2, 3, 8, 6});
  Tensor ir = rng.tensor({2, 3, 8, 6});
  rgb.set_requires_grad(false);
  ir.set_requires_grad(false);
  auto fn = [&]() {
    FeatureBundle b = net.forward(rgb, ir);
    Tensor total = sum(b.parts[0]);
    for (std::size_t i = 1; i < b.parts.size(); ++i) total = add(total, sum(b.parts[i]));
    for (const auto& l : b.logits) total = add(total, sum(l));
    return total;
  };
  std::vector<Tensor> params;
  for (const auto& p : net.params().named()) params.push_back(p.tensor);
  GradCheckOptions opts;
  opts.max_elements_per_input = 6;
  opts.kink_tolerance = 1e-3;
  opts.seed = rng.engine();
  return check_gradients(fn, params, opts);
}

}  // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(std::uint64_t seed, std::size_t reps) {
  const std::vector<std::pair<std::string, Case>> cases = {
      {"conv2d", conv2d_case},
      {"conv3d", conv3d_case},
      {"relu", relu_case},
      {"add", add_case},
      {"concat", concat_case},
      {"slice", slice_case},
      {"gather_rows", gather_case},
      {"reshape", reshape_case},
      {"pt3d_pt2d", projection_case},
      {"global_avg_pool", gap_case},
      {"fully_connected", fc_case},
      {"l2_normalize", l2_case},
      {"softmax_cross_entropy", ce_case},
      {"pairwise_sq_distance", pairwise_case},
      {"hinge_sum", hinge_case},
  };
  std::vector<GradSuiteEntry> out;
  Rng rng(seed);
  for (const auto& [name, fn] : cases) {
    GradSuiteEntry entry{name, kOpTolerance, {}};
    for (std::size_t r = 0; r < reps; ++r) entry.result = merge(entry.result, fn(rng));
    out.push_back(std::move(entry));
  }
  GradSuiteEntry net{"mtmfe_network", kNetworkTolerance, {}};
  for (std::size_t r = 0; r < 3; ++r) net.result = merge(net.result, network_case(rng));
  out.push_back(std::move(net));
  return out;
}

}  // namespace xmodal
