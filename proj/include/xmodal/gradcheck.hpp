#ifndef XMODAL_GRADCHECK_HPP_
#define XMODAL_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error; keeps near-zero gradients
  // from turning round-off into huge relative errors.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise a seeded random subset per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
  // When > 0, elements whose one-sided differences disagree by more than
  // this relative amount straddle a non-differentiable point (a ReLU
  // kink) and are skipped instead of compared.
  double kink_tolerance = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t elements_checked = 0;
  std::size_t elements_skipped = 0;
  std::string worst_location;
};

/// Compares reverse-mode gradients of `loss_fn` w.r.t. each input against
/// central finite differences. relerr = |a - n| / max(|a|, |n|, abs_floor).
/// `loss_fn` must rebuild the graph from the current input values.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                std::span<Tensor> inputs,
                                const GradCheckOptions& options = {});

struct GradSuiteEntry {
  std::string name;
  double tolerance;
  GradCheckResult result;
  bool passed() const { return result.max_rel_error <= tolerance; }
};

/// Finite-difference checks for every differentiable op (>= `reps` random
/// shapes each, tolerance 1e-4) and the end-to-end micro network
/// (tolerance 1e-3).
std::vector<GradSuiteEntry> run_gradcheck_suite(std::uint64_t seed,
                                                std::size_t reps = 20);

}  // namespace xmodal

#endif  // XMODAL_GRADCHECK_HPP_
