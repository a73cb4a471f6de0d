#ifndef XMODAL_OPTIM_HPP_
#define XMODAL_OPTIM_HPP_

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Learning-rate groups: the two modality-specific stems train at one rate,
// everything both modalities traverse trains at another.
enum class ParamGroup { kModalitySpecific, kShared };

std::string_view group_name(ParamGroup group);

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

struct LearningRates {
  double modality_specific = 0.01;
  double shared = 0.1;

  double for_group(ParamGroup group) const {
    return group == ParamGroup::kModalitySpecific ? modality_specific : shared;
  }
};

/// base * decay_factor^floor(epoch / decay_every).
double scheduled_lr(double base, double decay_factor, int decay_every,
                    int epoch);

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay);

  // Throws std::runtime_error naming the parameter if any lacks a gradient.
  void step(std::span<const NamedParameter> params, const LearningRates& lr);

  static void zero_grad(std::span<const NamedParameter> params);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace xmodal

#endif  // XMODAL_OPTIM_HPP_
