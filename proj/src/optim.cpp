#include "xmodal/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace xmodal {

std::string_view group_name(ParamGroup group) {
  return group == ParamGroup::kModalitySpecific ? "modality_specific"
                                                : "shared";
}

double scheduled_lr(double base, double decay_factor, int decay_every,
                    int epoch) {
  if (decay_every <= 0) return base;
  return base * std::pow(decay_factor, epoch / decay_every);
}

Sgd::Sgd(double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  if (momentum < 0.0 || weight_decay < 0.0) {
    throw std::invalid_argument("momentum and weight decay must be >= 0");
  }
}

void Sgd::step(std::span<const NamedParameter> params,
               const LearningRates& lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::runtime_error("parameter '" + p.name +
                               "' has no gradient at optimizer step");
    }
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto data = t.mutable_data();
    auto grad = t.grad();
    auto& v = velocity_[p.name];
    if (v.size() != data.size()) v.assign(data.size(), 0.0);
    const double rate = lr.for_group(p.group);
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * data[i];
      data[i] -= rate * v[i];
    }
    detail::check_finite(data, "sgd step");
  }
}

void Sgd::zero_grad(std::span<const NamedParameter> params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

}  // namespace xmodal
