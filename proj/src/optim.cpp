#include "mgtraj/optim.hpp"

#include <cmath>

#include "mgtraj/common.hpp"

namespace mgtraj::nn {

void adam_step(AdamSlot& slot, Tensor& value, const Tensor& grad, const AdamConfig& cfg,
               std::string_view param_name) {
  check_same_shape(value, grad, "adam_step");
  if (slot.m.numel() == 0) {
    slot.m = Tensor(value.shape);
    slot.v = Tensor(value.shape);
  }
  if (!grad.all_finite()) {
    throw NumericError("adam_step: non-finite gradient for parameter '" +
                       std::string(param_name) + "'");
  }
  slot.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
  for (std::size_t i = 0; i < value.numel(); ++i) {
    const double g = grad[i];
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(std::vector<Param*> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)), slots_(params_.size()) {}

void Adam::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(slots_[i], params_[i]->value, params_[i]->grad, cfg_, params_[i]->name);
  }
}

}  // namespace mgtraj::nn
