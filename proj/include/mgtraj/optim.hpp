#pragma once

#include <string_view>
#include <vector>

#include "mgtraj/params.hpp"
#include "mgtraj/tensor.hpp"

namespace mgtraj::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment estimates and step counter.
struct AdamSlot {
  Tensor m;
  Tensor v;
  long long t = 0;
};

// One bias-corrected Adam update in place. Throws NumericError naming the
// parameter if the gradient is non-finite. Note a zero gradient still moves
// the value when earlier steps left momentum behind, so callers skip networks
// that saw no data in a step.
void adam_step(AdamSlot& slot, Tensor& value, const Tensor& grad, const AdamConfig& cfg,
               std::string_view param_name);

// Optimizer instance over a fixed parameter group. Networks each get their
// own instance; a parameter listed in two optimizers has independent moment
// state in each.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {});

  void zero_grads();
  void step();

  const AdamConfig& config() const { return cfg_; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  AdamConfig cfg_;
  std::vector<Param*> params_;
  std::vector<AdamSlot> slots_;
};

}  // namespace mgtraj::nn
