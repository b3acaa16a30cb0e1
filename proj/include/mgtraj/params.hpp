#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mgtraj/rng.hpp"
#include "mgtraj/tensor.hpp"

namespace mgtraj::nn {

// A named trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

// Owns parameters in a stable insertion order; that order defines checkpoint
// layout and optimizer iteration, so it must be deterministic.
class ParamSet {
 public:
  Param& add(std::string name, std::vector<std::size_t> shape) {
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->value = Tensor(shape);
    p->grad = Tensor(shape);
    owned_.push_back(std::move(p));
    return *owned_.back();
  }

  Param* find(std::string_view name) {
    for (auto& p : owned_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::vector<Param*> all() const {
    std::vector<Param*> out;
    out.reserve(owned_.size());
    for (auto& p : owned_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return owned_.size(); }

 private:
  std::vector<std::unique_ptr<Param>> owned_;
};

inline void fill_normal(Param& p, Rng& rng, double sd) {
  for (double& v : p.value.data) v = rng.normal(0.0, sd);
}

}  // namespace mgtraj::nn
