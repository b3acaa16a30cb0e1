#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mgtraj/common.hpp"

namespace mgtraj::nn {

// Dense row-major tensor of doubles. All neural-net math runs in 64-bit;
// checkpoints narrow to 32-bit on disk only.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor scalar(double v);
  static Tensor row(std::initializer_list<double> vals);
  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> vals);

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  // Leading dimension and collapsed trailing size; most ops view tensors as
  // [rows x cols] matrices.
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.empty() ? numel() : numel() / shape[0]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at2(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at2(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void fill(double v);
  std::string shape_str() const;
};

std::string shape_str(const std::vector<std::size_t>& s);

// Throws DimensionError naming both shapes when they differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace mgtraj::nn
