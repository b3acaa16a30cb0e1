#include "mgtraj/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mgtraj::nn {

namespace {
std::size_t numel_of(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> vals) {
  Tensor t({1, vals.size()});
  std::copy(vals.begin(), vals.end(), t.data.begin());
  return t;
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::initializer_list<double> vals) {
  Tensor t({r, c});
  if (vals.size() != r * c) throw DimensionError("Tensor::matrix: initializer size mismatch");
  std::copy(vals.begin(), vals.end(), t.data.begin());
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

std::string Tensor::shape_str() const { return nn::shape_str(shape); }

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << 'x';
    out << s[i];
  }
  out << ']';
  return out.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace mgtraj::nn
