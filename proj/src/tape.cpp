#include "mgtraj/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "mgtraj/common.hpp"

namespace mgtraj::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;
using ArrX = Eigen::Map<Eigen::ArrayXd>;
using ArrXC = Eigen::Map<const Eigen::ArrayXd>;

MapM as_mat(Tensor& t, std::size_t r, std::size_t c) {
  return MapM(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapC as_mat(const Tensor& t, std::size_t r, std::size_t c) {
  return MapC(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ArrX as_arr(Tensor& t) { return ArrX(t.data.data(), static_cast<Eigen::Index>(t.numel())); }
ArrXC as_arr(const Tensor& t) {
  return ArrXC(t.data.data(), static_cast<Eigen::Index>(t.numel()));
}

}  // namespace

const Tensor& Tape::val(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).val; }

double Tape::scalar(Var v) const {
  const Tensor& t = val(v);
  if (t.numel() != 1) throw DimensionError("Tape::scalar: node is not scalar " + t.shape_str());
  return t.data[0];
}

bool Tape::requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).rg; }

const Tensor& Tape::grad_of(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.numel() == 0) throw NumericError("Tape::grad_of: gradient was never written");
  return n.grad;
}

int Tape::push_value(Tensor val) {
  nodes_.push_back(Node{std::move(val), Tensor{}, nullptr, false});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::push_op(Tensor val, bool rg, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.rg = rg;
  if (rg) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.numel() == 0) n.grad = Tensor(n.val.shape);
  return n.grad;
}

Var Tape::constant(Tensor t) { return Var{push_value(std::move(t))}; }

Var Tape::zeros(std::vector<std::size_t> shape) { return constant(Tensor(std::move(shape))); }

Var Tape::param(Param& p) {
  auto it = param_cache_.find(&p);
  if (it != param_cache_.end()) return Var{it->second};
  int id = push_value(p.value);
  nodes_[static_cast<std::size_t>(id)].rg = true;
  param_leaves_.emplace_back(id, &p);
  param_cache_.emplace(&p, id);
  return Var{id};
}

Var Tape::frozen(const Param& p) { return constant(p.value); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  const std::size_t m = ta.rows(), k = ta.cols(), k2 = tb.rows(), n = tb.cols();
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ " + ta.shape_str() + " vs " +
                         tb.shape_str());
  }
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(ta, m, k) * as_mat(tb, k, n);
  const bool rg = requires_grad(a) || requires_grad(b);
  return Var{push_op(std::move(out), rg, [a = a.id, b = b.id, m, k, n](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    auto gm = as_mat(g, m, n);
    if (tp.nodes_[a].rg) {
      as_mat(tp.ensure_grad(a), m, k).noalias() += gm * as_mat(tp.nodes_[b].val, k, n).transpose();
    }
    if (tp.nodes_[b].rg) {
      as_mat(tp.ensure_grad(b), k, n).noalias() +=
          as_mat(tp.nodes_[a].val, m, k).transpose() * gm;
    }
  })};
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "add");
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta) + as_arr(tb);
  const bool rg = requires_grad(a) || requires_grad(b);
  return Var{push_op(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    if (tp.nodes_[a].rg) as_arr(tp.ensure_grad(a)) += as_arr(g);
    if (tp.nodes_[b].rg) as_arr(tp.ensure_grad(b)) += as_arr(g);
  })};
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "sub");
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta) - as_arr(tb);
  const bool rg = requires_grad(a) || requires_grad(b);
  return Var{push_op(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    if (tp.nodes_[a].rg) as_arr(tp.ensure_grad(a)) += as_arr(g);
    if (tp.nodes_[b].rg) as_arr(tp.ensure_grad(b)) -= as_arr(g);
  })};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "mul");
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta) * as_arr(tb);
  const bool rg = requires_grad(a) || requires_grad(b);
  return Var{push_op(std::move(out), rg, [a = a.id, b = b.id](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    if (tp.nodes_[a].rg) as_arr(tp.ensure_grad(a)) += as_arr(g) * as_arr(tp.nodes_[b].val);
    if (tp.nodes_[b].rg) as_arr(tp.ensure_grad(b)) += as_arr(g) * as_arr(tp.nodes_[a].val);
  })};
}

Var Tape::add_rowvec(Var a, Var bias) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(bias);
  const std::size_t m = ta.rows(), n = ta.cols();
  if (tb.numel() != n) {
    throw DimensionError("add_rowvec: bias " + tb.shape_str() + " does not match row width of " +
                         ta.shape_str());
  }
  Tensor out(ta.shape);
  auto om = as_mat(out, m, n);
  om = as_mat(ta, m, n);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tb.data.data(),
                                                       static_cast<Eigen::Index>(n));
  const bool rg = requires_grad(a) || requires_grad(bias);
  return Var{push_op(std::move(out), rg, [a = a.id, b = bias.id, m, n](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    auto gm = as_mat(g, m, n);
    if (tp.nodes_[a].rg) as_mat(tp.ensure_grad(a), m, n) += gm;
    if (tp.nodes_[b].rg) {
      Eigen::Map<Eigen::RowVectorXd>(tp.ensure_grad(b).data.data(),
                                     static_cast<Eigen::Index>(n)) += gm.colwise().sum();
    }
  })};
}

Var Tape::scale(Var a, double s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta) * s;
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, s](Tape& tp, int self) {
    if (tp.nodes_[a].rg) as_arr(tp.ensure_grad(a)) += as_arr(tp.nodes_[self].grad) * s;
  })};
}

Var Tape::add_scalar(Var a, double s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta) + s;
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (tp.nodes_[a].rg) as_arr(tp.ensure_grad(a)) += as_arr(tp.nodes_[self].grad);
  })};
}

Var Tape::sigmoid(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  as_arr(out) = 1.0 / (1.0 + (-as_arr(ta)).exp());
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    auto y = as_arr(tp.nodes_[self].val);
    as_arr(tp.ensure_grad(a)) += as_arr(tp.nodes_[self].grad) * y * (1.0 - y);
  })};
}

Var Tape::tanh_(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta).tanh();
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    auto y = as_arr(tp.nodes_[self].val);
    as_arr(tp.ensure_grad(a)) += as_arr(tp.nodes_[self].grad) * (1.0 - y * y);
  })};
}

Var Tape::relu(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  as_arr(out) = as_arr(ta).max(0.0);
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    auto x = as_arr(tp.nodes_[a].val);
    as_arr(tp.ensure_grad(a)) +=
        as_arr(tp.nodes_[self].grad) * (x > 0.0).cast<double>();
  })};
}

Var Tape::leaky_relu(Var a, double slope) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  auto x = as_arr(ta);
  as_arr(out) = (x > 0.0).select(x, x * slope);
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, slope](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    auto x = as_arr(tp.nodes_[a].val);
    as_arr(tp.ensure_grad(a)) +=
        as_arr(tp.nodes_[self].grad) * (x > 0.0).select(Eigen::ArrayXd::Ones(x.size()),
                                                        Eigen::ArrayXd::Constant(x.size(), slope));
  })};
}

Var Tape::log_clamped(Var a, double lo, double hi) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.numel(); ++i) {
    const double x = ta[i];
    if (std::isnan(x)) throw NumericError("log_clamped: NaN input");
    out[i] = std::log(std::min(std::max(x, lo), hi));
  }
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, lo, hi](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& x = tp.nodes_[a].val;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > lo && x[i] < hi) ga[i] += g[i] / x[i];
    }
  })};
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = val(a);
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out(ta.shape);
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = ta.data.data() + r * n;
    double* y = out.data.data() + r * n;
    double mx = x[0];
    for (std::size_t c = 0; c < n; ++c) {
      if (std::isnan(x[c])) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, x[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < n; ++c) y[c] /= sum;
  }
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, m, n](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& y = tp.nodes_[self].val;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t r = 0; r < m; ++r) {
      const double* yr = y.data.data() + r * n;
      const double* gr = g.data.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
      double* gar = ga.data.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) gar[c] += yr[c] * (gr[c] - dot);
    }
  })};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = val(parts[0]).rows();
  std::size_t n = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + val(parts[0]).shape_str() + " vs " +
                           val(p).shape_str());
    }
    n += val(p).cols();
    rg = rg || requires_grad(p);
  }
  Tensor out({m, n});
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& tp_ = val(p);
    const std::size_t w = tp_.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(tp_.data.data() + r * w, w, out.data.data() + r * n + off);
    }
    ids.push_back(p.id);
    widths.push_back(w);
    off += w;
  }
  return Var{push_op(std::move(out), rg,
                     [ids = std::move(ids), widths = std::move(widths), m, n](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t w = widths[i];
      if (tp.nodes_[ids[i]].rg) {
        Tensor& ga = tp.ensure_grad(ids[i]);
        for (std::size_t r = 0; r < m; ++r) {
          double* dst = ga.data.data() + r * w;
          const double* src = g.data.data() + r * n + off;
          for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
        }
      }
      off += w;
    }
  })};
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = val(a);
  const std::size_t m = ta.rows(), n = ta.cols();
  if (c0 >= c1 || c1 > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + ta.shape_str());
  }
  const std::size_t w = c1 - c0;
  Tensor out({m, w});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(ta.data.data() + r * n + c0, w, out.data.data() + r * w);
  }
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, c0, w, m, n](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t r = 0; r < m; ++r) {
      double* dst = ga.data.data() + r * n + c0;
      const double* src = g.data.data() + r * w;
      for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
    }
  })};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = val(parts[0]).cols();
  std::size_t m = 0;
  bool rg = false;
  for (Var p : parts) {
    if (val(p).cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + val(parts[0]).shape_str() + " vs " +
                           val(p).shape_str());
    }
    m += val(p).rows();
    rg = rg || requires_grad(p);
  }
  Tensor out({m, n});
  std::vector<int> ids;
  std::vector<std::size_t> heights;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& tp_ = val(p);
    std::copy(tp_.data.begin(), tp_.data.end(), out.data.begin() + off * n);
    ids.push_back(p.id);
    heights.push_back(tp_.rows());
    off += tp_.rows();
  }
  return Var{push_op(std::move(out), rg,
                     [ids = std::move(ids), heights = std::move(heights), n](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.nodes_[ids[i]].rg) {
        Tensor& ga = tp.ensure_grad(ids[i]);
        const double* src = g.data.data() + off * n;
        for (std::size_t j = 0; j < heights[i] * n; ++j) ga[j] += src[j];
      }
      off += heights[i];
    }
  })};
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& ta = val(a);
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out({idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw DimensionError("gather_rows: index out of range");
    std::copy_n(ta.data.data() + idx[r] * n, n, out.data.data() + r * n);
  }
  return Var{push_op(std::move(out), requires_grad(a),
                     [a = a.id, idx = std::move(idx), n](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = ga.data.data() + idx[r] * n;
      const double* src = g.data.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
  })};
}

Var Tape::gather_cols_per_row(Var a, std::vector<std::size_t> ids) {
  const Tensor& ta = val(a);
  const std::size_t m = ta.rows(), n = ta.cols();
  if (ids.size() != m) throw DimensionError("gather_cols_per_row: ids size != rows");
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    if (ids[r] >= n) throw DimensionError("gather_cols_per_row: column index out of range");
    out[r] = ta.data[r * n + ids[r]];
  }
  return Var{push_op(std::move(out), requires_grad(a),
                     [a = a.id, ids = std::move(ids), n](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t r = 0; r < ids.size(); ++r) ga.data[r * n + ids[r]] += g[r];
  })};
}

Var Tape::rowwise_dot(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  check_same_shape(ta, tb, "rowwise_dot");
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += ta.data[r * n + c] * tb.data[r * n + c];
    out[r] = s;
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return Var{push_op(std::move(out), rg, [a = a.id, b = b.id, m, n](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g[r];
      if (tp.nodes_[a].rg) {
        double* ga = tp.ensure_grad(a).data.data() + r * n;
        const double* bv = tp.nodes_[b].val.data.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) ga[c] += gr * bv[c];
      }
      if (tp.nodes_[b].rg) {
        double* gb = tp.ensure_grad(b).data.data() + r * n;
        const double* av = tp.nodes_[a].val.data.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) gb[c] += gr * av[c];
      }
    }
  })};
}

Var Tape::attend(Var weights, Var features, std::size_t n_cells) {
  const Tensor& tw = val(weights);
  const Tensor& tf = val(features);
  const std::size_t b = tw.rows();
  if (tw.cols() != n_cells || tf.rows() != b * n_cells) {
    throw DimensionError("attend: weights " + tw.shape_str() + " vs features " + tf.shape_str() +
                         " with n_cells " + std::to_string(n_cells));
  }
  const std::size_t f = tf.cols();
  Tensor out({b, f});
  for (std::size_t i = 0; i < b; ++i) {
    double* dst = out.data.data() + i * f;
    for (std::size_t c = 0; c < n_cells; ++c) {
      const double w = tw.data[i * n_cells + c];
      const double* src = tf.data.data() + (i * n_cells + c) * f;
      for (std::size_t j = 0; j < f; ++j) dst[j] += w * src[j];
    }
  }
  const bool rg = requires_grad(weights) || requires_grad(features);
  return Var{push_op(std::move(out), rg,
                     [w = weights.id, ft = features.id, b, n_cells, f](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    for (std::size_t i = 0; i < b; ++i) {
      const double* gr = g.data.data() + i * f;
      for (std::size_t c = 0; c < n_cells; ++c) {
        const double* fv = tp.nodes_[ft].val.data.data() + (i * n_cells + c) * f;
        if (tp.nodes_[w].rg) {
          double s = 0.0;
          for (std::size_t j = 0; j < f; ++j) s += gr[j] * fv[j];
          tp.ensure_grad(w).data[i * n_cells + c] += s;
        }
        if (tp.nodes_[ft].rg) {
          const double wv = tp.nodes_[w].val.data[i * n_cells + c];
          double* gf = tp.ensure_grad(ft).data.data() + (i * n_cells + c) * f;
          for (std::size_t j = 0; j < f; ++j) gf[j] += wv * gr[j];
        }
      }
    }
  })};
}

Var Tape::segment_softmax(Var scores, const std::vector<std::size_t>& seg,
                          std::size_t n_segments) {
  const Tensor& ts = val(scores);
  const std::size_t nn = ts.numel();
  if (seg.size() != nn) throw DimensionError("segment_softmax: seg size != scores size");
  std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nn; ++i) {
    if (std::isnan(ts[i])) throw NumericError("segment_softmax: NaN input");
    mx[seg[i]] = std::max(mx[seg[i]], ts[i]);
  }
  Tensor out(ts.shape);
  std::vector<double> sum(n_segments, 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    out[i] = std::exp(ts[i] - mx[seg[i]]);
    sum[seg[i]] += out[i];
  }
  for (std::size_t i = 0; i < nn; ++i) out[i] /= sum[seg[i]];
  return Var{push_op(std::move(out), requires_grad(scores),
                     [a = scores.id, seg, n_segments](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& y = tp.nodes_[self].val;
    const Tensor& g = tp.nodes_[self].grad;
    std::vector<double> dot(n_segments, 0.0);
    for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += y[i] * g[i];
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t i = 0; i < seg.size(); ++i) ga[i] += y[i] * (g[i] - dot[seg[i]]);
  })};
}

Var Tape::segment_weighted_sum(Var weights, Var features, const std::vector<std::size_t>& seg,
                               std::size_t n_segments) {
  const Tensor& tw = val(weights);
  const Tensor& tf = val(features);
  const std::size_t nn = tw.numel();
  if (seg.size() != nn || tf.rows() != nn) {
    throw DimensionError("segment_weighted_sum: inconsistent sizes");
  }
  const std::size_t f = tf.cols();
  Tensor out({n_segments, f});
  for (std::size_t i = 0; i < nn; ++i) {
    double* dst = out.data.data() + seg[i] * f;
    const double* src = tf.data.data() + i * f;
    for (std::size_t j = 0; j < f; ++j) dst[j] += tw[i] * src[j];
  }
  const bool rg = requires_grad(weights) || requires_grad(features);
  return Var{push_op(std::move(out), rg,
                     [w = weights.id, ft = features.id, seg, f](Tape& tp, int self) {
    const Tensor& g = tp.nodes_[self].grad;
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const double* gr = g.data.data() + seg[i] * f;
      if (tp.nodes_[w].rg) {
        const double* fv = tp.nodes_[ft].val.data.data() + i * f;
        double s = 0.0;
        for (std::size_t j = 0; j < f; ++j) s += gr[j] * fv[j];
        tp.ensure_grad(w).data[i] += s;
      }
      if (tp.nodes_[ft].rg) {
        const double wv = tp.nodes_[w].val.data[i];
        double* gf = tp.ensure_grad(ft).data.data() + i * f;
        for (std::size_t j = 0; j < f; ++j) gf[j] += wv * gr[j];
      }
    }
  })};
}

namespace {
// im2col for 3x3 same padding: cols[(b*H*W + y*W + x), (k*C + ch)]
Tensor build_cols(const Tensor& x, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
  Tensor cols({b * h * w, 9 * c});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double* dst = cols.data.data() + ((bi * h + y) * w + xx) * 9 * c;
        for (int ky = -1; ky <= 1; ++ky) {
          for (int kx = -1; kx <= 1; ++kx) {
            const long sy = static_cast<long>(y) + ky;
            const long sx = static_cast<long>(xx) + kx;
            if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w)) {
              const double* src =
                  x.data.data() + ((bi * h + static_cast<std::size_t>(sy)) * w +
                                   static_cast<std::size_t>(sx)) * c;
              std::copy_n(src, c, dst);
            }
            dst += c;
          }
        }
      }
    }
  }
  return cols;
}
}  // namespace

Var Tape::conv3x3_same(Var x, Var w, Var bias) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(bias);
  if (tx.ndim() != 4 || tw.ndim() != 4 || tw.shape[0] != 3 || tw.shape[1] != 3) {
    throw DimensionError("conv3x3_same: expected x [BxHxWxC] and w [3x3xCxK], got " +
                         tx.shape_str() + " and " + tw.shape_str());
  }
  const std::size_t b = tx.shape[0], h = tx.shape[1], ww = tx.shape[2], c = tx.shape[3];
  const std::size_t k = tw.shape[3];
  if (tw.shape[2] != c || tb.numel() != k) {
    throw DimensionError("conv3x3_same: channel mismatch x " + tx.shape_str() + " w " +
                         tw.shape_str());
  }
  Tensor cols = build_cols(tx, b, h, ww, c);
  Tensor out({b, h, ww, k});
  {
    auto om = as_mat(out, b * h * ww, k);
    om.noalias() = as_mat(cols, b * h * ww, 9 * c) * as_mat(tw, 9 * c, k);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tb.data.data(),
                                                         static_cast<Eigen::Index>(k));
  }
  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(bias);
  return Var{push_op(
      std::move(out), rg,
      [x = x.id, w = w.id, bs = bias.id, cols = std::move(cols), b, h, ww, c, k](Tape& tp,
                                                                                 int self) {
        const Tensor& g = tp.nodes_[self].grad;
        auto gm = as_mat(g, b * h * ww, k);
        if (tp.nodes_[w].rg) {
          as_mat(tp.ensure_grad(w), 9 * c, k).noalias() +=
              as_mat(cols, b * h * ww, 9 * c).transpose() * gm;
        }
        if (tp.nodes_[bs].rg) {
          Eigen::Map<Eigen::RowVectorXd>(tp.ensure_grad(bs).data.data(),
                                         static_cast<Eigen::Index>(k)) += gm.colwise().sum();
        }
        if (tp.nodes_[x].rg) {
          Tensor dcols({b * h * ww, 9 * c});
          as_mat(dcols, b * h * ww, 9 * c).noalias() =
              gm * as_mat(tp.nodes_[w].val, 9 * c, k).transpose();
          Tensor& gx = tp.ensure_grad(x);
          for (std::size_t bi = 0; bi < b; ++bi) {
            for (std::size_t y = 0; y < h; ++y) {
              for (std::size_t xx = 0; xx < ww; ++xx) {
                const double* src = dcols.data.data() + ((bi * h + y) * ww + xx) * 9 * c;
                for (int ky = -1; ky <= 1; ++ky) {
                  for (int kx = -1; kx <= 1; ++kx) {
                    const long sy = static_cast<long>(y) + ky;
                    const long sx = static_cast<long>(xx) + kx;
                    if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 &&
                        sx < static_cast<long>(ww)) {
                      double* dst =
                          gx.data.data() + ((bi * h + static_cast<std::size_t>(sy)) * ww +
                                            static_cast<std::size_t>(sx)) * c;
                      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                    src += c;
                  }
                }
              }
            }
          }
        }
      })};
}

Var Tape::maxpool2x2(Var x) {
  const Tensor& tx = val(x);
  if (tx.ndim() != 4 || tx.shape[1] % 2 != 0 || tx.shape[2] % 2 != 0) {
    throw DimensionError("maxpool2x2: expected [BxHxWxC] with even H,W, got " + tx.shape_str());
  }
  const std::size_t b = tx.shape[0], h = tx.shape[1], w = tx.shape[2], c = tx.shape[3];
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({b, ho, wo, c});
  std::vector<std::size_t> arg(out.numel());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((bi * h + 2 * y) * w + 2 * xx) * c + ch;
          double bv = tx.data[best];
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i =
                  ((bi * h + 2 * y + static_cast<std::size_t>(dy)) * w + 2 * xx +
                   static_cast<std::size_t>(dx)) * c + ch;
              if (tx.data[i] > bv) {
                bv = tx.data[i];
                best = i;
              }
            }
          }
          const std::size_t o = ((bi * ho + y) * wo + xx) * c + ch;
          out.data[o] = bv;
          arg[o] = best;
        }
      }
    }
  }
  return Var{push_op(std::move(out), requires_grad(x),
                     [x = x.id, arg = std::move(arg)](Tape& tp, int self) {
    if (!tp.nodes_[x].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& gx = tp.ensure_grad(x);
    for (std::size_t i = 0; i < arg.size(); ++i) gx.data[arg[i]] += g[i];
  })};
}

Var Tape::reshape(Var a, std::vector<std::size_t> new_shape) {
  const Tensor& ta = val(a);
  Tensor out(new_shape);
  if (out.numel() != ta.numel()) {
    throw DimensionError("reshape: element count mismatch " + ta.shape_str() + " vs " +
                         shape_str(new_shape));
  }
  out.data = ta.data;
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    Tensor& ga = tp.ensure_grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  })};
}

Var Tape::mean_all(Var a) {
  const Tensor& ta = val(a);
  const std::size_t n = ta.numel();
  if (n == 0) throw DimensionError("mean_all: empty tensor");
  Tensor out({1});
  out[0] = as_arr(ta).sum() / static_cast<double>(n);
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id, n](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    const double g = tp.nodes_[self].grad[0] / static_cast<double>(n);
    as_arr(tp.ensure_grad(a)) += g;
  })};
}

Var Tape::sum_all(Var a) {
  const Tensor& ta = val(a);
  Tensor out({1});
  out[0] = as_arr(ta).sum();
  return Var{push_op(std::move(out), requires_grad(a), [a = a.id](Tape& tp, int self) {
    if (!tp.nodes_[a].rg) return;
    as_arr(tp.ensure_grad(a)) += tp.nodes_[self].grad[0];
  })};
}

Var Tape::traj_ade(Var pred, const Tensor& target) {
  const Tensor& tp_ = val(pred);
  check_same_shape(tp_, target, "traj_ade");
  const std::size_t m = tp_.rows(), n = tp_.cols();
  if (n % 2 != 0) throw DimensionError("traj_ade: row width must be even, got " + tp_.shape_str());
  const std::size_t t = n / 2;
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t s = 0; s < t; ++s) {
      const double dx = tp_.data[r * n + 2 * s] - target.data[r * n + 2 * s];
      const double dy = tp_.data[r * n + 2 * s + 1] - target.data[r * n + 2 * s + 1];
      acc += std::sqrt(dx * dx + dy * dy);
    }
    out[r] = acc / static_cast<double>(t);
  }
  return Var{push_op(std::move(out), requires_grad(pred),
                     [p = pred.id, target, m, n, t](Tape& tp, int self) {
    if (!tp.nodes_[p].rg) return;
    const Tensor& g = tp.nodes_[self].grad;
    const Tensor& pv = tp.nodes_[p].val;
    Tensor& gp = tp.ensure_grad(p);
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g[r] / static_cast<double>(t);
      for (std::size_t s = 0; s < t; ++s) {
        const double dx = pv.data[r * n + 2 * s] - target.data[r * n + 2 * s];
        const double dy = pv.data[r * n + 2 * s + 1] - target.data[r * n + 2 * s + 1];
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d > 0.0) {
          gp.data[r * n + 2 * s] += gr * dx / d;
          gp.data[r * n + 2 * s + 1] += gr * dy / d;
        }
      }
    }
  })};
}

void Tape::backward(Var loss) {
  const int lid = loss.id;
  if (lid < 0 || lid >= static_cast<int>(nodes_.size())) {
    throw DimensionError("backward: invalid loss node");
  }
  if (nodes_[static_cast<std::size_t>(lid)].val.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got " +
                         nodes_[static_cast<std::size_t>(lid)].val.shape_str());
  }
  if (!std::isfinite(nodes_[static_cast<std::size_t>(lid)].val[0])) {
    throw NumericError("backward: loss value is non-finite");
  }
  ensure_grad(lid)[0] = 1.0;
  for (int i = lid; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.rg && n.back && has_grad(i)) n.back(*this, i);
  }
  for (auto& [id, p] : param_leaves_) {
    if (has_grad(id)) {
      const Tensor& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (!g.all_finite()) {
        throw NumericError("backward: non-finite gradient for parameter '" + p->name + "'");
      }
      for (std::size_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
  }
}

LstmState lstm_cell(Tape& tp, const LstmVars& p, Var x, LstmState s) {
  const std::size_t hh = p.hidden;
  Var gates = tp.add_rowvec(tp.add(tp.matmul(x, p.wx), tp.matmul(s.h, p.wh)), p.b);
  Var gi = tp.sigmoid(tp.slice_cols(gates, 0, hh));
  Var gf = tp.sigmoid(tp.slice_cols(gates, hh, 2 * hh));
  Var go = tp.sigmoid(tp.slice_cols(gates, 2 * hh, 3 * hh));
  Var gc = tp.tanh_(tp.slice_cols(gates, 3 * hh, 4 * hh));
  Var c2 = tp.add(tp.mul(gf, s.c), tp.mul(gi, gc));
  Var h2 = tp.mul(go, tp.tanh_(c2));
  return {h2, c2};
}

}  // namespace mgtraj::nn
