#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "mgtraj/params.hpp"
#include "mgtraj/tensor.hpp"

namespace mgtraj::nn {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape over whole tensors. Build a computation by
// chaining ops, call backward() on a scalar, and gradients accumulate into
// the Param objects introduced with param(). Subgraphs that depend only on
// constant/frozen leaves skip backward bookkeeping entirely, so the same code
// path doubles as a fast inference engine.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor& val(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;
  const Tensor& grad_of(Var v) const;  // valid after backward(); throws if absent
  std::size_t size() const { return nodes_.size(); }

  // Leaves.
  Var constant(Tensor t);
  Var zeros(std::vector<std::size_t> shape);
  Var param(Param& p);        // trainable; one node per Param, cached
  Var frozen(const Param& p); // value participates, gradient does not

  // Core ops. Matrix-typed inputs are interpreted as [rows x cols].
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_rowvec(Var a, Var bias);  // a:[m x n] + bias:[n] per row
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);

  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  // ln(clamp(a, lo, hi)); gradient is zero in the clamped regions. Keeps
  // probability logs finite when sigmoids/softmaxes saturate.
  Var log_clamped(Var a, double lo = 1e-12, double hi = 1.0 - 1e-12);

  // Row-stable softmax (max subtraction). NaN input throws NumericError.
  Var softmax_rows(Var a);

  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<std::size_t> idx);
  // out[r] = a[r, ids[r]] as an [m x 1] column.
  Var gather_cols_per_row(Var a, std::vector<std::size_t> ids);
  Var rowwise_dot(Var a, Var b);  // [m x 1]

  // Attention pooling: weights [B x N] combine features viewed as [B x N x F]
  // (features passed as an [B*N x F] tensor) into [B x F].
  Var attend(Var weights, Var features, std::size_t n_cells);

  // Segmented ops for ragged neighbor sets. seg[i] gives the destination row
  // (0..n_segments-1) of flat element i; segments may be empty.
  Var segment_softmax(Var scores, const std::vector<std::size_t>& seg, std::size_t n_segments);
  Var segment_weighted_sum(Var weights, Var features, const std::vector<std::size_t>& seg,
                           std::size_t n_segments);

  // 3x3 same-padding convolution, NHWC layout, plus bias.
  Var conv3x3_same(Var x, Var w, Var bias);
  Var maxpool2x2(Var x);

  Var reshape(Var a, std::vector<std::size_t> new_shape);
  Var mean_all(Var a);
  Var sum_all(Var a);

  // Mean-over-timesteps Euclidean distance between predicted and target
  // positions. Rows hold T points as (x1,y1,...,xT,yT); result is [m x 1].
  Var traj_ade(Var pred, const Tensor& target);

  // Backprop from a scalar node. Accumulates into Param::grad for every
  // param() leaf reached. Throws NumericError if a non-finite gradient or
  // value is encountered.
  void backward(Var loss);

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // lazily allocated
    std::function<void(Tape&, int)> back;
    bool rg = false;
  };

  int push_value(Tensor val);
  int push_op(Tensor val, bool rg, std::function<void(Tape&, int)> back);
  Tensor& ensure_grad(int id);
  bool has_grad(int id) const { return nodes_[id].grad.numel() != 0; }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_leaves_;
  std::unordered_map<const Param*, int> param_cache_;
};

// Composed LSTM cell. Weight layout: wx [in x 4H], wh [H x 4H], b [4H] with
// gate blocks ordered (input, forget, output, candidate).
struct LstmVars {
  Var wx;
  Var wh;
  Var b;
  std::size_t hidden = 0;
};

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_cell(Tape& tp, const LstmVars& p, Var x, LstmState s);

}  // namespace mgtraj::nn
