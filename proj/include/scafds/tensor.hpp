#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scafds/errors.hpp"

namespace scafds::num {

// All tensors are rank-2 matrices. Column vectors are n x 1, scalars 1 x 1.
struct Shape {
  int rows = 0;
  int cols = 0;
  bool operator==(const Shape&) const = default;
  std::int64_t count() const { return static_cast<std::int64_t>(rows) * cols; }
};

// Storage record for one differentiable tensor. Owned by a Tape.
// grad is allocated lazily on the first backward pass and accumulates for
// leaf tensors until zero_grad(); non-leaf grads are reset by each backward.
struct DiffTensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
};

enum class OpKind : std::uint8_t {
  Add,
  Sub,
  Mul,
  Neg,
  Scale,       // p0 * x
  AddConst,    // x + p0
  MatMul,
  Transpose,
  Sigmoid,
  Tanh,
  Elu,
  LeakyRelu,   // slope p0
  Exp,
  Log,
  PowConst,    // x ^ p0
  ClampMin,    // max(x, p0); activations counted as clamp events
  Sum,
  Mean,
  SoftmaxRows,     // normalize within each row
  SoftmaxCols,     // normalize within each column
  GatherRows,      // aux = row indices
  SegmentSum,      // aux = segment id per row; output rows = segment count
  SegmentSoftmax,  // x is m x 1; softmax within each segment
  SegmentMix,      // out[seg[e], :] += w[e] * x[src[e], :]  (fused gather/scale/scatter)
  ScaleRows,       // x[i, :] * w[i],  w is m x 1
  AddRowVec,       // x[i, :] + b,     b is 1 x d
  ConcatCols,
  SliceRows,       // aux = {lo, hi}
  SliceCols,       // aux = {lo, hi}
  RowDot,          // (a[i, :] . b[i, :]) -> m x 1
};

struct OpNode {
  OpKind kind;
  std::vector<int> inputs;
  int output = -1;
  double p0 = 0.0;
  std::vector<int> aux;
};

// Reverse-mode tape. Records every primitive in execution order; forward
// values are recomputable from leaf values alone via replay(), which runs the
// identical evaluation code as the original recording (bit-exact by
// construction). All reductions use fixed loop order; two runs over the same
// recorded graph produce identical bits.
class Tape {
 public:
  struct Var {
    int id = -1;
    const Tape* owner = nullptr;
  };

  // --- construction of leaves ---
  Var leaf(Shape s, std::vector<double> values, bool requires_grad);
  Var leaf_scalar(double v, bool requires_grad) { return leaf({1, 1}, {v}, requires_grad); }
  Var constant(Shape s, std::vector<double> values) { return leaf(s, std::move(values), false); }
  Var constant_scalar(double v) { return leaf_scalar(v, false); }

  // --- recorded operations ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var x);
  Var scale(Var x, double f);
  Var add_const(Var x, double c);
  Var matmul(Var a, Var b);
  Var transpose(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var elu(Var x);
  Var leaky_relu(Var x, double slope);
  Var exp(Var x);
  Var log(Var x);
  Var pow_const(Var x, double p);
  Var clamp_min(Var x, double lo);
  Var sum(Var x);
  Var mean(Var x);
  Var softmax_rows(Var x);
  Var softmax_cols(Var x);
  Var gather_rows(Var x, const std::vector<int>& idx);
  Var segment_sum(Var x, const std::vector<int>& seg, int n_segments);
  Var segment_softmax(Var x, const std::vector<int>& seg, int n_segments);
  Var segment_mix(Var x, Var w, const std::vector<int>& src, const std::vector<int>& seg,
                  int n_segments);
  Var scale_rows(Var x, Var w);
  Var add_row_vec(Var x, Var b);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var x, int lo, int hi);
  Var slice_cols(Var x, int lo, int hi);
  Var row_dot(Var a, Var b);

  // --- engine ---
  // Accumulates into leaf grads; resets non-leaf grads first. loss must be
  // scalar and must depend on at least one requires_grad leaf.
  void backward(Var loss);
  void zero_grad();
  // Recomputes every recorded node in order from current leaf values.
  void replay();

  // --- access ---
  DiffTensor& at(Var v);
  const DiffTensor& at(Var v) const;
  double scalar(Var v) const;
  // Overwrite a leaf's values (same element count). Call replay() afterwards.
  void fill(Var leaf, std::span<const double> values);
  bool is_leaf(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t tensor_count() const { return tensors_.size(); }

  // Clamp activations observed during forward evaluation (focal loss guard).
  std::int64_t clamp_events() const { return clamp_events_; }
  void reset_clamp_events() { clamp_events_ = 0; }

 private:
  Var make(Shape s, bool requires_grad);
  Var record(OpKind kind, std::vector<int> inputs, Shape out_shape, double p0 = 0.0,
             std::vector<int> aux = {});
  void eval_node(const OpNode& n);
  void grad_node(const OpNode& n);
  void ensure_grad(int id);
  void check(Var v) const;

  std::vector<DiffTensor> tensors_;
  std::vector<OpNode> nodes_;
  std::vector<int> producer_;  // node index per tensor, -1 for leaves
  std::int64_t clamp_events_ = 0;
};

using Var = Tape::Var;

// Central-difference gradient verification. Perturbs each element of each
// listed leaf by +/- epsilon, recomputes the loss via replay(), and compares
// against the analytic gradient from backward(). Relative error uses an
// absolute fallback below magnitude 1: |fd - an| / max(1, |fd|, |an|).
struct GradCheckReport {
  struct PerLeaf {
    Var leaf;
    double max_rel_err = 0.0;
  };
  std::vector<PerLeaf> per_leaf;
  double max_rel_err = 0.0;
  bool passed = false;
};

GradCheckReport finite_diff_check(Tape& tape, Var loss, std::span<const Var> leaves,
                                  double epsilon, double tol);

}  // namespace scafds::num
