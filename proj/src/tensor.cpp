#include "scafds/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scafds::num {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

void Tape::check(Var v) const {
  if (v.owner != this) throw ShapeError("tensor handle does not belong to this tape");
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= tensors_.size())
    throw ShapeError("invalid tensor handle");
}

Var Tape::make(Shape s, bool requires_grad) {
  require(s.rows > 0 && s.cols > 0, "tensor shape must be positive");
  DiffTensor t;
  t.shape = s;
  t.values.assign(static_cast<std::size_t>(s.count()), 0.0);
  t.requires_grad = requires_grad;
  tensors_.push_back(std::move(t));
  producer_.push_back(-1);
  return Var{static_cast<int>(tensors_.size()) - 1, this};
}

Var Tape::leaf(Shape s, std::vector<double> values, bool requires_grad) {
  require(static_cast<std::int64_t>(values.size()) == s.count(),
          "leaf: value count does not match shape");
  Var v = make(s, requires_grad);
  tensors_[static_cast<std::size_t>(v.id)].values = std::move(values);
  return v;
}

Var Tape::record(OpKind kind, std::vector<int> inputs, Shape out_shape, double p0,
                 std::vector<int> aux) {
  bool rg = false;
  for (int i : inputs) rg = rg || tensors_[static_cast<std::size_t>(i)].requires_grad;
  Var out = make(out_shape, rg);
  OpNode n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.output = out.id;
  n.p0 = p0;
  n.aux = std::move(aux);
  nodes_.push_back(std::move(n));
  producer_[static_cast<std::size_t>(out.id)] = static_cast<int>(nodes_.size()) - 1;
  eval_node(nodes_.back());
  return out;
}

DiffTensor& Tape::at(Var v) {
  check(v);
  return tensors_[static_cast<std::size_t>(v.id)];
}

const DiffTensor& Tape::at(Var v) const {
  check(v);
  return tensors_[static_cast<std::size_t>(v.id)];
}

double Tape::scalar(Var v) const {
  const DiffTensor& t = at(v);
  require(t.shape == Shape{1, 1}, "scalar: tensor is not 1x1");
  return t.values[0];
}

bool Tape::is_leaf(Var v) const {
  check(v);
  return producer_[static_cast<std::size_t>(v.id)] < 0;
}

void Tape::fill(Var leaf, std::span<const double> values) {
  DiffTensor& t = at(leaf);
  if (!is_leaf(leaf)) throw StateError("fill: target is not a leaf");
  require(values.size() == t.values.size(), "fill: value count does not match shape");
  std::copy(values.begin(), values.end(), t.values.begin());
}

// ---------------------------------------------------------------------------
// op construction
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  require(at(a).shape == at(b).shape, "add: shape mismatch");
  return record(OpKind::Add, {a.id, b.id}, at(a).shape);
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  require(at(a).shape == at(b).shape, "sub: shape mismatch");
  return record(OpKind::Sub, {a.id, b.id}, at(a).shape);
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  require(at(a).shape == at(b).shape, "mul: shape mismatch");
  return record(OpKind::Mul, {a.id, b.id}, at(a).shape);
}

Var Tape::neg(Var x) {
  check(x);
  return record(OpKind::Neg, {x.id}, at(x).shape);
}

Var Tape::scale(Var x, double f) {
  check(x);
  return record(OpKind::Scale, {x.id}, at(x).shape, f);
}

Var Tape::add_const(Var x, double c) {
  check(x);
  return record(OpKind::AddConst, {x.id}, at(x).shape, c);
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  require(at(a).shape.cols == at(b).shape.rows, "matmul: inner dimensions differ");
  return record(OpKind::MatMul, {a.id, b.id}, Shape{at(a).shape.rows, at(b).shape.cols});
}

Var Tape::transpose(Var x) {
  check(x);
  return record(OpKind::Transpose, {x.id}, Shape{at(x).shape.cols, at(x).shape.rows});
}

Var Tape::sigmoid(Var x) {
  check(x);
  return record(OpKind::Sigmoid, {x.id}, at(x).shape);
}

Var Tape::tanh(Var x) {
  check(x);
  return record(OpKind::Tanh, {x.id}, at(x).shape);
}

Var Tape::elu(Var x) {
  check(x);
  return record(OpKind::Elu, {x.id}, at(x).shape);
}

Var Tape::leaky_relu(Var x, double slope) {
  check(x);
  return record(OpKind::LeakyRelu, {x.id}, at(x).shape, slope);
}

Var Tape::exp(Var x) {
  check(x);
  return record(OpKind::Exp, {x.id}, at(x).shape);
}

Var Tape::log(Var x) {
  check(x);
  return record(OpKind::Log, {x.id}, at(x).shape);
}

Var Tape::pow_const(Var x, double p) {
  check(x);
  return record(OpKind::PowConst, {x.id}, at(x).shape, p);
}

Var Tape::clamp_min(Var x, double lo) {
  check(x);
  return record(OpKind::ClampMin, {x.id}, at(x).shape, lo);
}

Var Tape::sum(Var x) {
  check(x);
  return record(OpKind::Sum, {x.id}, Shape{1, 1});
}

Var Tape::mean(Var x) {
  check(x);
  return record(OpKind::Mean, {x.id}, Shape{1, 1});
}

Var Tape::softmax_rows(Var x) {
  check(x);
  return record(OpKind::SoftmaxRows, {x.id}, at(x).shape);
}

Var Tape::softmax_cols(Var x) {
  check(x);
  return record(OpKind::SoftmaxCols, {x.id}, at(x).shape);
}

Var Tape::gather_rows(Var x, const std::vector<int>& idx) {
  check(x);
  require(!idx.empty(), "gather_rows: empty index list");
  for (int i : idx)
    require(i >= 0 && i < at(x).shape.rows, "gather_rows: index out of range");
  return record(OpKind::GatherRows, {x.id}, Shape{static_cast<int>(idx.size()), at(x).shape.cols},
                0.0, idx);
}

Var Tape::segment_sum(Var x, const std::vector<int>& seg, int n_segments) {
  check(x);
  require(static_cast<int>(seg.size()) == at(x).shape.rows,
          "segment_sum: one segment id per row required");
  require(n_segments > 0, "segment_sum: segment count must be positive");
  for (int s : seg) require(s >= 0 && s < n_segments, "segment_sum: segment id out of range");
  return record(OpKind::SegmentSum, {x.id}, Shape{n_segments, at(x).shape.cols}, 0.0, seg);
}

Var Tape::segment_softmax(Var x, const std::vector<int>& seg, int n_segments) {
  check(x);
  require(at(x).shape.cols == 1, "segment_softmax: input must be a column vector");
  require(static_cast<int>(seg.size()) == at(x).shape.rows,
          "segment_softmax: one segment id per row required");
  require(n_segments > 0, "segment_softmax: segment count must be positive");
  for (int s : seg)
    require(s >= 0 && s < n_segments, "segment_softmax: segment id out of range");
  std::vector<int> aux = seg;
  aux.push_back(n_segments);
  return record(OpKind::SegmentSoftmax, {x.id}, at(x).shape, 0.0, std::move(aux));
}

Var Tape::segment_mix(Var x, Var w, const std::vector<int>& src, const std::vector<int>& seg,
                      int n_segments) {
  check(x);
  check(w);
  require(src.size() == seg.size(), "segment_mix: src/segment lists differ in length");
  require(!src.empty(), "segment_mix: empty edge list");
  require(at(w).shape == Shape{static_cast<int>(src.size()), 1},
          "segment_mix: weights must be one column per edge");
  require(n_segments > 0, "segment_mix: segment count must be positive");
  for (int i : src) require(i >= 0 && i < at(x).shape.rows, "segment_mix: src out of range");
  for (int s : seg) require(s >= 0 && s < n_segments, "segment_mix: segment id out of range");
  std::vector<int> aux = src;
  aux.insert(aux.end(), seg.begin(), seg.end());
  return record(OpKind::SegmentMix, {x.id, w.id}, Shape{n_segments, at(x).shape.cols}, 0.0,
                std::move(aux));
}

Var Tape::scale_rows(Var x, Var w) {
  check(x);
  check(w);
  require(at(w).shape == Shape{at(x).shape.rows, 1}, "scale_rows: weight must be rows x 1");
  return record(OpKind::ScaleRows, {x.id, w.id}, at(x).shape);
}

Var Tape::add_row_vec(Var x, Var b) {
  check(x);
  check(b);
  require(at(b).shape == Shape{1, at(x).shape.cols}, "add_row_vec: bias must be 1 x cols");
  return record(OpKind::AddRowVec, {x.id, b.id}, at(x).shape);
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  int cols = 0;
  const int rows = at(parts[0]).shape.rows;
  std::vector<int> ids;
  for (Var p : parts) {
    check(p);
    require(at(p).shape.rows == rows, "concat_cols: row counts differ");
    cols += at(p).shape.cols;
    ids.push_back(p.id);
  }
  return record(OpKind::ConcatCols, std::move(ids), Shape{rows, cols});
}

Var Tape::slice_rows(Var x, int lo, int hi) {
  check(x);
  require(0 <= lo && lo < hi && hi <= at(x).shape.rows, "slice_rows: bad range");
  return record(OpKind::SliceRows, {x.id}, Shape{hi - lo, at(x).shape.cols}, 0.0, {lo, hi});
}

Var Tape::slice_cols(Var x, int lo, int hi) {
  check(x);
  require(0 <= lo && lo < hi && hi <= at(x).shape.cols, "slice_cols: bad range");
  return record(OpKind::SliceCols, {x.id}, Shape{at(x).shape.rows, hi - lo}, 0.0, {lo, hi});
}

Var Tape::row_dot(Var a, Var b) {
  check(a);
  check(b);
  require(at(a).shape == at(b).shape, "row_dot: shape mismatch");
  return record(OpKind::RowDot, {a.id, b.id}, Shape{at(a).shape.rows, 1});
}

// ---------------------------------------------------------------------------
// forward evaluation (shared by recording and replay)
// ---------------------------------------------------------------------------

void Tape::eval_node(const OpNode& n) {
  DiffTensor& out = tensors_[static_cast<std::size_t>(n.output)];
  auto in = [&](int k) -> const DiffTensor& {
    return tensors_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])];
  };
  double* o = out.values.data();
  const std::size_t count = out.values.size();

  switch (n.kind) {
    case OpKind::Add: {
      const double *a = in(0).values.data(), *b = in(1).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] + b[i];
      break;
    }
    case OpKind::Sub: {
      const double *a = in(0).values.data(), *b = in(1).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] - b[i];
      break;
    }
    case OpKind::Mul: {
      const double *a = in(0).values.data(), *b = in(1).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] * b[i];
      break;
    }
    case OpKind::Neg: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = -a[i];
      break;
    }
    case OpKind::Scale: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = n.p0 * a[i];
      break;
    }
    case OpKind::AddConst: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] + n.p0;
      break;
    }
    case OpKind::MatMul: {
      const DiffTensor &A = in(0), &B = in(1);
      const int m = A.shape.rows, k = A.shape.cols, nn = B.shape.cols;
      std::fill(out.values.begin(), out.values.end(), 0.0);
      const double *a = A.values.data(), *b = B.values.data();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double av = a[i * k + p];
          const double* brow = b + p * nn;
          double* orow = o + i * nn;
          for (int j = 0; j < nn; ++j) orow[j] += av * brow[j];
        }
      break;
    }
    case OpKind::Transpose: {
      const DiffTensor& A = in(0);
      const int m = A.shape.rows, c = A.shape.cols;
      const double* a = A.values.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) o[j * m + i] = a[i * c + j];
      break;
    }
    case OpKind::Sigmoid: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) {
        const double x = a[i];
        o[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      }
      break;
    }
    case OpKind::Tanh: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = std::tanh(a[i]);
      break;
    }
    case OpKind::Elu: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] >= 0.0 ? a[i] : std::expm1(a[i]);
      break;
    }
    case OpKind::LeakyRelu: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = a[i] > 0.0 ? a[i] : n.p0 * a[i];
      break;
    }
    case OpKind::Exp: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = std::exp(a[i]);
      break;
    }
    case OpKind::Log: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = std::log(a[i]);
      break;
    }
    case OpKind::PowConst: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) o[i] = std::pow(a[i], n.p0);
      break;
    }
    case OpKind::ClampMin: {
      const double* a = in(0).values.data();
      for (std::size_t i = 0; i < count; ++i) {
        if (a[i] < n.p0) {
          o[i] = n.p0;
          ++clamp_events_;
        } else {
          o[i] = a[i];
        }
      }
      break;
    }
    case OpKind::Sum: {
      const double* a = in(0).values.data();
      double s = 0.0;
      for (std::size_t i = 0; i < in(0).values.size(); ++i) s += a[i];
      o[0] = s;
      break;
    }
    case OpKind::Mean: {
      const double* a = in(0).values.data();
      double s = 0.0;
      const std::size_t m = in(0).values.size();
      for (std::size_t i = 0; i < m; ++i) s += a[i];
      o[0] = s / static_cast<double>(m);
      break;
    }
    case OpKind::SoftmaxRows: {
      const DiffTensor& A = in(0);
      const int m = A.shape.rows, c = A.shape.cols;
      const double* a = A.values.data();
      for (int i = 0; i < m; ++i) {
        double mx = a[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, a[i * c + j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
          o[i * c + j] = std::exp(a[i * c + j] - mx);
          s += o[i * c + j];
        }
        for (int j = 0; j < c; ++j) o[i * c + j] /= s;
      }
      break;
    }
    case OpKind::SoftmaxCols: {
      const DiffTensor& A = in(0);
      const int m = A.shape.rows, c = A.shape.cols;
      const double* a = A.values.data();
      for (int j = 0; j < c; ++j) {
        double mx = a[j];
        for (int i = 1; i < m; ++i) mx = std::max(mx, a[i * c + j]);
        double s = 0.0;
        for (int i = 0; i < m; ++i) {
          o[i * c + j] = std::exp(a[i * c + j] - mx);
          s += o[i * c + j];
        }
        for (int i = 0; i < m; ++i) o[i * c + j] /= s;
      }
      break;
    }
    case OpKind::GatherRows: {
      const DiffTensor& A = in(0);
      const int c = A.shape.cols;
      const double* a = A.values.data();
      for (std::size_t i = 0; i < n.aux.size(); ++i)
        for (int j = 0; j < c; ++j) o[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] =
            a[static_cast<std::size_t>(n.aux[i]) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
      break;
    }
    case OpKind::SegmentSum: {
      const DiffTensor& A = in(0);
      const int c = A.shape.cols;
      const double* a = A.values.data();
      std::fill(out.values.begin(), out.values.end(), 0.0);
      for (std::size_t i = 0; i < n.aux.size(); ++i) {
        double* orow = o + static_cast<std::size_t>(n.aux[i]) * static_cast<std::size_t>(c);
        const double* arow = a + i * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) orow[j] += arow[j];
      }
      break;
    }
    case OpKind::SegmentSoftmax: {
      const DiffTensor& A = in(0);
      const std::size_t m = A.values.size();
      const int n_seg = n.aux.back();
      const double* a = A.values.data();
      std::vector<double> mx(static_cast<std::size_t>(n_seg),
                             -std::numeric_limits<double>::infinity());
      std::vector<double> sm(static_cast<std::size_t>(n_seg), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        auto s = static_cast<std::size_t>(n.aux[i]);
        mx[s] = std::max(mx[s], a[i]);
      }
      for (std::size_t i = 0; i < m; ++i) {
        auto s = static_cast<std::size_t>(n.aux[i]);
        o[i] = std::exp(a[i] - mx[s]);
        sm[s] += o[i];
      }
      for (std::size_t i = 0; i < m; ++i) o[i] /= sm[static_cast<std::size_t>(n.aux[i])];
      break;
    }
    case OpKind::SegmentMix: {
      const DiffTensor& A = in(0);
      const DiffTensor& W = in(1);
      const int c = A.shape.cols;
      const std::size_t m = W.values.size();
      const int* src = n.aux.data();
      const int* seg = n.aux.data() + m;
      const double* a = A.values.data();
      const double* w = W.values.data();
      std::fill(out.values.begin(), out.values.end(), 0.0);
      for (std::size_t e = 0; e < m; ++e) {
        const double we = w[e];
        const double* arow = a + static_cast<std::size_t>(src[e]) * static_cast<std::size_t>(c);
        double* orow = o + static_cast<std::size_t>(seg[e]) * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) orow[j] += we * arow[j];
      }
      break;
    }
    case OpKind::ScaleRows: {
      const DiffTensor& A = in(0);
      const DiffTensor& W = in(1);
      const int m = A.shape.rows, c = A.shape.cols;
      const double *a = A.values.data(), *w = W.values.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) o[i * c + j] = w[i] * a[i * c + j];
      break;
    }
    case OpKind::AddRowVec: {
      const DiffTensor& A = in(0);
      const DiffTensor& B = in(1);
      const int m = A.shape.rows, c = A.shape.cols;
      const double *a = A.values.data(), *b = B.values.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) o[i * c + j] = a[i * c + j] + b[j];
      break;
    }
    case OpKind::ConcatCols: {
      const int m = out.shape.rows;
      int off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const DiffTensor& A = in(static_cast<int>(k));
        const int c = A.shape.cols;
        const double* a = A.values.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) o[i * out.shape.cols + off + j] = a[i * c + j];
        off += c;
      }
      break;
    }
    case OpKind::SliceRows: {
      const DiffTensor& A = in(0);
      const int c = A.shape.cols, lo = n.aux[0], hi = n.aux[1];
      const double* a = A.values.data();
      for (int i = lo; i < hi; ++i)
        for (int j = 0; j < c; ++j) o[(i - lo) * c + j] = a[i * c + j];
      break;
    }
    case OpKind::SliceCols: {
      const DiffTensor& A = in(0);
      const int m = A.shape.rows, c = A.shape.cols, lo = n.aux[0], hi = n.aux[1];
      const double* a = A.values.data();
      for (int i = 0; i < m; ++i)
        for (int j = lo; j < hi; ++j) o[i * (hi - lo) + (j - lo)] = a[i * c + j];
      break;
    }
    case OpKind::RowDot: {
      const DiffTensor& A = in(0);
      const DiffTensor& B = in(1);
      const int m = A.shape.rows, c = A.shape.cols;
      const double *a = A.values.data(), *b = B.values.data();
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += a[i * c + j] * b[i * c + j];
        o[i] = s;
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Tape::ensure_grad(int id) {
  DiffTensor& t = tensors_[static_cast<std::size_t>(id)];
  if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
}

void Tape::zero_grad() {
  for (DiffTensor& t : tensors_)
    if (!t.grad.empty()) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

void Tape::grad_node(const OpNode& n) {
  DiffTensor& out = tensors_[static_cast<std::size_t>(n.output)];
  const double* g = out.grad.data();
  auto inp = [&](int k) -> DiffTensor& {
    return tensors_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])];
  };
  auto wants = [&](int k) { return inp(k).requires_grad; };
  const std::size_t count = out.values.size();

  switch (n.kind) {
    case OpKind::Add: {
      for (int k = 0; k < 2; ++k)
        if (wants(k)) {
          double* gi = inp(k).grad.data();
          for (std::size_t i = 0; i < count; ++i) gi[i] += g[i];
        }
      break;
    }
    case OpKind::Sub: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i];
      }
      if (wants(1)) {
        double* gi = inp(1).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] -= g[i];
      }
      break;
    }
    case OpKind::Mul: {
      const double *a = inp(0).values.data(), *b = inp(1).values.data();
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * b[i];
      }
      if (wants(1)) {
        double* gi = inp(1).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::Neg: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] -= g[i];
      }
      break;
    }
    case OpKind::Scale: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += n.p0 * g[i];
      }
      break;
    }
    case OpKind::AddConst: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i];
      }
      break;
    }
    case OpKind::MatMul: {
      const DiffTensor &A = inp(0), &B = inp(1);
      const int m = A.shape.rows, k = A.shape.cols, nn = B.shape.cols;
      if (wants(0)) {
        double* ga = inp(0).grad.data();
        const double* b = B.values.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = g + i * nn;
            const double* brow = b + p * nn;
            for (int j = 0; j < nn; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
      }
      if (wants(1)) {
        double* gb = inp(1).grad.data();
        const double* a = A.values.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* grow = g + i * nn;
            double* gbrow = gb + p * nn;
            for (int j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
          }
      }
      break;
    }
    case OpKind::Transpose: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int m = A.shape.rows, c = A.shape.cols;
        double* ga = A.grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) ga[i * c + j] += g[j * m + i];
      }
      break;
    }
    case OpKind::Sigmoid: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* y = out.values.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      break;
    }
    case OpKind::Tanh: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* y = out.values.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * (1.0 - y[i] * y[i]);
      }
      break;
    }
    case OpKind::Elu: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* x = inp(0).values.data();
        const double* y = out.values.data();
        for (std::size_t i = 0; i < count; ++i)
          gi[i] += g[i] * (x[i] >= 0.0 ? 1.0 : y[i] + 1.0);
      }
      break;
    }
    case OpKind::LeakyRelu: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* x = inp(0).values.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.p0);
      }
      break;
    }
    case OpKind::Exp: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* y = out.values.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] * y[i];
      }
      break;
    }
    case OpKind::Log: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* x = inp(0).values.data();
        for (std::size_t i = 0; i < count; ++i) gi[i] += g[i] / x[i];
      }
      break;
    }
    case OpKind::PowConst: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* x = inp(0).values.data();
        for (std::size_t i = 0; i < count; ++i)
          gi[i] += g[i] * n.p0 * std::pow(x[i], n.p0 - 1.0);
      }
      break;
    }
    case OpKind::ClampMin: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const double* x = inp(0).values.data();
        for (std::size_t i = 0; i < count; ++i)
          if (x[i] > n.p0) gi[i] += g[i];
      }
      break;
    }
    case OpKind::Sum: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const std::size_t m = inp(0).values.size();
        for (std::size_t i = 0; i < m; ++i) gi[i] += g[0];
      }
      break;
    }
    case OpKind::Mean: {
      if (wants(0)) {
        double* gi = inp(0).grad.data();
        const std::size_t m = inp(0).values.size();
        const double gv = g[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) gi[i] += gv;
      }
      break;
    }
    case OpKind::SoftmaxRows: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int m = A.shape.rows, c = A.shape.cols;
        double* gi = A.grad.data();
        const double* y = out.values.data();
        for (int i = 0; i < m; ++i) {
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (int j = 0; j < c; ++j) gi[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
      }
      break;
    }
    case OpKind::SoftmaxCols: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int m = A.shape.rows, c = A.shape.cols;
        double* gi = A.grad.data();
        const double* y = out.values.data();
        for (int j = 0; j < c; ++j) {
          double dot = 0.0;
          for (int i = 0; i < m; ++i) dot += g[i * c + j] * y[i * c + j];
          for (int i = 0; i < m; ++i) gi[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
      }
      break;
    }
    case OpKind::GatherRows: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int c = A.shape.cols;
        double* gi = A.grad.data();
        for (std::size_t i = 0; i < n.aux.size(); ++i) {
          double* girow = gi + static_cast<std::size_t>(n.aux[i]) * static_cast<std::size_t>(c);
          const double* grow = g + i * static_cast<std::size_t>(c);
          for (int j = 0; j < c; ++j) girow[j] += grow[j];
        }
      }
      break;
    }
    case OpKind::SegmentSum: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int c = A.shape.cols;
        double* gi = A.grad.data();
        for (std::size_t i = 0; i < n.aux.size(); ++i) {
          const double* grow = g + static_cast<std::size_t>(n.aux[i]) * static_cast<std::size_t>(c);
          double* girow = gi + i * static_cast<std::size_t>(c);
          for (int j = 0; j < c; ++j) girow[j] += grow[j];
        }
      }
      break;
    }
    case OpKind::SegmentSoftmax: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const std::size_t m = A.values.size();
        const int n_seg = n.aux.back();
        double* gi = A.grad.data();
        const double* y = out.values.data();
        std::vector<double> dot(static_cast<std::size_t>(n_seg), 0.0);
        for (std::size_t i = 0; i < m; ++i)
          dot[static_cast<std::size_t>(n.aux[i])] += g[i] * y[i];
        for (std::size_t i = 0; i < m; ++i)
          gi[i] += y[i] * (g[i] - dot[static_cast<std::size_t>(n.aux[i])]);
      }
      break;
    }
    case OpKind::SegmentMix: {
      const DiffTensor& A = inp(0);
      const DiffTensor& W = inp(1);
      const int c = A.shape.cols;
      const std::size_t m = W.values.size();
      const int* src = n.aux.data();
      const int* seg = n.aux.data() + m;
      if (wants(0)) {
        double* ga = inp(0).grad.data();
        const double* w = W.values.data();
        for (std::size_t e = 0; e < m; ++e) {
          const double we = w[e];
          const double* grow = g + static_cast<std::size_t>(seg[e]) * static_cast<std::size_t>(c);
          double* garow = ga + static_cast<std::size_t>(src[e]) * static_cast<std::size_t>(c);
          for (int j = 0; j < c; ++j) garow[j] += we * grow[j];
        }
      }
      if (wants(1)) {
        double* gw = inp(1).grad.data();
        const double* a = A.values.data();
        for (std::size_t e = 0; e < m; ++e) {
          const double* grow = g + static_cast<std::size_t>(seg[e]) * static_cast<std::size_t>(c);
          const double* arow = a + static_cast<std::size_t>(src[e]) * static_cast<std::size_t>(c);
          double s = 0.0;
          for (int j = 0; j < c; ++j) s += grow[j] * arow[j];
          gw[e] += s;
        }
      }
      break;
    }
    case OpKind::ScaleRows: {
      const DiffTensor& A = inp(0);
      const DiffTensor& W = inp(1);
      const int m = A.shape.rows, c = A.shape.cols;
      if (wants(0)) {
        double* ga = inp(0).grad.data();
        const double* w = W.values.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) ga[i * c + j] += w[i] * g[i * c + j];
      }
      if (wants(1)) {
        double* gw = inp(1).grad.data();
        const double* a = A.values.data();
        for (int i = 0; i < m; ++i) {
          double s = 0.0;
          for (int j = 0; j < c; ++j) s += g[i * c + j] * a[i * c + j];
          gw[i] += s;
        }
      }
      break;
    }
    case OpKind::AddRowVec: {
      const DiffTensor& A = inp(0);
      const int m = A.shape.rows, c = A.shape.cols;
      if (wants(0)) {
        double* ga = inp(0).grad.data();
        for (int i = 0; i < m * c; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        double* gb = inp(1).grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
      break;
    }
    case OpKind::ConcatCols: {
      const int m = out.shape.rows;
      int off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        DiffTensor& A = inp(static_cast<int>(k));
        const int c = A.shape.cols;
        if (A.requires_grad) {
          double* ga = A.grad.data();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) ga[i * c + j] += g[i * out.shape.cols + off + j];
        }
        off += c;
      }
      break;
    }
    case OpKind::SliceRows: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int c = A.shape.cols, lo = n.aux[0], hi = n.aux[1];
        double* ga = A.grad.data();
        for (int i = lo; i < hi; ++i)
          for (int j = 0; j < c; ++j) ga[i * c + j] += g[(i - lo) * c + j];
      }
      break;
    }
    case OpKind::SliceCols: {
      if (wants(0)) {
        DiffTensor& A = inp(0);
        const int m = A.shape.rows, c = A.shape.cols, lo = n.aux[0], hi = n.aux[1];
        double* ga = A.grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = lo; j < hi; ++j) ga[i * c + j] += g[i * (hi - lo) + (j - lo)];
      }
      break;
    }
    case OpKind::RowDot: {
      const DiffTensor& A = inp(0);
      const DiffTensor& B = inp(1);
      const int m = A.shape.rows, c = A.shape.cols;
      if (wants(0)) {
        double* ga = inp(0).grad.data();
        const double* b = B.values.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) ga[i * c + j] += g[i] * b[i * c + j];
      }
      if (wants(1)) {
        double* gb = inp(1).grad.data();
        const double* a = A.values.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) gb[i * c + j] += g[i] * a[i * c + j];
      }
      break;
    }
  }
}

void Tape::backward(Var loss) {
  const DiffTensor& lt = at(loss);
  if (!(lt.shape == Shape{1, 1})) throw ShapeError("backward: loss must be scalar");
  if (!lt.requires_grad)
    throw DomainError("backward: loss does not depend on any differentiable leaf");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (!tensors_[i].requires_grad) continue;
    ensure_grad(static_cast<int>(i));
    if (producer_[i] >= 0)
      std::fill(tensors_[i].grad.begin(), tensors_[i].grad.end(), 0.0);
  }
  tensors_[static_cast<std::size_t>(loss.id)].grad[0] += 1.0;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    const OpNode& n = nodes_[k];
    if (!tensors_[static_cast<std::size_t>(n.output)].requires_grad) continue;
    grad_node(n);
  }
}

void Tape::replay() {
  for (const OpNode& n : nodes_) eval_node(n);
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

GradCheckReport finite_diff_check(Tape& tape, Var loss, std::span<const Var> leaves,
                                  double epsilon, double tol) {
  if (!(epsilon > 0.0)) throw DomainError("finite_diff_check: epsilon must be positive");
  if (!std::isfinite(tape.scalar(loss)))
    throw NumericError("finite_diff_check: loss is not finite");
  for (Var l : leaves) {
    if (!tape.is_leaf(l)) throw DomainError("finite_diff_check: target is not a leaf");
    if (!tape.at(l).requires_grad)
      throw DomainError("finite_diff_check: leaf does not require grad");
  }

  tape.zero_grad();
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Var l : leaves) analytic.push_back(tape.at(l).grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Var l = leaves[k];
    GradCheckReport::PerLeaf pl;
    pl.leaf = l;
    std::vector<double>& vals = tape.at(l).values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + epsilon;
      tape.replay();
      const double fp = tape.scalar(loss);
      vals[i] = orig - epsilon;
      tape.replay();
      const double fm = tape.scalar(loss);
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_check: perturbed loss is not finite");
      const double fd = (fp - fm) / (2.0 * epsilon);
      const double an = analytic[k][i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      const double rel = std::abs(fd - an) / denom;
      pl.max_rel_err = std::max(pl.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, pl.max_rel_err);
    report.per_leaf.push_back(pl);
  }
  tape.replay();
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace scafds::num
