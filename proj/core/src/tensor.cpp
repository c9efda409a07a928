#include "mfaec/tensor.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace mfaec {

namespace {

std::atomic<uint64_t> g_next_tape_id{1};

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

std::string op_shapes(OpKind kind, std::span<const Tensor> operands) {
  std::string s = op_name(kind);
  s += ": operand shapes";
  for (const auto& t : operands) s += " " + shape_str(t.shape);
  return s;
}

// C(r,c) += A(r,k) @ B(k,c)
void mm_nn_acc(const double* A, const double* B, double* C, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    double* crow = C + static_cast<size_t>(i) * c;
    for (int p = 0; p < k; ++p) {
      const double a = arow[p];
      const double* brow = B + static_cast<size_t>(p) * c;
      for (int j = 0; j < c; ++j) crow[j] += a * brow[j];
    }
  }
}

// C(r,c) += A(r,k) @ B(c,k)^T
void mm_nt_acc(const double* A, const double* B, double* C, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    double* crow = C + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      const double* brow = B + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(k,c) += A(r,k)^T @ B(r,c)
void mm_tn_acc(const double* A, const double* B, double* C, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    const double* arow = A + static_cast<size_t>(i) * k;
    const double* brow = B + static_cast<size_t>(i) * c;
    for (int p = 0; p < k; ++p) {
      const double a = arow[p];
      double* crow = C + static_cast<size_t>(p) * c;
      for (int j = 0; j < c; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kScaledDot: return "scaled_dot";
    case OpKind::kAffine: return "affine";
    case OpKind::kConcat: return "concat";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kPrelu: return "prelu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kMulRows: return "mul_rows";
    case OpKind::kAddRows: return "add_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kReshape: return "reshape";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kNllRows: return "nll_rows";
    default: return "unknown";
  }
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

Tensor make_constant(std::vector<int> shape, std::vector<double> values) {
  int64_t n = 1;
  for (int d : shape) {
    check(d > 0, "constant: non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  check(n == static_cast<int64_t>(values.size()),
        "constant: shape " + shape_str(shape) + " does not match value count " +
            std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.values = std::make_shared<const std::vector<double>>(std::move(values));
  return t;
}

Tensor make_zeros(std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return make_constant(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

bool GradMap::has(NodeId id) const {
  return id >= 0 && static_cast<size_t>(id) < grads_.size() && !grads_[id].empty();
}

const std::vector<double>& GradMap::at(NodeId id) const {
  if (!has(id)) fail("gradient map: no gradient for node " + std::to_string(id));
  return grads_[id];
}

Tensor GradMap::tensor_at(NodeId id) const {
  return make_constant(shapes_[id], grads_[id]);
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

NodeId Tape::add_node(std::vector<int> shape,
                      std::shared_ptr<const std::vector<double>> values,
                      bool requires_grad) {
  nodes_.push_back(Node{std::move(shape), std::move(values), requires_grad});
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor Tape::leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  return leaf_shared(std::move(shape),
                     std::make_shared<const std::vector<double>>(std::move(values)),
                     requires_grad);
}

Tensor Tape::leaf_shared(std::vector<int> shape,
                         std::shared_ptr<const std::vector<double>> values,
                         bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) {
    check(d > 0, "leaf: non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  check(values && n == static_cast<int64_t>(values->size()),
        "leaf: shape " + shape_str(shape) + " does not match value count");
  Tensor t;
  t.shape = shape;
  t.values = values;
  t.requires_grad = requires_grad;
  t.node_id = add_node(std::move(shape), std::move(values), requires_grad);
  t.tape_id = id_;
  return t;
}

Tensor ParamBinder::operator()(const Param& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  std::shared_ptr<const std::vector<double>> view(p.values, p.values.get());
  Tensor t = tape_->leaf_shared(p.shape, std::move(view), true);
  bound_.emplace(&p, t);
  return t;
}

NodeId ParamBinder::node_of(const Param& p) const {
  auto it = bound_.find(&p);
  return it == bound_.end() ? kNoNode : it->second.node_id;
}

namespace {

void expect_operands(OpKind kind, std::span<const Tensor> ops, size_t n) {
  check(ops.size() == n, std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                             " operands, got " + std::to_string(ops.size()));
}

void expect_2d(OpKind kind, const Tensor& t, std::span<const Tensor> ops) {
  check(t.ndim() == 2, op_shapes(kind, ops) + " (2-d operand required)");
}

// Forward value computation; pure in operand values and attrs.
std::vector<double> compute_forward(OpKind kind, std::span<const Tensor> ops,
                                    const OpAttrs& attrs, std::vector<int>& out_shape) {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kMul: {
      expect_operands(kind, ops, 2);
      check(ops[0].shape == ops[1].shape, op_shapes(kind, ops) + " (shapes must match)");
      out_shape = ops[0].shape;
      const auto& a = *ops[0].values;
      const auto& b = *ops[1].values;
      std::vector<double> y(a.size());
      if (kind == OpKind::kAdd) {
        for (size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
      } else {
        for (size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
      }
      return y;
    }
    case OpKind::kScale: {
      expect_operands(kind, ops, 1);
      out_shape = ops[0].shape;
      std::vector<double> y(*ops[0].values);
      for (double& v : y) v *= attrs.scalar;
      return y;
    }
    case OpKind::kMatmul: {
      expect_operands(kind, ops, 2);
      expect_2d(kind, ops[0], ops);
      expect_2d(kind, ops[1], ops);
      const int r = ops[0].shape[0], k = ops[0].shape[1];
      check(ops[1].shape[0] == k, op_shapes(kind, ops) + " (inner extents differ)");
      const int c = ops[1].shape[1];
      out_shape = {r, c};
      std::vector<double> y(static_cast<size_t>(r) * c, 0.0);
      mm_nn_acc(ops[0].data(), ops[1].data(), y.data(), r, k, c);
      return y;
    }
    case OpKind::kScaledDot: {
      expect_operands(kind, ops, 2);
      expect_2d(kind, ops[0], ops);
      expect_2d(kind, ops[1], ops);
      const int a = ops[0].shape[0], d = ops[0].shape[1], b = ops[1].shape[0];
      check(ops[1].shape[1] == d, op_shapes(kind, ops) + " (feature extents differ)");
      out_shape = {a, b};
      std::vector<double> y(static_cast<size_t>(a) * b, 0.0);
      mm_nt_acc(ops[0].data(), ops[1].data(), y.data(), a, d, b);
      for (double& v : y) v *= attrs.scalar;
      return y;
    }
    case OpKind::kAffine: {
      expect_operands(kind, ops, 3);
      expect_2d(kind, ops[0], ops);
      expect_2d(kind, ops[1], ops);
      const int t = ops[0].shape[0], in = ops[0].shape[1];
      const int out = ops[1].shape[0];
      check(ops[1].shape[1] == in, op_shapes(kind, ops) + " (weight inner extent differs)");
      check(ops[2].ndim() == 1 && ops[2].shape[0] == out,
            op_shapes(kind, ops) + " (bias must be (" + std::to_string(out) + "))");
      out_shape = {t, out};
      std::vector<double> y(static_cast<size_t>(t) * out, 0.0);
      mm_nt_acc(ops[0].data(), ops[1].data(), y.data(), t, in, out);
      const double* bias = ops[2].data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < out; ++j) y[static_cast<size_t>(i) * out + j] += bias[j];
      return y;
    }
    case OpKind::kConcat: {
      check(ops.size() >= 2, op_shapes(kind, ops) + " (needs at least two operands)");
      check(attrs.axis == 0 || attrs.axis == 1,
            std::string(op_name(kind)) + ": axis must be 0 or 1");
      for (const auto& t : ops) expect_2d(kind, t, ops);
      if (attrs.axis == 0) {
        const int c = ops[0].shape[1];
        int rtot = 0;
        for (const auto& t : ops) {
          check(t.shape[1] == c, op_shapes(kind, ops) + " (column extents differ)");
          rtot += t.shape[0];
        }
        out_shape = {rtot, c};
        std::vector<double> y;
        y.reserve(static_cast<size_t>(rtot) * c);
        for (const auto& t : ops) y.insert(y.end(), t.values->begin(), t.values->end());
        return y;
      }
      const int r = ops[0].shape[0];
      int ctot = 0;
      for (const auto& t : ops) {
        check(t.shape[0] == r, op_shapes(kind, ops) + " (row extents differ)");
        ctot += t.shape[1];
      }
      out_shape = {r, ctot};
      std::vector<double> y(static_cast<size_t>(r) * ctot);
      int coff = 0;
      for (const auto& t : ops) {
        const int c = t.shape[1];
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            y[static_cast<size_t>(i) * ctot + coff + j] = t.at(i, j);
        coff += c;
      }
      return y;
    }
    case OpKind::kSoftmax: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      check(attrs.axis == 1, std::string(op_name(kind)) + ": only last-axis softmax supported");
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      out_shape = ops[0].shape;
      std::vector<double> y(static_cast<size_t>(t) * d);
      const double* x = ops[0].data();
      for (int i = 0; i < t; ++i) {
        const double* xr = x + static_cast<size_t>(i) * d;
        double* yr = y.data() + static_cast<size_t>(i) * d;
        double mx = xr[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
          yr[j] = std::exp(xr[j] - mx);
          z += yr[j];
        }
        for (int j = 0; j < d; ++j) yr[j] /= z;
      }
      return y;
    }
    case OpKind::kSigmoid: {
      expect_operands(kind, ops, 1);
      out_shape = ops[0].shape;
      std::vector<double> y(*ops[0].values);
      for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
      return y;
    }
    case OpKind::kTanh: {
      expect_operands(kind, ops, 1);
      out_shape = ops[0].shape;
      std::vector<double> y(*ops[0].values);
      for (double& v : y) v = std::tanh(v);
      return y;
    }
    case OpKind::kPrelu: {
      expect_operands(kind, ops, 2);
      expect_2d(kind, ops[0], ops);
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      check(ops[1].ndim() == 1 && ops[1].shape[0] == d,
            op_shapes(kind, ops) + " (slope must be (" + std::to_string(d) + "))");
      out_shape = ops[0].shape;
      std::vector<double> y(static_cast<size_t>(t) * d);
      const double* x = ops[0].data();
      const double* s = ops[1].data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) {
          const double v = x[static_cast<size_t>(i) * d + j];
          y[static_cast<size_t>(i) * d + j] = v >= 0.0 ? v : s[j] * v;
        }
      return y;
    }
    case OpKind::kLayerNorm: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      check(attrs.eps > 0.0, std::string(op_name(kind)) + ": eps must be positive");
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      out_shape = ops[0].shape;
      std::vector<double> y(static_cast<size_t>(t) * d);
      const double* x = ops[0].data();
      for (int i = 0; i < t; ++i) {
        const double* xr = x + static_cast<size_t>(i) * d;
        double* yr = y.data() + static_cast<size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + attrs.eps);
        for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv;
      }
      return y;
    }
    case OpKind::kMulRows:
    case OpKind::kAddRows: {
      expect_operands(kind, ops, 2);
      expect_2d(kind, ops[0], ops);
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      check(ops[1].ndim() == 1 && ops[1].shape[0] == d,
            op_shapes(kind, ops) + " (row operand must be (" + std::to_string(d) + "))");
      out_shape = ops[0].shape;
      std::vector<double> y(static_cast<size_t>(t) * d);
      const double* x = ops[0].data();
      const double* r = ops[1].data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(i) * d + j;
          y[idx] = kind == OpKind::kMulRows ? x[idx] * r[j] : x[idx] + r[j];
        }
      return y;
    }
    case OpKind::kGatherRows: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      check(!attrs.indices.empty(), std::string(op_name(kind)) + ": empty index list");
      const int v = ops[0].shape[0], d = ops[0].shape[1];
      for (int idx : attrs.indices)
        check(idx >= 0 && idx < v, std::string(op_name(kind)) + ": index " + std::to_string(idx) +
                                       " out of range for " + shape_str(ops[0].shape));
      const int n = static_cast<int>(attrs.indices.size());
      out_shape = {n, d};
      std::vector<double> y(static_cast<size_t>(n) * d);
      const double* x = ops[0].data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          y[static_cast<size_t>(i) * d + j] = x[static_cast<size_t>(attrs.indices[i]) * d + j];
      return y;
    }
    case OpKind::kSliceRows:
    case OpKind::kSliceCols: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      const int extent = kind == OpKind::kSliceRows ? ops[0].shape[0] : ops[0].shape[1];
      check(attrs.begin >= 0 && attrs.begin < attrs.end && attrs.end <= extent,
            std::string(op_name(kind)) + ": range [" + std::to_string(attrs.begin) + "," +
                std::to_string(attrs.end) + ") invalid for " + shape_str(ops[0].shape));
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      if (kind == OpKind::kSliceRows) {
        out_shape = {attrs.end - attrs.begin, d};
        const double* x = ops[0].data() + static_cast<size_t>(attrs.begin) * d;
        return std::vector<double>(x, x + static_cast<size_t>(attrs.end - attrs.begin) * d);
      }
      out_shape = {t, attrs.end - attrs.begin};
      std::vector<double> y(static_cast<size_t>(t) * (attrs.end - attrs.begin));
      for (int i = 0; i < t; ++i)
        for (int j = attrs.begin; j < attrs.end; ++j)
          y[static_cast<size_t>(i) * (attrs.end - attrs.begin) + (j - attrs.begin)] =
              ops[0].at(i, j);
      return y;
    }
    case OpKind::kReshape: {
      expect_operands(kind, ops, 1);
      int64_t n = 1;
      for (int d : attrs.dims) {
        check(d > 0, std::string(op_name(kind)) + ": non-positive extent in target " +
                         shape_str(attrs.dims));
        n *= d;
      }
      check(n == ops[0].numel(), std::string(op_name(kind)) + ": cannot reshape " +
                                     shape_str(ops[0].shape) + " to " + shape_str(attrs.dims));
      out_shape = attrs.dims;
      return *ops[0].values;
    }
    case OpKind::kMeanRows: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      check(t >= 1, std::string(op_name(kind)) + ": empty time axis");
      out_shape = {1, d};
      std::vector<double> y(static_cast<size_t>(d), 0.0);
      const double* x = ops[0].data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) y[j] += x[static_cast<size_t>(i) * d + j];
      for (double& v : y) v /= t;
      return y;
    }
    case OpKind::kSum: {
      expect_operands(kind, ops, 1);
      out_shape = {1};
      double acc = 0.0;
      for (double v : *ops[0].values) acc += v;
      return {acc};
    }
    case OpKind::kNllRows: {
      expect_operands(kind, ops, 1);
      expect_2d(kind, ops[0], ops);
      const int t = ops[0].shape[0], d = ops[0].shape[1];
      check(static_cast<int>(attrs.indices.size()) == t,
            std::string(op_name(kind)) + ": need one target per row, got " +
                std::to_string(attrs.indices.size()) + " for " + std::to_string(t) + " rows");
      check(attrs.eps >= 0.0, std::string(op_name(kind)) + ": negative eps");
      double acc = 0.0;
      for (int i = 0; i < t; ++i) {
        const int tgt = attrs.indices[i];
        check(tgt >= 0 && tgt < d, std::string(op_name(kind)) + ": target " +
                                       std::to_string(tgt) + " out of range for " +
                                       shape_str(ops[0].shape));
        acc -= std::log(std::max(ops[0].at(i, tgt), attrs.eps));
      }
      out_shape = {1};
      return {acc};
    }
    default:
      fail("unknown primitive kind " + std::to_string(static_cast<int>(kind)));
  }
}

}  // namespace

Tensor apply_primitive(Tape& tape, OpKind kind, std::span<const Tensor> operands,
                       const OpAttrs& attrs) {
  check(static_cast<int>(kind) >= 0 && kind < OpKind::kCount,
        "unknown primitive kind " + std::to_string(static_cast<int>(kind)));
  std::vector<int> out_shape;
  auto values =
      std::make_shared<const std::vector<double>>(compute_forward(kind, operands, attrs, out_shape));

  bool any_grad = false;
  for (const auto& t : operands) any_grad = any_grad || t.requires_grad;

  Tensor out;
  out.shape = out_shape;
  out.values = values;
  if (!any_grad) return out;

  Tape::Record rec;
  rec.kind = kind;
  rec.attrs = attrs;
  rec.inputs.reserve(operands.size());
  for (const auto& t : operands) {
    if (t.node_id != kNoNode) {
      check(t.tape_id == tape.id(), std::string(op_name(kind)) + ": operand belongs to tape " +
                                        std::to_string(t.tape_id) + ", not the active tape");
      rec.inputs.push_back(t.node_id);
    } else {
      check(!t.requires_grad,
            std::string(op_name(kind)) +
                ": requires-grad operand is not on a tape; create it via Tape::leaf");
      rec.inputs.push_back(tape.add_node(t.shape, t.values, false));
    }
  }
  out.requires_grad = true;
  out.node_id = tape.add_node(out_shape, values, true);
  out.tape_id = tape.id();
  rec.output = out.node_id;
  tape.records_.push_back(std::move(rec));
  return out;
}

GradMap backward(Tape& tape, const Tensor& loss) {
  check(!tape.consumed_, "backward: tape already consumed");
  check(loss.is_scalar(), "backward: loss must be a scalar, got shape " + shape_str(loss.shape));
  check(loss.node_id != kNoNode && loss.tape_id == tape.id(),
        "backward: loss was not produced on the active tape");
  tape.consumed_ = true;

  const auto numel_of = [&](NodeId id) -> size_t {
    size_t n = 1;
    for (int d : tape.nodes_[id].shape) n *= static_cast<size_t>(d);
    return n;
  };

  GradMap gm;
  gm.grads_.resize(tape.nodes_.size());
  gm.shapes_.reserve(tape.nodes_.size());
  for (const auto& n : tape.nodes_) gm.shapes_.push_back(n.shape);

  gm.grads_[loss.node_id] = {1.0};

  auto grad_buf = [&](NodeId id) -> std::vector<double>& {
    auto& g = gm.grads_[id];
    if (g.empty()) g.assign(numel_of(id), 0.0);
    return g;
  };
  auto val = [&](NodeId id) -> const std::vector<double>& { return *tape.nodes_[id].values; };
  auto wants = [&](NodeId id) { return tape.nodes_[id].requires_grad; };

  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) {
    const auto& r = *it;
    const auto& g = gm.grads_[r.output];
    if (g.empty()) continue;  // output does not influence the loss
    const auto& oshape = tape.nodes_[r.output].shape;

    switch (r.kind) {
      case OpKind::kAdd: {
        for (int side = 0; side < 2; ++side) {
          if (!wants(r.inputs[side])) continue;
          auto& dst = grad_buf(r.inputs[side]);
          for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
        break;
      }
      case OpKind::kMul: {
        const auto& a = val(r.inputs[0]);
        const auto& b = val(r.inputs[1]);
        if (wants(r.inputs[0])) {
          auto& da = grad_buf(r.inputs[0]);
          for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
        }
        if (wants(r.inputs[1])) {
          auto& db = grad_buf(r.inputs[1]);
          for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kScale: {
        if (wants(r.inputs[0])) {
          auto& dx = grad_buf(r.inputs[0]);
          for (size_t i = 0; i < g.size(); ++i) dx[i] += r.attrs.scalar * g[i];
        }
        break;
      }
      case OpKind::kMatmul: {
        const auto& ashape = tape.nodes_[r.inputs[0]].shape;
        const int rr = ashape[0], k = ashape[1], c = oshape[1];
        if (wants(r.inputs[0]))
          mm_nt_acc(g.data(), val(r.inputs[1]).data(), grad_buf(r.inputs[0]).data(), rr, c, k);
        if (wants(r.inputs[1]))
          mm_tn_acc(val(r.inputs[0]).data(), g.data(), grad_buf(r.inputs[1]).data(), rr, k, c);
        break;
      }
      case OpKind::kScaledDot: {
        const auto& qshape = tape.nodes_[r.inputs[0]].shape;
        const int a = qshape[0], d = qshape[1], b = oshape[1];
        if (wants(r.inputs[0])) {
          auto& dq = grad_buf(r.inputs[0]);
          std::vector<double> sg(g);
          for (double& v : sg) v *= r.attrs.scalar;
          mm_nn_acc(sg.data(), val(r.inputs[1]).data(), dq.data(), a, b, d);
        }
        if (wants(r.inputs[1])) {
          auto& dk = grad_buf(r.inputs[1]);
          std::vector<double> sg(g);
          for (double& v : sg) v *= r.attrs.scalar;
          mm_tn_acc(sg.data(), val(r.inputs[0]).data(), dk.data(), a, b, d);
        }
        break;
      }
      case OpKind::kAffine: {
        const auto& xshape = tape.nodes_[r.inputs[0]].shape;
        const int t = xshape[0], in = xshape[1], out = oshape[1];
        if (wants(r.inputs[0]))
          mm_nn_acc(g.data(), val(r.inputs[1]).data(), grad_buf(r.inputs[0]).data(), t, out, in);
        if (wants(r.inputs[1]))
          mm_tn_acc(g.data(), val(r.inputs[0]).data(), grad_buf(r.inputs[1]).data(), t, out, in);
        if (wants(r.inputs[2])) {
          auto& db = grad_buf(r.inputs[2]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < out; ++j) db[j] += g[static_cast<size_t>(i) * out + j];
        }
        break;
      }
      case OpKind::kConcat: {
        if (r.attrs.axis == 0) {
          size_t off = 0;
          for (NodeId in : r.inputs) {
            const size_t n = numel_of(in);
            if (wants(in)) {
              auto& dx = grad_buf(in);
              for (size_t i = 0; i < n; ++i) dx[i] += g[off + i];
            }
            off += n;
          }
        } else {
          const int rrows = oshape[0], ctot = oshape[1];
          int coff = 0;
          for (NodeId in : r.inputs) {
            const int c = tape.nodes_[in].shape[1];
            if (wants(in)) {
              auto& dx = grad_buf(in);
              for (int i = 0; i < rrows; ++i)
                for (int j = 0; j < c; ++j)
                  dx[static_cast<size_t>(i) * c + j] +=
                      g[static_cast<size_t>(i) * ctot + coff + j];
            }
            coff += c;
          }
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (!wants(r.inputs[0])) break;
        const int t = oshape[0], d = oshape[1];
        const auto& y = val(r.output);
        auto& dx = grad_buf(r.inputs[0]);
        for (int i = 0; i < t; ++i) {
          const double* yr = y.data() + static_cast<size_t>(i) * d;
          const double* gr = g.data() + static_cast<size_t>(i) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
          double* dr = dx.data() + static_cast<size_t>(i) * d;
          for (int j = 0; j < d; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (!wants(r.inputs[0])) break;
        const auto& y = val(r.output);
        auto& dx = grad_buf(r.inputs[0]);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case OpKind::kTanh: {
        if (!wants(r.inputs[0])) break;
        const auto& y = val(r.output);
        auto& dx = grad_buf(r.inputs[0]);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpKind::kPrelu: {
        const int t = oshape[0], d = oshape[1];
        const auto& x = val(r.inputs[0]);
        const auto& s = val(r.inputs[1]);
        if (wants(r.inputs[0])) {
          auto& dx = grad_buf(r.inputs[0]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) {
              const size_t idx = static_cast<size_t>(i) * d + j;
              dx[idx] += g[idx] * (x[idx] >= 0.0 ? 1.0 : s[j]);
            }
        }
        if (wants(r.inputs[1])) {
          auto& ds = grad_buf(r.inputs[1]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) {
              const size_t idx = static_cast<size_t>(i) * d + j;
              if (x[idx] < 0.0) ds[j] += g[idx] * x[idx];
            }
        }
        break;
      }
      case OpKind::kLayerNorm: {
        if (!wants(r.inputs[0])) break;
        const int t = oshape[0], d = oshape[1];
        const auto& x = val(r.inputs[0]);
        const auto& y = val(r.output);
        auto& dx = grad_buf(r.inputs[0]);
        for (int i = 0; i < t; ++i) {
          const double* xr = x.data() + static_cast<size_t>(i) * d;
          const double* yr = y.data() + static_cast<size_t>(i) * d;
          const double* gr = g.data() + static_cast<size_t>(i) * d;
          double mu = 0.0;
          for (int j = 0; j < d; ++j) mu += xr[j];
          mu /= d;
          double var = 0.0;
          for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= d;
          const double inv = 1.0 / std::sqrt(var + r.attrs.eps);
          double gmean = 0.0, gymean = 0.0;
          for (int j = 0; j < d; ++j) {
            gmean += gr[j];
            gymean += gr[j] * yr[j];
          }
          gmean /= d;
          gymean /= d;
          double* dr = dx.data() + static_cast<size_t>(i) * d;
          for (int j = 0; j < d; ++j) dr[j] += inv * (gr[j] - gmean - yr[j] * gymean);
        }
        break;
      }
      case OpKind::kMulRows: {
        const int t = oshape[0], d = oshape[1];
        const auto& x = val(r.inputs[0]);
        const auto& row = val(r.inputs[1]);
        if (wants(r.inputs[0])) {
          auto& dx = grad_buf(r.inputs[0]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) {
              const size_t idx = static_cast<size_t>(i) * d + j;
              dx[idx] += g[idx] * row[j];
            }
        }
        if (wants(r.inputs[1])) {
          auto& dr = grad_buf(r.inputs[1]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) {
              const size_t idx = static_cast<size_t>(i) * d + j;
              dr[j] += g[idx] * x[idx];
            }
        }
        break;
      }
      case OpKind::kAddRows: {
        const int t = oshape[0], d = oshape[1];
        if (wants(r.inputs[0])) {
          auto& dx = grad_buf(r.inputs[0]);
          for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (wants(r.inputs[1])) {
          auto& dr = grad_buf(r.inputs[1]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) dr[j] += g[static_cast<size_t>(i) * d + j];
        }
        break;
      }
      case OpKind::kGatherRows: {
        if (!wants(r.inputs[0])) break;
        const int d = oshape[1];
        auto& dx = grad_buf(r.inputs[0]);
        for (size_t i = 0; i < r.attrs.indices.size(); ++i) {
          const size_t dst = static_cast<size_t>(r.attrs.indices[i]) * d;
          const size_t src = i * static_cast<size_t>(d);
          for (int j = 0; j < d; ++j) dx[dst + j] += g[src + j];
        }
        break;
      }
      case OpKind::kSliceRows: {
        if (!wants(r.inputs[0])) break;
        const int d = oshape[1];
        auto& dx = grad_buf(r.inputs[0]);
        const size_t off = static_cast<size_t>(r.attrs.begin) * d;
        for (size_t i = 0; i < g.size(); ++i) dx[off + i] += g[i];
        break;
      }
      case OpKind::kSliceCols: {
        if (!wants(r.inputs[0])) break;
        const auto& xshape = tape.nodes_[r.inputs[0]].shape;
        const int t = xshape[0], dfull = xshape[1], dout = oshape[1];
        auto& dx = grad_buf(r.inputs[0]);
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < dout; ++j)
            dx[static_cast<size_t>(i) * dfull + r.attrs.begin + j] +=
                g[static_cast<size_t>(i) * dout + j];
        break;
      }
      case OpKind::kReshape: {
        if (!wants(r.inputs[0])) break;
        auto& dx = grad_buf(r.inputs[0]);
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        break;
      }
      case OpKind::kMeanRows: {
        if (!wants(r.inputs[0])) break;
        const auto& xshape = tape.nodes_[r.inputs[0]].shape;
        const int t = xshape[0], d = xshape[1];
        auto& dx = grad_buf(r.inputs[0]);
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < d; ++j) dx[static_cast<size_t>(i) * d + j] += g[j] / t;
        break;
      }
      case OpKind::kSum: {
        if (!wants(r.inputs[0])) break;
        auto& dx = grad_buf(r.inputs[0]);
        for (double& v : dx) v += g[0];
        break;
      }
      case OpKind::kNllRows: {
        if (!wants(r.inputs[0])) break;
        const auto& p = val(r.inputs[0]);
        const auto& xshape = tape.nodes_[r.inputs[0]].shape;
        const int d = xshape[1];
        auto& dp = grad_buf(r.inputs[0]);
        for (size_t i = 0; i < r.attrs.indices.size(); ++i) {
          const size_t idx = i * static_cast<size_t>(d) + r.attrs.indices[i];
          if (p[idx] >= r.attrs.eps) dp[idx] -= g[0] / p[idx];
          // below the clamp the loss is constant in p, so no gradient
        }
        break;
      }
      default:
        fail("backward: unknown primitive in record");
    }
  }
  return gm;
}

}  // namespace mfaec
