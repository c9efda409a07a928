#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mfaec {

using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

// Primitive set. Everything the model needs lowers to these; each one has a
// closed-form backward rule in backward().
enum class OpKind : int {
  kAdd,         // elementwise a + b, same shape
  kMul,         // elementwise a * b, same shape
  kScale,       // attrs.scalar * a
  kMatmul,      // (r,k) @ (k,c) -> (r,c)
  kScaledDot,   // attrs.scalar * q @ k^T, (a,d)x(b,d) -> (a,b)
  kAffine,      // x @ w^T + b, (t,in)x(out,in)+(out) -> (t,out); also the 1x1 time conv
  kConcat,      // attrs.axis in {0,1}, two or more operands
  kSoftmax,     // row-wise over the last axis, attrs.axis must name it
  kSigmoid,
  kTanh,
  kPrelu,       // (x (t,d), slope (d)), per-channel slope
  kLayerNorm,   // per-row (x - mean) / sqrt(var + attrs.eps), pre-affine
  kMulRows,     // (t,d) * (d) broadcast over rows
  kAddRows,     // (t,d) + (d) broadcast over rows
  kGatherRows,  // rows of x at attrs.indices; embedding lookup and row picks
  kSliceRows,   // x[attrs.begin:attrs.end, :]
  kSliceCols,   // x[:, attrs.begin:attrs.end]
  kReshape,     // same element count, row-major reinterpret
  kMeanRows,    // (t,d) -> (1,d) time-average pooling
  kSum,         // all elements -> scalar (1)
  kNllRows,     // -sum_r log(max(p[r, attrs.indices[r]], attrs.eps)) -> scalar
  kCount,
};

const char* op_name(OpKind kind);

struct OpAttrs {
  int axis = -1;
  double scalar = 1.0;
  double eps = 0.0;
  int begin = 0;
  int end = 0;
  std::vector<int> dims;     // kReshape target shape
  std::vector<int> indices;  // kGatherRows rows / kNllRows per-row targets
};

class Tape;

// Dense row-major value. Values are immutable once created; requires_grad
// tensors additionally carry their node id on the tape that produced them.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<const std::vector<double>> values;
  bool requires_grad = false;
  NodeId node_id = kNoNode;
  uint64_t tape_id = 0;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return numel() == 1; }
  const double* data() const { return values->data(); }
  double at(int64_t i) const { return (*values)[static_cast<size_t>(i)]; }
  double at(int r, int c) const { return (*values)[static_cast<size_t>(r) * cols() + c]; }
};

std::string shape_str(const std::vector<int>& shape);

// Node-less constant; participates in ops but never receives a gradient.
Tensor make_constant(std::vector<int> shape, std::vector<double> values);
Tensor make_zeros(std::vector<int> shape);

// Gradients of one backward pass, keyed by node id.
class GradMap {
 public:
  bool has(NodeId id) const;
  const std::vector<double>& at(NodeId id) const;
  Tensor tensor_at(NodeId id) const;

 private:
  friend GradMap backward(Tape& tape, const Tensor& loss);
  std::vector<std::vector<double>> grads_;
  std::vector<std::vector<int>> shapes_;
};

// Ordered record of primitive applications. Inputs of every record precede
// it, so one reverse sweep visits each node after all of its consumers.
class Tape {
 public:
  Tape();

  Tensor leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad);
  Tensor leaf_shared(std::vector<int> shape,
                     std::shared_ptr<const std::vector<double>> values,
                     bool requires_grad);

  uint64_t id() const { return id_; }
  size_t num_nodes() const { return nodes_.size(); }
  size_t num_records() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::vector<int> shape;
    std::shared_ptr<const std::vector<double>> values;
    bool requires_grad;
  };
  struct Record {
    OpKind kind;
    std::vector<NodeId> inputs;
    NodeId output;
    OpAttrs attrs;
  };

  NodeId add_node(std::vector<int> shape,
                  std::shared_ptr<const std::vector<double>> values,
                  bool requires_grad);

  uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<Record> records_;
  bool consumed_ = false;

  friend Tensor apply_primitive(Tape& tape, OpKind kind, std::span<const Tensor> operands,
                                const OpAttrs& attrs);
  friend GradMap backward(Tape& tape, const Tensor& loss);
};

// Computes the primitive's value. A tape record is appended only when some
// operand requires grad; the output then requires grad as well.
Tensor apply_primitive(Tape& tape, OpKind kind, std::span<const Tensor> operands,
                       const OpAttrs& attrs = {});

// Reverse sweep from a scalar loss. Seeds with 1, accumulates across fan-out,
// and marks the tape consumed. Throws on a non-scalar loss or a reused tape.
GradMap backward(Tape& tape, const Tensor& loss);

// Binds parameters to tape leaves, memoized so that every use of a parameter
// within one tape shares a node and fan-out gradients accumulate.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> values;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(&tape) {}

  Tensor operator()(const Param& p);
  NodeId node_of(const Param& p) const;  // kNoNode when the param was never used

 private:
  Tape* tape_;
  std::unordered_map<const Param*, Tensor> bound_;
};

}  // namespace mfaec
