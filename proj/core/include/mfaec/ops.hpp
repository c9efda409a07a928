#pragma once

#include <array>
#include <span>

#include "mfaec/tensor.hpp"

// Thin builders over apply_primitive; every call lowers to one tape record.
namespace mfaec::ops {

inline Tensor apply2(Tape& t, OpKind k, const Tensor& a, const Tensor& b,
                     const OpAttrs& attrs = {}) {
  std::array<Tensor, 2> v{a, b};
  return apply_primitive(t, k, std::span<const Tensor>(v.data(), v.size()), attrs);
}

inline Tensor apply1(Tape& t, OpKind k, const Tensor& a, const OpAttrs& attrs = {}) {
  std::array<Tensor, 1> v{a};
  return apply_primitive(t, k, std::span<const Tensor>(v.data(), v.size()), attrs);
}

inline Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return apply2(t, OpKind::kAdd, a, b);
}
inline Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return apply2(t, OpKind::kMul, a, b);
}
inline Tensor scale(Tape& t, const Tensor& a, double c) {
  OpAttrs attrs;
  attrs.scalar = c;
  return apply1(t, OpKind::kScale, a, attrs);
}
inline Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  return apply2(t, OpKind::kMatmul, a, b);
}
inline Tensor scaled_dot(Tape& t, const Tensor& q, const Tensor& k, double scalar) {
  OpAttrs attrs;
  attrs.scalar = scalar;
  return apply2(t, OpKind::kScaledDot, q, k, attrs);
}
inline Tensor affine(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
  std::array<Tensor, 3> v{x, w, b};
  return apply_primitive(t, OpKind::kAffine, std::span<const Tensor>(v.data(), v.size()));
}
inline Tensor concat_rows(Tape& t, std::span<const Tensor> parts) {
  OpAttrs attrs;
  attrs.axis = 0;
  return apply_primitive(t, OpKind::kConcat, parts, attrs);
}
inline Tensor concat_rows(Tape& t, const Tensor& a, const Tensor& b) {
  std::array<Tensor, 2> v{a, b};
  return concat_rows(t, std::span<const Tensor>(v.data(), v.size()));
}
inline Tensor concat_cols(Tape& t, std::span<const Tensor> parts) {
  OpAttrs attrs;
  attrs.axis = 1;
  return apply_primitive(t, OpKind::kConcat, parts, attrs);
}
inline Tensor concat_cols(Tape& t, const Tensor& a, const Tensor& b) {
  std::array<Tensor, 2> v{a, b};
  return concat_cols(t, std::span<const Tensor>(v.data(), v.size()));
}
inline Tensor softmax_rows(Tape& t, const Tensor& x) {
  OpAttrs attrs;
  attrs.axis = 1;
  return apply1(t, OpKind::kSoftmax, x, attrs);
}
inline Tensor sigmoid(Tape& t, const Tensor& x) { return apply1(t, OpKind::kSigmoid, x); }
inline Tensor tanh(Tape& t, const Tensor& x) { return apply1(t, OpKind::kTanh, x); }
inline Tensor prelu(Tape& t, const Tensor& x, const Tensor& slope) {
  return apply2(t, OpKind::kPrelu, x, slope);
}
inline Tensor layer_norm(Tape& t, const Tensor& x, double eps) {
  OpAttrs attrs;
  attrs.eps = eps;
  return apply1(t, OpKind::kLayerNorm, x, attrs);
}
inline Tensor mul_rows(Tape& t, const Tensor& x, const Tensor& row) {
  return apply2(t, OpKind::kMulRows, x, row);
}
inline Tensor add_rows(Tape& t, const Tensor& x, const Tensor& row) {
  return apply2(t, OpKind::kAddRows, x, row);
}
inline Tensor gather_rows(Tape& t, const Tensor& x, std::vector<int> indices) {
  OpAttrs attrs;
  attrs.indices = std::move(indices);
  return apply1(t, OpKind::kGatherRows, x, attrs);
}
inline Tensor slice_rows(Tape& t, const Tensor& x, int begin, int end) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return apply1(t, OpKind::kSliceRows, x, attrs);
}
inline Tensor slice_cols(Tape& t, const Tensor& x, int begin, int end) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return apply1(t, OpKind::kSliceCols, x, attrs);
}
inline Tensor reshape(Tape& t, const Tensor& x, std::vector<int> dims) {
  OpAttrs attrs;
  attrs.dims = std::move(dims);
  return apply1(t, OpKind::kReshape, x, attrs);
}
inline Tensor mean_rows(Tape& t, const Tensor& x) { return apply1(t, OpKind::kMeanRows, x); }
inline Tensor sum_all(Tape& t, const Tensor& x) { return apply1(t, OpKind::kSum, x); }
inline Tensor nll_rows(Tape& t, const Tensor& probs, std::vector<int> targets,
                       double eps = 1e-12) {
  OpAttrs attrs;
  attrs.indices = std::move(targets);
  attrs.eps = eps;
  return apply1(t, OpKind::kNllRows, probs, attrs);
}

// h-head attention with learned projections: softmax(scale * Q K^T) V per
// head, heads concatenated, then the output projection. An optional additive
// mask (constant, 0 or a large negative) is applied to the scores.
struct AttentionProj {
  const Param* wq;
  const Param* bq;
  const Param* wk;
  const Param* bk;
  const Param* wv;
  const Param* bv;
  const Param* wo;
  const Param* bo;
};

Tensor multi_head_attention(Tape& tape, ParamBinder& bind, const AttentionProj& p,
                            const Tensor& query, const Tensor& keys_values, int heads,
                            const Tensor* score_mask = nullptr);

// Constant lower-triangular mask: 0 on and below the diagonal, -1e30 above.
Tensor causal_mask(int len);

}  // namespace mfaec::ops
