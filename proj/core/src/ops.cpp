#include "mfaec/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace mfaec::ops {

Tensor multi_head_attention(Tape& tape, ParamBinder& bind, const AttentionProj& p,
                            const Tensor& query, const Tensor& keys_values, int heads,
                            const Tensor* score_mask) {
  const int d = query.cols();
  if (keys_values.cols() != d)
    throw std::runtime_error("attention: query/context feature sizes differ (" +
                             std::to_string(d) + " vs " + std::to_string(keys_values.cols()) +
                             ")");
  if (heads <= 0 || d % heads != 0)
    throw std::runtime_error("attention: feature size " + std::to_string(d) +
                             " not divisible by " + std::to_string(heads) + " heads");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = affine(tape, query, bind(*p.wq), bind(*p.bq));
  Tensor k = affine(tape, keys_values, bind(*p.wk), bind(*p.bk));
  Tensor v = affine(tape, keys_values, bind(*p.wv), bind(*p.bv));

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    Tensor scores = scaled_dot(tape, qh, kh, scale);
    if (score_mask != nullptr) scores = add(tape, scores, *score_mask);
    Tensor weights = softmax_rows(tape, scores);
    head_outs.push_back(matmul(tape, weights, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0]
                             : concat_cols(tape, std::span<const Tensor>(head_outs.data(),
                                                                         head_outs.size()));
  return affine(tape, merged, bind(*p.wo), bind(*p.bo));
}

Tensor causal_mask(int len) {
  std::vector<double> m(static_cast<size_t>(len) * len, 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) m[static_cast<size_t>(i) * len + j] = -1e30;
  return make_constant({len, len}, std::move(m));
}

}  // namespace mfaec::ops
