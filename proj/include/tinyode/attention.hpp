#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tinyode/fixed.hpp"
#include "tinyode/layers.hpp"
#include "tinyode/tensor.hpp"

namespace tinyode {

enum class AttentionActivation { kRelu, kSoftmax };

// Learnable relative position table for one head. The full table is the
// broadcast sum R[y*W + x] = rel_h[y] + rel_w[x].
struct RelPosEncoding {
  FloatTensor rel_h;  // [H, Dh]
  FloatTensor rel_w;  // [W, Dh]

  std::size_t height() const { return rel_h.dim(0); }
  std::size_t width() const { return rel_w.dim(0); }
  std::size_t head_dim() const { return rel_h.dim(1); }
  void validate() const;
  FloatTensor expanded() const;  // [H*W, Dh]
};

struct AttentionSpec {
  std::size_t heads = 4;
  FloatTensor wq;  // [D, D]; head i owns columns [i*Dh, (i+1)*Dh)
  FloatTensor wk;
  FloatTensor wv;
  AttentionActivation activation = AttentionActivation::kRelu;

  std::size_t dim() const { return wq.dim(0); }
  std::size_t head_dim() const { return dim() / heads; }
  void validate() const;
};

// Columns [head*Dh, (head+1)*Dh) of a [D, D] matrix.
FloatTensor head_slice(const FloatTensor& w, std::size_t head, std::size_t head_dim);

// Q R^T for q: [N, Dh].
FloatTensor build_relative_logits(const FloatTensor& q, const RelPosEncoding& rel);

// activation((Q K^T + Q R^T) / sqrt(Dh)); softmax is row-wise.
FloatTensor attention_matrix(const FloatTensor& q, const FloatTensor& k, const FloatTensor& rel_logits,
                             AttentionActivation activation);

// One head: [N, D] -> [N, Dh].
FloatTensor self_attention_head(const FloatTensor& x, const AttentionSpec& spec, std::size_t head,
                                const RelPosEncoding& rel);

// Concatenated head outputs before the final normalisation: [N, D].
FloatTensor multi_head_attention(const FloatTensor& x, const AttentionSpec& spec, std::span<const RelPosEncoding> rel);

// LayerNorm over the concatenated heads.
FloatTensor mhsa(const FloatTensor& x, const AttentionSpec& spec, std::span<const RelPosEncoding> rel,
                 const NormParams& ln);

// Absolute sinusoidal encoding [N, D]: sin on even columns, cos on odd.
FloatTensor sinusoidal_encoding(std::size_t tokens, std::size_t dim);

// Fixed datapath. Projection weights and the expanded position tables are
// held in kWeightFormat; Q, K, V, the logits and A live in kActivationFormat.
// Q K^T (20 fractional bits) is aligned to Q R^T (22 fractional bits) in the
// wide accumulator before the 1/sqrt(Dh) scaling and a single rounding.
struct FixedAttentionSpec {
  std::size_t heads = 4;
  FixedTensor wq;
  FixedTensor wk;
  FixedTensor wv;
  std::vector<FixedTensor> rel;  // per head, [N, Dh]
  AttentionActivation activation = AttentionActivation::kRelu;

  static FixedAttentionSpec from_float(const AttentionSpec& spec, std::span<const RelPosEncoding> rel);
  std::size_t dim() const { return wq.shape()[0]; }
  std::size_t head_dim() const { return dim() / heads; }
};

FixedTensor self_attention_head(const FixedTensor& x, const FixedAttentionSpec& spec, std::size_t head);
FixedTensor multi_head_attention(const FixedTensor& x, const FixedAttentionSpec& spec);
FixedTensor mhsa(const FixedTensor& x, const FixedAttentionSpec& spec, const FixedNormParams& ln);

}  // namespace tinyode
