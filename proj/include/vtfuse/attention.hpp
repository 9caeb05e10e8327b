#pragma once

#include <cstddef>
#include <utility>

#include "vtfuse/rng.hpp"
#include "vtfuse/tensor.hpp"

namespace vtfuse {

// Head layout of a multi-head attention module. key_dim == value_dim ==
// model_dim / heads.
struct MhaConfig {
  std::size_t heads = 4;
  std::size_t model_dim = 32;
  std::size_t key_dim = 8;
  std::size_t value_dim = 8;

  static MhaConfig make(std::size_t heads, std::size_t model_dim);
  static MhaConfig paper() { return make(8, 512); }
  static MhaConfig toy() { return make(4, 32); }
  void validate() const;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)), drawn in row-major order.
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Per-head projections stored side by side: head h owns columns
// [h*key_dim, (h+1)*key_dim) of wq and wk, and the matching value columns.
struct ProjectionWeights {
  Tensor wq;  // d x heads*key_dim
  Tensor wk;  // d x heads*key_dim
  Tensor wv;  // d x heads*value_dim
  Tensor wo;  // heads*value_dim x d

  static ProjectionWeights init(const MhaConfig& cfg, Rng& rng);
  static ProjectionWeights zeros(const MhaConfig& cfg);
  void check(const MhaConfig& cfg) const;
};

struct FfnParams {
  Tensor w1;  // d x d_ff
  Tensor b1;  // d_ff
  Tensor w2;  // d_ff x d_out
  Tensor b2;  // d_out

  static FfnParams init(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Rng& rng);
  static FfnParams zeros(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim);
};

struct PositionalEncoding {
  Tensor table;  // seq_len x d, no gradient

  std::size_t length() const { return table.dim(0); }
  std::size_t width() const { return table.dim(1); }
};

// P[pos, 2i] = sin(pos / 10000^(2i/d)), P[pos, 2i+1] = cos(same). d must be even.
PositionalEncoding sinusoidal_positions(std::size_t seq_len, std::size_t d);
// All-zero table, used to switch positions off.
PositionalEncoding zero_positions(std::size_t seq_len, std::size_t d);

struct Qkv {
  Tensor q;
  Tensor k;
  Tensor v;
};

Qkv project_qkv(const Tensor& x, const ProjectionWeights& w, const MhaConfig& cfg);
Qkv project_qkv(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                const ProjectionWeights& w, const MhaConfig& cfg);

// softmax(Q K^T / sqrt(d_k)), row-stochastic [S_q x S_k].
Tensor attention_weights(const Tensor& q, const Tensor& k);
// softmax(Q K^T / sqrt(d_k)) V built from primitive ops.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Fused per-head attention over `batch` independent sequences stacked along
// rows: q is [batch*S_q x heads*d_k], k is [batch*S_k x heads*d_k], v is
// [batch*S_k x heads*d_v]. Result is the concatenation over heads,
// [batch*S_q x heads*d_v]. Mathematically identical to running
// scaled_dot_attention on every (sequence, head) slice.
Tensor attend_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                    std::size_t batch = 1);

// Concat_h(SA(Q_h, K_h, V_h)) W^O. Inputs are [batch*S x d] stacks.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const ProjectionWeights& w, const MhaConfig& cfg,
                            std::size_t batch = 1);

// relu(x W1 + b1) W2 + b2, no residual.
Tensor ffn(const Tensor& x, const FfnParams& p);

// Attention module followed by its feed-forward sublayer.
struct BlockParams {
  ProjectionWeights attn;
  FfnParams ffn;

  static BlockParams init(const MhaConfig& cfg, std::size_t ffn_dim, Rng& rng);
  static BlockParams zeros(const MhaConfig& cfg, std::size_t ffn_dim);
};

// x <- x + MHSA(x + P, x + P, x); x <- x + FFN(x). The value path carries no
// positional encoding.
Tensor msa_block(const Tensor& x, const PositionalEncoding& pos, const BlockParams& params,
                 const MhaConfig& cfg, std::size_t batch = 1);

// Simultaneous cross-attention update of two streams:
//   x_v <- x_v + MHSA(x_v + P_v, x_h + P_h, x_h)
//   x_h <- x_h + MHSA(x_h + P_h, x_v + P_v, x_v)
// both from the pre-update inputs, each followed by its residual FFN.
std::pair<Tensor, Tensor> mca_block(const Tensor& x_v, const Tensor& x_h,
                                    const PositionalEncoding& pos_v,
                                    const PositionalEncoding& pos_h, const BlockParams& params_v,
                                    const BlockParams& params_h, const MhaConfig& cfg,
                                    std::size_t batch = 1);

}  // namespace vtfuse
