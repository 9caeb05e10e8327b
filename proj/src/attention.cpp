#include "vtfuse/attention.hpp"

#include <cmath>
#include <string>

#include "dense.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/ops.hpp"

namespace vtfuse {

namespace {

using dense::RowMatrix;

void require_width(const char* op, const Tensor& x, std::size_t width) {
  if (x.rank() != 2 || x.dim(1) != width) {
    throw DimensionError(std::string(op) + ": expected [S x " + std::to_string(width) + "], got " +
                         shape_str(x.shape()));
  }
}

std::size_t rows_per_item(const char* op, const Tensor& x, std::size_t batch) {
  if (batch == 0 || x.dim(0) % batch != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(x.dim(0)) +
                         " rows do not split into " + std::to_string(batch) + " sequences");
  }
  return x.dim(0) / batch;
}

Tensor with_positions(const Tensor& x, const PositionalEncoding& pos, std::size_t batch) {
  const std::size_t seq = rows_per_item("positional encoding", x, batch);
  if (pos.length() != seq || pos.width() != x.dim(1)) {
    throw DimensionError("positional encoding " + shape_str(pos.table.shape()) +
                         " does not match sequence of " + std::to_string(seq) + " x " +
                         std::to_string(x.dim(1)));
  }
  return add(x, batch == 1 ? pos.table : repeat_rows(pos.table, batch));
}

}  // namespace

MhaConfig MhaConfig::make(std::size_t heads, std::size_t model_dim) {
  MhaConfig cfg{heads, model_dim, heads ? model_dim / heads : 0, heads ? model_dim / heads : 0};
  cfg.validate();
  return cfg;
}

void MhaConfig::validate() const {
  if (heads == 0 || model_dim == 0 || model_dim % heads != 0) {
    throw ContractError("model width " + std::to_string(model_dim) +
                        " must be a positive multiple of head count " + std::to_string(heads));
  }
  if (key_dim * heads != model_dim || value_dim * heads != model_dim) {
    throw ContractError("key/value width must equal model width / heads");
  }
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

ProjectionWeights ProjectionWeights::init(const MhaConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  const std::size_t qk = cfg.heads * cfg.key_dim;
  const std::size_t vv = cfg.heads * cfg.value_dim;
  ProjectionWeights w;
  w.wq = xavier_uniform({d, qk}, d, qk, rng);
  w.wk = xavier_uniform({d, qk}, d, qk, rng);
  w.wv = xavier_uniform({d, vv}, d, vv, rng);
  w.wo = xavier_uniform({vv, d}, vv, d, rng);
  return w;
}

ProjectionWeights ProjectionWeights::zeros(const MhaConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  const std::size_t qk = cfg.heads * cfg.key_dim;
  const std::size_t vv = cfg.heads * cfg.value_dim;
  return {Tensor::zeros({d, qk}, true), Tensor::zeros({d, qk}, true), Tensor::zeros({d, vv}, true), Tensor::zeros({vv, d}, true)};
}

void ProjectionWeights::check(const MhaConfig& cfg) const {
  const std::size_t d = cfg.model_dim;
  const std::size_t qk = cfg.heads * cfg.key_dim;
  const std::size_t vv = cfg.heads * cfg.value_dim;
  if (wq.shape() != Shape{d, qk} || wk.shape() != Shape{d, qk} || wv.shape() != Shape{d, vv} ||
      wo.shape() != Shape{vv, d}) {
    throw DimensionError("projection weights " + shape_str(wq.shape()) + "/" +
                         shape_str(wk.shape()) + "/" + shape_str(wv.shape()) + "/" +
                         shape_str(wo.shape()) + " do not match heads=" +
                         std::to_string(cfg.heads) + " d=" + std::to_string(d));
  }
}

FfnParams FfnParams::init(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Rng& rng) {
  FfnParams p;
  p.w1 = xavier_uniform({in_dim, hidden_dim}, in_dim, hidden_dim, rng);
  p.b1 = Tensor::zeros({hidden_dim}, true);
  p.w2 = xavier_uniform({hidden_dim, out_dim}, hidden_dim, out_dim, rng);
  p.b2 = Tensor::zeros({out_dim}, true);
  return p;
}

FfnParams FfnParams::zeros(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim) {
  return {Tensor::zeros({in_dim, hidden_dim}, true), Tensor::zeros({hidden_dim}, true),
          Tensor::zeros({hidden_dim, out_dim}, true), Tensor::zeros({out_dim}, true)};
}

PositionalEncoding sinusoidal_positions(std::size_t seq_len, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ContractError("sinusoidal positions need an even width, got " + std::to_string(d));
  }
  std::vector<double> table(seq_len * d);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      table[pos * d + i] = std::sin(angle);
      table[pos * d + i + 1] = std::cos(angle);
    }
  }
  return {Tensor({seq_len, d}, std::move(table))};
}

PositionalEncoding zero_positions(std::size_t seq_len, std::size_t d) {
  return {Tensor({seq_len, d})};
}

Qkv project_qkv(const Tensor& x, const ProjectionWeights& w, const MhaConfig& cfg) {
  return project_qkv(x, x, x, w, cfg);
}

Qkv project_qkv(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                const ProjectionWeights& w, const MhaConfig& cfg) {
  w.check(cfg);
  require_width("project_qkv", q_in, cfg.model_dim);
  require_width("project_qkv", k_in, cfg.model_dim);
  require_width("project_qkv", v_in, cfg.model_dim);
  if (k_in.dim(0) != v_in.dim(0)) {
    throw DimensionError("project_qkv: key and value sequences differ in length");
  }
  return {matmul(q_in, w.wq), matmul(k_in, w.wk), matmul(v_in, w.wv)};
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " widths differ");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return softmax(mul_scalar(matmul(q, transpose(k)), scale), 1);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " and value " +
                         shape_str(v.shape()) + " lengths differ");
  }
  return matmul(attention_weights(q, k), v);
}

Tensor attend_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                    std::size_t batch) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0) || heads == 0 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
    throw DimensionError("attend_heads: incompatible Q " + shape_str(q.shape()) + ", K " +
                         shape_str(k.shape()) + ", V " + shape_str(v.shape()) + " for " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t sq = rows_per_item("attend_heads", q, batch);
  const std::size_t sk = rows_per_item("attend_heads", k, batch);
  const std::size_t qk_width = q.dim(1), v_width = v.dim(1);
  const std::size_t dk = qk_width / heads, dv = v_width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  const auto Sq = static_cast<Eigen::Index>(sq), Sk = static_cast<Eigen::Index>(sk);
  const auto Dk = static_cast<Eigen::Index>(dk), Dv = static_cast<Eigen::Index>(dv);
  const auto qs = static_cast<Eigen::Index>(qk_width), vs = static_cast<Eigen::Index>(v_width);

  // Attention weights per (sequence, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * sq * sk);
  std::vector<double> out(batch * sq * v_width);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const RowMatrix qh = dense::load(q.values().data() + b * sq * qk_width + h * dk, Sq, Dk, qs);
      const RowMatrix kh = dense::load(k.values().data() + b * sk * qk_width + h * dk, Sk, Dk, qs);
      const RowMatrix vh = dense::load(v.values().data() + b * sk * v_width + h * dv, Sk, Dv, vs);
      RowMatrix a = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < Sq; ++r) {
        const double peak = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - peak).exp();
        double total = 0.0;
        for (Eigen::Index c = 0; c < Sk; ++c) total += a(r, c);
        a.row(r) /= total;
      }
      dense::store(a, probs->data() + (b * heads + h) * sq * sk);
      const RowMatrix o = a * vh;
      dense::store(o, out.data() + b * sq * v_width + h * dv, vs);
    }
  }

  return make_op(
      "attend_heads", {batch * sq, v_width}, std::move(out), {q, k, v},
      {[q, k, v, probs, batch, heads, sq, sk, qk_width, v_width, dk, dv, scale](auto g, auto,
                                                                                 auto in) {
        const auto Sq = static_cast<Eigen::Index>(sq), Sk = static_cast<Eigen::Index>(sk);
        const auto Dk = static_cast<Eigen::Index>(dk), Dv = static_cast<Eigen::Index>(dv);
        const auto qs = static_cast<Eigen::Index>(qk_width), vs = static_cast<Eigen::Index>(v_width);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t q_off = b * sq * qk_width + h * dk;
            const std::size_t k_off = b * sk * qk_width + h * dk;
            const std::size_t v_off = b * sk * v_width + h * dv;
            const RowMatrix go = dense::load(g.data() + b * sq * v_width + h * dv, Sq, Dv, vs);
            const RowMatrix a = dense::load(probs->data() + (b * heads + h) * sq * sk, Sq, Sk);
            if (!in[2].empty()) {
              const RowMatrix dvh = a.transpose() * go;
              dense::accumulate(dvh, in[2].data() + v_off, vs);
            }
            if (in[0].empty() && in[1].empty()) continue;
            const RowMatrix vh = dense::load(v.values().data() + v_off, Sk, Dv, vs);
            RowMatrix da = go * vh.transpose();
            // Softmax Jacobian, row by row, folded with the 1/sqrt(d_k) scale.
            for (Eigen::Index r = 0; r < Sq; ++r) {
              double dot = 0.0;
              for (Eigen::Index c = 0; c < Sk; ++c) dot += da(r, c) * a(r, c);
              da.row(r) = (a.row(r).array() * (da.row(r).array() - dot)) * scale;
            }
            if (!in[0].empty()) {
              const RowMatrix dq = da * dense::load(k.values().data() + k_off, Sk, Dk, qs);
              dense::accumulate(dq, in[0].data() + q_off, qs);
            }
            if (!in[1].empty()) {
              const RowMatrix dkh = da.transpose() * dense::load(q.values().data() + q_off, Sq, Dk, qs);
              dense::accumulate(dkh, in[1].data() + k_off, qs);
            }
          }
        }
      }});
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const ProjectionWeights& w, const MhaConfig& cfg, std::size_t batch) {
  const Qkv p = project_qkv(q_in, k_in, v_in, w, cfg);
  return matmul(attend_heads(p.q, p.k, p.v, cfg.heads, batch), w.wo);
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  if (x.rank() != 2 || p.w1.rank() != 2 || x.dim(1) != p.w1.dim(0)) {
    throw DimensionError("ffn: input " + shape_str(x.shape()) + " vs W1 " + shape_str(p.w1.shape()));
  }
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

BlockParams BlockParams::init(const MhaConfig& cfg, std::size_t ffn_dim, Rng& rng) {
  BlockParams p;
  p.attn = ProjectionWeights::init(cfg, rng);
  p.ffn = FfnParams::init(cfg.model_dim, ffn_dim, cfg.model_dim, rng);
  return p;
}

BlockParams BlockParams::zeros(const MhaConfig& cfg, std::size_t ffn_dim) {
  return {ProjectionWeights::zeros(cfg), FfnParams::zeros(cfg.model_dim, ffn_dim, cfg.model_dim)};
}

Tensor msa_block(const Tensor& x, const PositionalEncoding& pos, const BlockParams& params,
                 const MhaConfig& cfg, std::size_t batch) {
  require_width("msa_block", x, cfg.model_dim);
  const Tensor xp = with_positions(x, pos, batch);
  const Tensor attended = add(x, multi_head_attention(xp, xp, x, params.attn, cfg, batch));
  return add(attended, ffn(attended, params.ffn));
}

std::pair<Tensor, Tensor> mca_block(const Tensor& x_v, const Tensor& x_h,
                                    const PositionalEncoding& pos_v,
                                    const PositionalEncoding& pos_h, const BlockParams& params_v,
                                    const BlockParams& params_h, const MhaConfig& cfg,
                                    std::size_t batch) {
  require_width("mca_block", x_v, cfg.model_dim);
  require_width("mca_block", x_h, cfg.model_dim);
  const Tensor vp = with_positions(x_v, pos_v, batch);
  const Tensor hp = with_positions(x_h, pos_h, batch);
  const Tensor v1 = add(x_v, multi_head_attention(vp, hp, x_h, params_v.attn, cfg, batch));
  const Tensor h1 = add(x_h, multi_head_attention(hp, vp, x_v, params_h.attn, cfg, batch));
  return {add(v1, ffn(v1, params_v.ffn)), add(h1, ffn(h1, params_h.ffn))};
}

}  // namespace vtfuse
