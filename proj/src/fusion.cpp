#include "vtfuse/fusion.hpp"

#include <string>
#include <tuple>

#include "vtfuse/errors.hpp"
#include "vtfuse/ops.hpp"

namespace vtfuse {

namespace {

void require_rows(const char* op, const Tensor& x, std::size_t rows, std::size_t width) {
  if (!x.defined() || x.rank() != 2 || x.dim(0) != rows || x.dim(1) != width) {
    throw DimensionError(std::string(op) + ": expected [" + std::to_string(rows) + "x" +
                         std::to_string(width) + "], got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("nothing")));
  }
}

// Per-sample [v_b; h_b] row blocks.
Tensor interleave(const Tensor& v, const Tensor& h, std::size_t sv, std::size_t sh, std::size_t batch) {
  if (batch == 1) return concat({v, h}, 0);
  std::vector<Tensor> parts;
  parts.reserve(2 * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    parts.push_back(slice(v, 0, b * sv, sv));
    parts.push_back(slice(h, 0, b * sh, sh));
  }
  return concat(parts, 0);
}

PositionalEncoding positions(const FusionConfig& cfg, std::size_t length) {
  return cfg.positional ? sinusoidal_positions(length, cfg.model_dim())
                        : zero_positions(length, cfg.model_dim());
}

void push_block(std::vector<NamedTensor>& out, const std::string& prefix, const BlockParams& p) {
  out.push_back({prefix + ".wq", p.attn.wq});
  out.push_back({prefix + ".wk", p.attn.wk});
  out.push_back({prefix + ".wv", p.attn.wv});
  out.push_back({prefix + ".wo", p.attn.wo});
  out.push_back({prefix + ".ffn.w1", p.ffn.w1});
  out.push_back({prefix + ".ffn.b1", p.ffn.b1});
  out.push_back({prefix + ".ffn.w2", p.ffn.w2});
  out.push_back({prefix + ".ffn.b2", p.ffn.b2});
}

void push_backbone(std::vector<NamedTensor>& out, const std::string& prefix, const BackboneParams& p) {
  for (std::size_t i = 0; i < p.conv_w.size(); ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i) + ".w", p.conv_w[i]});
    out.push_back({prefix + ".conv" + std::to_string(i) + ".b", p.conv_b[i]});
  }
  out.push_back({prefix + ".reduce.w", p.reduce_w});
  out.push_back({prefix + ".reduce.b", p.reduce_b});
}

}  // namespace

std::size_t BackboneConfig::output_side(std::size_t input) const {
  std::size_t side = input;
  for (const ConvStage& s : stages) side = conv_output_extent(side, s.kernel, {s.stride, s.kernel / 2});
  return side;
}

void BackboneConfig::validate() const {
  if (in_channels == 0 || reduce_dim == 0) throw ContractError("backbone widths must be positive");
  for (const ConvStage& s : stages) {
    if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
      throw ContractError("backbone stage needs positive channels, kernel and stride");
    }
  }
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams p;
  std::size_t c_in = cfg.in_channels;
  for (const ConvStage& s : cfg.stages) {
    const std::size_t area = s.kernel * s.kernel;
    p.conv_w.push_back(xavier_uniform({s.out_channels, c_in, s.kernel, s.kernel}, c_in * area,
                                      s.out_channels * area, rng));
    p.conv_b.push_back(Tensor::zeros({s.out_channels}, true));
    c_in = s.out_channels;
  }
  p.reduce_w = xavier_uniform({cfg.reduce_dim, c_in, 1, 1}, c_in, cfg.reduce_dim, rng);
  p.reduce_b = Tensor::zeros({cfg.reduce_dim}, true);
  return p;
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::VisualOnly: return "visual-only";
    case Variant::TactileOnly: return "tactile-only";
    case Variant::Concat: return "concat";
    case Variant::OursM: return "ours-m";
    case Variant::Full: return "ours";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected visual-only, tactile-only, concat, ours-m or ours)");
}

FusionConfig FusionConfig::toy(Variant variant) {
  FusionConfig cfg;
  cfg.variant = variant;
  return cfg;
}

std::size_t FusionConfig::visual_length() const {
  const std::size_t side = visual.output_side(image_size);
  return side * side;
}

std::size_t FusionConfig::tactile_length() const {
  const std::size_t side = tactile.output_side(image_size);
  return side * side;
}

void FusionConfig::validate() const {
  visual.validate();
  tactile.validate();
  if (visual.reduce_dim != tactile.reduce_dim) {
    throw ContractError("both streams must reduce to the same width");
  }
  if (variant == Variant::Full && layers == 0) {
    throw ContractError("full fusion needs at least one fusion layer");
  }
  if (ffn_dim == 0 || head_hidden == 0 || image_size == 0) {
    throw ContractError("ffn width, head width and image size must be positive");
  }
  mha().validate();
  (void)visual_length();
  (void)tactile_length();
}

FusionModel FusionModel::init(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  FusionModel m;
  m.cfg = cfg;
  if (cfg.uses_visual()) m.visual = BackboneParams::init(cfg.visual, rng);
  if (cfg.uses_tactile()) m.tactile = BackboneParams::init(cfg.tactile, rng);
  const MhaConfig mha = cfg.mha();
  for (std::size_t l = 0; l < cfg.active_layers(); ++l) {
    FusionLayerParams layer;
    layer.msa_v = BlockParams::init(mha, cfg.ffn_dim, rng);
    layer.msa_h = BlockParams::init(mha, cfg.ffn_dim, rng);
    layer.mca_v = BlockParams::init(mha, cfg.ffn_dim, rng);
    layer.mca_h = BlockParams::init(mha, cfg.ffn_dim, rng);
    m.layers.push_back(std::move(layer));
  }
  if (cfg.uses_co_attention()) m.co_attention = BlockParams::init(mha, cfg.ffn_dim, rng);
  m.head = FfnParams::init(cfg.head_input(), cfg.head_hidden, 1, rng);
  return m;
}

std::vector<NamedTensor> FusionModel::parameters() const {
  std::vector<NamedTensor> out;
  if (cfg.uses_visual()) push_backbone(out, "visual", visual);
  if (cfg.uses_tactile()) push_backbone(out, "tactile", tactile);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    push_block(out, prefix + ".msa_v", layers[l].msa_v);
    push_block(out, prefix + ".msa_h", layers[l].msa_h);
    push_block(out, prefix + ".mca_v", layers[l].mca_v);
    push_block(out, prefix + ".mca_h", layers[l].mca_h);
  }
  if (cfg.uses_co_attention()) push_block(out, "co", co_attention);
  out.push_back({"head.w1", head.w1});
  out.push_back({"head.b1", head.b1});
  out.push_back({"head.w2", head.w2});
  out.push_back({"head.b2", head.b2});
  return out;
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& p : parameters()) n += p.tensor.size();
  return n;
}

Tensor extract_features(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params) {
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels || image.dim(1) != image.dim(2)) {
    throw DimensionError("extract_features: expected square [" + std::to_string(cfg.in_channels) +
                         " x H x H] image, got " + shape_str(image.shape()));
  }
  if (params.conv_w.size() != cfg.stages.size()) {
    throw DimensionError("extract_features: backbone has " + std::to_string(params.conv_w.size()) +
                         " stages, config expects " + std::to_string(cfg.stages.size()));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const ConvStage& s = cfg.stages[i];
    x = relu(add_channel_bias(conv2d(x, params.conv_w[i], {s.stride, s.kernel / 2}), params.conv_b[i]));
  }
  x = add_channel_bias(conv2d(x, params.reduce_w), params.reduce_b);
  const std::size_t d = x.dim(0), seq = x.dim(1) * x.dim(2);
  return transpose(reshape(x, {d, seq}));
}

Tensor extract_batch(const std::vector<Tensor>& images, const BackboneConfig& cfg,
                     const BackboneParams& params) {
  if (images.empty()) throw DimensionError("extract_batch: empty batch");
  std::vector<Tensor> seqs;
  seqs.reserve(images.size());
  for (const Tensor& im : images) seqs.push_back(extract_features(im, cfg, params));
  return images.size() == 1 ? seqs.front() : concat(seqs, 0);
}

Tensor segment_mean(const Tensor& x, std::size_t rows) {
  if (x.rank() != 2 || rows == 0 || x.dim(0) % rows != 0) {
    throw DimensionError("segment_mean: cannot split " + shape_str(x.shape()) + " into blocks of " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t batch = x.dim(0) / rows, width = x.dim(1);
  const double scale = 1.0 / static_cast<double>(rows);
  std::vector<double> out(batch * width, 0.0);
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) out[b * width + c] += xv[(b * rows + r) * width + c];
  for (double& v : out) v *= scale;
  return make_op("segment_mean", {batch, width}, std::move(out), {x},
                 {[rows, width, scale](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) {
                     in[0][i] += scale * g[(i / (rows * width)) * width + i % width];
                   }
                 }});
}

Tensor fusion_forward(const Tensor& x_v, const Tensor& x_h, const FusionModel& model, std::size_t batch) {
  const FusionConfig& cfg = model.cfg;
  const std::size_t d = cfg.model_dim(), sv = cfg.visual_length(), sh = cfg.tactile_length();
  if (cfg.uses_visual()) require_rows("fusion_forward visual", x_v, batch * sv, d);
  if (cfg.uses_tactile()) require_rows("fusion_forward tactile", x_h, batch * sh, d);

  switch (cfg.variant) {
    case Variant::VisualOnly: return segment_mean(x_v, sv);
    case Variant::TactileOnly: return segment_mean(x_h, sh);
    case Variant::Concat: return concat({segment_mean(x_v, sv), segment_mean(x_h, sh)}, 1);
    case Variant::OursM:
    case Variant::Full: break;
  }

  const MhaConfig mha = cfg.mha();
  const PositionalEncoding pv = positions(cfg, sv), ph = positions(cfg, sh);
  Tensor v = x_v, h = x_h;
  for (const FusionLayerParams& layer : model.layers) {
    v = msa_block(v, pv, layer.msa_v, mha, batch);
    h = msa_block(h, ph, layer.msa_h, mha, batch);
    std::tie(v, h) = mca_block(v, h, pv, ph, layer.mca_v, layer.mca_h, mha, batch);
  }
  Tensor joint = interleave(v, h, sv, sh, batch);
  joint = msa_block(joint, positions(cfg, sv + sh), model.co_attention, mha, batch);
  return segment_mean(joint, sv + sh);
}

Tensor predict(const Tensor& features, const FfnParams& head) {
  const Tensor rows = features.rank() == 1 ? reshape(features, {1, features.dim(0)}) : features;
  const Tensor logits = ffn(rows, head);
  return sigmoid(reshape(logits, {logits.dim(0)}));
}

Tensor model_forward(const FusionModel& model, const std::vector<Tensor>& visual,
                     const std::vector<Tensor>& tactile) {
  const FusionConfig& cfg = model.cfg;
  const std::size_t batch = cfg.uses_visual() ? visual.size() : tactile.size();
  if (batch == 0) throw DimensionError("model_forward: empty batch");
  if (cfg.uses_visual() && cfg.uses_tactile() && visual.size() != tactile.size()) {
    throw DimensionError("model_forward: " + std::to_string(visual.size()) + " visual vs " +
                         std::to_string(tactile.size()) + " tactile images");
  }
  const Tensor xv = cfg.uses_visual() ? extract_batch(visual, cfg.visual, model.visual) : Tensor();
  const Tensor xh = cfg.uses_tactile() ? extract_batch(tactile, cfg.tactile, model.tactile) : Tensor();
  return predict(fusion_forward(xv, xh, model, batch), model.head);
}

Tensor bce_loss(const Tensor& p, const Tensor& y, Reduction reduction) {
  if (p.shape() != y.shape()) {
    throw DimensionError("bce_loss: probabilities " + shape_str(p.shape()) + " vs labels " +
                         shape_str(y.shape()));
  }
  const Tensor pc = clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  const Tensor pos = mul(y, log(pc));
  const Tensor neg = mul(add_scalar(mul_scalar(y, -1.0), 1.0), log(add_scalar(mul_scalar(pc, -1.0), 1.0)));
  const Tensor total = mul_scalar(sum(add(pos, neg)), -1.0);
  return reduction == Reduction::Sum ? total : mul_scalar(total, 1.0 / static_cast<double>(p.size()));
}

Tensor bce_loss(const Tensor& p, const std::vector<double>& y, Reduction reduction) {
  return bce_loss(p, Tensor(p.shape(), y), reduction);
}

}  // namespace vtfuse
