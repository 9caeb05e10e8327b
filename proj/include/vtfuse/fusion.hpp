#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vtfuse/attention.hpp"
#include "vtfuse/tensor.hpp"

namespace vtfuse {

struct ConvStage {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
};

// Small convolutional stand-in for a pretrained backbone. Each stage is
// conv (padding kernel/2) + bias + ReLU; a 1x1 convolution then reduces the
// channel count to reduce_dim.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::vector<ConvStage> stages{{8, 3, 2}, {16, 3, 2}, {32, 3, 1}};
  std::size_t reduce_dim = 32;

  static BackboneConfig toy() { return {}; }
  // Spatial side after all stages for a square input of side `input`.
  std::size_t output_side(std::size_t input) const;
  void validate() const;
};

struct BackboneParams {
  std::vector<Tensor> conv_w;  // per stage [C_out x C_in x k x k]
  std::vector<Tensor> conv_b;  // per stage [C_out]
  Tensor reduce_w;             // [d x C_last x 1 x 1]
  Tensor reduce_b;             // [d]

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
};

enum class Variant { VisualOnly, TactileOnly, Concat, OursM, Full };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::VisualOnly, Variant::TactileOnly, Variant::Concat,
                                           Variant::OursM, Variant::Full};

struct FusionConfig {
  BackboneConfig visual = BackboneConfig::toy();
  BackboneConfig tactile = BackboneConfig::toy();
  std::size_t image_size = 16;  // square network input side
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_dim = 128;
  std::size_t head_hidden = 32;
  bool positional = true;
  Variant variant = Variant::Full;

  static FusionConfig toy(Variant variant = Variant::Full);
  std::size_t model_dim() const { return visual.reduce_dim; }
  MhaConfig mha() const { return MhaConfig::make(heads, model_dim()); }
  std::size_t visual_length() const;
  std::size_t tactile_length() const;
  bool uses_visual() const { return variant != Variant::TactileOnly; }
  bool uses_tactile() const { return variant != Variant::VisualOnly; }
  // Number of fusion layers actually built for this variant.
  std::size_t active_layers() const { return variant == Variant::Full ? layers : 0; }
  bool uses_co_attention() const { return variant == Variant::Full || variant == Variant::OursM; }
  std::size_t head_input() const { return variant == Variant::Concat ? 2 * model_dim() : model_dim(); }
  void validate() const;
};

struct FusionLayerParams {
  BlockParams msa_v;
  BlockParams msa_h;
  BlockParams mca_v;
  BlockParams mca_h;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct FusionModel {
  FusionConfig cfg;
  BackboneParams visual;   // empty for tactile-only
  BackboneParams tactile;  // empty for visual-only
  std::vector<FusionLayerParams> layers;
  BlockParams co_attention;  // empty unless the variant uses it
  FfnParams head;

  static FusionModel init(const FusionConfig& cfg, std::uint64_t seed);
  // Stable, ordered list of trainable tensors sharing storage with the model.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
};

// [C x H x W] image -> [S x d] token sequence, S = H' * W'.
Tensor extract_features(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params);
// Stacks the per-image sequences of a batch along rows: [B*S x d].
Tensor extract_batch(const std::vector<Tensor>& images, const BackboneConfig& cfg,
                     const BackboneParams& params);

// Per-sample mean over consecutive blocks of `rows` rows: [B*rows x d] -> [B x d].
Tensor segment_mean(const Tensor& x, std::size_t rows);

// Fused feature vectors [B x head_input] from stacked sequences. x_v is
// [B*S_v x d] and x_h is [B*S_h x d]; the unused stream of a unimodal variant
// may be an undefined tensor.
Tensor fusion_forward(const Tensor& x_v, const Tensor& x_h, const FusionModel& model,
                      std::size_t batch = 1);

// sigmoid(FFN(features)) -> [B] probabilities. A rank-1 input is one sample.
Tensor predict(const Tensor& features, const FfnParams& head);

// End to end: images -> probabilities [B]. The list for an unused stream may be empty.
Tensor model_forward(const FusionModel& model, const std::vector<Tensor>& visual,
                     const std::vector<Tensor>& tactile);

enum class Reduction { Mean, Sum };

inline constexpr double kBceEpsilon = 1e-7;

// -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] with p clamped to [eps, 1 - eps].
// Labels may be any values in [0, 1]; shapes must match.
Tensor bce_loss(const Tensor& p, const Tensor& y, Reduction reduction = Reduction::Mean);
Tensor bce_loss(const Tensor& p, const std::vector<double>& y, Reduction reduction = Reduction::Mean);

}  // namespace vtfuse
