#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vtfuse/fusion.hpp"
#include "vtfuse/rng.hpp"
#include "vtfuse/tensor.hpp"

namespace vtfuse {

// One pixel-aligned pair: a real-style tactile image and its simulated-style twin.
struct GanPair {
  Tensor real;  // [3 x h x w] in [0, 1]
  Tensor sim;   // [3 x h x w] in [0, 1]
};

struct GanTrainConfig {
  double lambda = 10.0;  // weight of the pixel BCE reconstruction term
  double learning_rate = 2e-4;
  std::size_t batch_size = 10;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ConvLayer {
  Tensor w;  // [out x in x k x k], or [in x out x k x k] for a transposed layer
  Tensor b;  // [out]
};

// U-shaped encoder-decoder: two stride-2 downsampling convolutions, two
// stride-2 transposed convolutions with skip connections, and a 3x3 sigmoid
// output layer.
struct Generator {
  std::size_t channels = 3;
  std::size_t width = 16;  // channels after the first down stage
  ConvLayer down1, down2, up1, up2, out;

  static Generator init(std::size_t channels, std::size_t width, Rng& rng);
  std::vector<NamedTensor> parameters() const;
  Tensor operator()(const Tensor& x) const;
};

// Conditional patch discriminator on channel-concatenated (input, candidate):
// two stride-2 convolutions and a 3x3 scoring layer, sigmoid per patch.
struct Discriminator {
  std::size_t channels = 3;
  std::size_t width = 16;
  ConvLayer conv1, conv2, score;

  static Discriminator init(std::size_t channels, std::size_t width, Rng& rng);
  std::vector<NamedTensor> parameters() const;
  Tensor operator()(const Tensor& x, const Tensor& y) const;
};

struct GanModel {
  Generator generator;
  Discriminator discriminator;

  static GanModel init(std::uint64_t seed, std::size_t channels = 3, std::size_t width = 16);
  std::vector<NamedTensor> parameters() const;
};

using GeneratorFn = std::function<Tensor(const Tensor&)>;
using DiscriminatorFn = std::function<Tensor(const Tensor&, const Tensor&)>;

// 1/2 mean (D(x, y) - 1)^2 + 1/2 mean D(x, G(x))^2 over patches and batch.
// G(x) is computed without recording gradients.
Tensor lsgan_d_loss(const DiscriminatorFn& d, const std::vector<Tensor>& x, const std::vector<Tensor>& y,
                    const GeneratorFn& g);
// 1/2 mean (D(x, G(x)) - 1)^2.
Tensor lsgan_g_loss(const DiscriminatorFn& d, const std::vector<Tensor>& x, const GeneratorFn& g);
// Mean pixelwise BCE between generated and target images; both must lie in [0, 1].
Tensor reconstruction_loss(const std::vector<Tensor>& generated, const std::vector<Tensor>& target);
// Generator objective: adversarial term plus lambda times reconstruction.
Tensor generator_objective(const DiscriminatorFn& d, const std::vector<Tensor>& x, const std::vector<Tensor>& y,
                           const GeneratorFn& g, double lambda);

struct GanLosses {
  Tensor discriminator;
  Tensor generator;
};

GanLosses gan_objectives(const DiscriminatorFn& d, const GeneratorFn& g, const std::vector<Tensor>& x,
                         const std::vector<Tensor>& y, const GanTrainConfig& cfg);

struct GanEpoch {
  std::size_t epoch = 0;
  double d_loss = 0.0;  // mean over batches
  double g_loss = 0.0;
};

class GanTrainer {
 public:
  GanTrainer(GanModel& model, const GanTrainConfig& cfg);

  // One Adam update of the discriminator only; returns its loss.
  double discriminator_step(const std::vector<Tensor>& x, const std::vector<Tensor>& y);
  // One Adam update of the generator only; returns its loss.
  double generator_step(const std::vector<Tensor>& x, const std::vector<Tensor>& y);

 private:
  struct Impl;
  GanModel& model_;
  GanTrainConfig cfg_;
  std::shared_ptr<Impl> impl_;
};

// Alternating updates, one discriminator step then one generator step per batch.
std::vector<GanEpoch> train_gan(GanModel& model, const std::vector<GanPair>& pairs, const GanTrainConfig& cfg,
                                const std::function<void(const GanEpoch&)>& observer = {});

Tensor translate(const Generator& g, const Tensor& real);

struct PairConfig {
  std::size_t size = 32;
  double background = 0.08;
  std::size_t min_blobs = 1, max_blobs = 3;
  double blur_sigma = 1.0;
  double gain = 0.75;
  double vignette = 0.3;
  double texture = 0.05;
  double texture_base = 0.22;
};

// Real-style rendering of a simulated-style image: gain, vignette, blur and an
// additive background texture. Deterministic.
Tensor corrupt(const Tensor& sim, const PairConfig& cfg = {});
std::vector<GanPair> generate_paired_toy(std::size_t n, std::uint64_t seed, const PairConfig& cfg = {});
// First round(0.8 n) pairs for training, the rest for testing.
std::pair<std::vector<GanPair>, std::vector<GanPair>> split_pairs(const std::vector<GanPair>& pairs,
                                                                  double train_fraction = 0.8);

// VTP1: "VTP1", u32 version, u32 count, u32[3] shape, then per pair real f32s, sim f32s.
void write_pairs(const std::string& path, const std::vector<GanPair>& pairs);
std::vector<GanPair> read_pairs(const std::string& path);

void save_gan(const std::string& path, const GanModel& model);
GanModel load_gan(const std::string& path);

struct SsimConfig {
  std::size_t window = 8;
  double c1 = 1e-4;  // (0.01 * range)^2
  double c2 = 9e-4;  // (0.03 * range)^2
};

// Mean over all valid window positions (stride 1) and channels, with uniform
// window weights and population moments.
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});
double mean_ssim(const Generator& g, const std::vector<GanPair>& pairs, const SsimConfig& cfg = {});

}  // namespace vtfuse
