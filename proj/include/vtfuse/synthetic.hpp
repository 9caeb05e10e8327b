#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vtfuse/rng.hpp"
#include "vtfuse/tensor.hpp"

namespace vtfuse {

// Latent state of one grasp scene.
struct SceneParams {
  double force_threshold = 0.0;  // newtons needed to lift
  double offset = 0.0;           // horizontal grasp placement error, pixels
  double object_size = 0.0;      // rendered disk radius, pixels
};

struct PreprocessConfig {
  double sigma = 2.0;
  Tensor sim_background;   // [3 x h x w] per sensor
  Tensor real_background;  // [3 x h x w] per sensor
};

// Plain-data description of the planted generator.
struct DataConfig {
  std::size_t visual_size = 24;     // visual image is 3 x s x s
  std::size_t sensor_height = 12;   // each tactile sensor is 3 x h x w,
  std::size_t sensor_width = 24;    // spliced to 3 x 2h x w
  double threshold_min = 11.0;
  double threshold_max = 25.0;
  double force_min = 10.0;
  double force_max = 34.0;
  double offset_max = 4.0;
  double margin = 3.6;
  double radius_min = 2.5;
  double radius_max = 6.0;
  double bump_sigma = 3.0;
  double bump_gain = 0.6;    // peak intensity at force_max
  double asymmetry = 0.06;   // left/right intensity skew per pixel of offset
  double visual_noise = 0.02;
  double tactile_noise = 0.02;
  double sigma = 2.0;        // tactile smoothing

  void validate() const;
  PreprocessConfig preprocess() const;
};

struct Sample {
  Tensor visual;   // [3 x s x s] in [0, 1]
  Tensor tactile;  // [3 x 2h x w] in [0, 1]
  double force = 0.0;
  int label = 0;
  SceneParams scene;  // latent; not serialized
};

inline constexpr double kDefaultMargin = 3.6;

int label_rule(const SceneParams& scene, double force, double margin = kDefaultMargin);

SceneParams sample_scene(const DataConfig& cfg, Rng& rng);
double radius_for_threshold(const DataConfig& cfg, double threshold);

Tensor render_visual(const SceneParams& scene, const DataConfig& cfg, Rng& rng);
// Full tactile pipeline: simulated contact, smoothing, background
// substitution, noise, splice.
Tensor render_tactile(const SceneParams& scene, double force, const DataConfig& cfg,
                      const PreprocessConfig& pre, Rng& rng);
Sample make_sample(const SceneParams& scene, double force, const DataConfig& cfg,
                   const PreprocessConfig& pre, Rng& rng);

// Pure function of (cfg, n, seed). Sample i draws from stream i of the seed.
std::vector<Sample> generate_dataset(const DataConfig& cfg, std::size_t n, std::uint64_t seed);

double positive_fraction(const std::vector<Sample>& data);

// Normalized (2r+1)^2 Gaussian kernel, r = ceil(3 sigma), row-major.
std::vector<double> gaussian_kernel(double sigma);
// Per-channel filtering with half-sample reflective borders.
Tensor gaussian_filter(const Tensor& image, double sigma);
// image - sim_background + real_background, clamped to [0, 1].
Tensor background_substitute(const Tensor& image, const Tensor& sim_background,
                             const Tensor& real_background);
Tensor splice_tactile(const Tensor& left, const Tensor& right);
std::pair<Tensor, Tensor> unsplice_tactile(const Tensor& spliced);
Tensor add_gaussian_noise(const Tensor& image, double std, Rng& rng);

// VTG1: "VTG1", u32 version, u32 count, u32[3] visual shape, u32[3] tactile
// shape, then per sample visual f32s, tactile f32s, force f32, label u8.
void write_dataset(const std::string& path, const std::vector<Sample>& data);
std::vector<Sample> read_dataset(const std::string& path);

}  // namespace vtfuse
