#include "vtfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vtfuse/binary_io.hpp"
#include "vtfuse/errors.hpp"

namespace vtfuse {

namespace {

constexpr std::string_view kMagic = "VTG1";
constexpr std::uint32_t kVersion = 1;

constexpr double kTable[3] = {0.55, 0.47, 0.38};
constexpr double kObject[3] = {0.85, 0.15, 0.10};
constexpr double kGripper[3] = {0.10, 0.20, 0.80};
constexpr double kGelTint[3] = {1.0, 0.8, 0.6};

// Index into [-n, 2n) folded back with half-sample symmetry: ... b a | a b c ... c | c b ...
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_image(const char* op, const Tensor& t) {
  if (t.rank() != 3) throw DimensionError(std::string(op) + ": expected [C x H x W], got " + shape_str(t.shape()));
}

float to_f32(double v) { return static_cast<float>(v); }

Tensor quantized(Tensor t) {
  for (double& v : t.values_mut()) v = static_cast<double>(to_f32(v));
  return t;
}

}  // namespace

void DataConfig::validate() const {
  if (visual_size < 4 || sensor_height < 2 || sensor_width < 2) {
    throw ContractError("image sizes too small for the planted generator");
  }
  if (!(threshold_min < threshold_max) || !(force_min < force_max) || offset_max < 0.0 ||
      margin < 0.0 || !(radius_min < radius_max) || bump_sigma <= 0.0 || sigma <= 0.0 ||
      visual_noise < 0.0 || tactile_noise < 0.0) {
    throw ContractError("inconsistent planted generator ranges");
  }
}

PreprocessConfig DataConfig::preprocess() const {
  const std::size_t h = sensor_height, w = sensor_width;
  std::vector<double> sim(3 * h * w), real(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const std::size_t i = (c * h + y) * w + x;
        // Simulator: smooth vertical gradient. Sensor: tinted, vignetted, ridged.
        sim[i] = 0.22 + 0.04 * static_cast<double>(c) + 0.06 * fy;
        const double r2 = (fx - 0.5) * (fx - 0.5) + (fy - 0.5) * (fy - 0.5);
        real[i] = (0.42 - 0.05 * static_cast<double>(c)) * (1.0 - 0.5 * r2) +
                  0.02 * std::sin(2.0 * std::numbers::pi * fx * 6.0);
      }
    }
  }
  return {sigma, Tensor({3, h, w}, std::move(sim)), Tensor({3, h, w}, std::move(real))};
}

int label_rule(const SceneParams& scene, double force, double margin) {
  return force >= scene.force_threshold && std::abs(scene.offset) <= margin ? 1 : 0;
}

double radius_for_threshold(const DataConfig& cfg, double threshold) {
  const double t = (threshold - cfg.threshold_min) / (cfg.threshold_max - cfg.threshold_min);
  return cfg.radius_min + t * (cfg.radius_max - cfg.radius_min);
}

SceneParams sample_scene(const DataConfig& cfg, Rng& rng) {
  SceneParams s;
  s.force_threshold = rng.uniform(cfg.threshold_min, cfg.threshold_max);
  s.offset = rng.uniform(-cfg.offset_max, cfg.offset_max);
  s.object_size = radius_for_threshold(cfg, s.force_threshold);
  return s;
}

Tensor render_visual(const SceneParams& scene, const DataConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.visual_size;
  const double centre = static_cast<double>(n) / 2.0;
  const double cx = centre + scene.offset;
  std::vector<double> img(3 * n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dist = std::hypot(px - cx, py - centre);
      // Antialiased coverage so sub-pixel size and position survive rendering.
      const double object = std::clamp(scene.object_size + 0.5 - dist, 0.0, 1.0);
      const double gripper = std::clamp(1.5 - std::abs(px - centre), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = kTable[c] * (1.0 - object) + kObject[c] * object;
        v = v * (1.0 - gripper) + kGripper[c] * gripper;
        img[(c * n + y) * n + x] = v;
      }
    }
  }
  return add_gaussian_noise(Tensor({3, n, n}, std::move(img)), cfg.visual_noise, rng);
}

Tensor render_tactile(const SceneParams& scene, double force, const DataConfig& cfg,
                      const PreprocessConfig& pre, Rng& rng) {
  const std::size_t h = cfg.sensor_height, w = cfg.sensor_width;
  const double cy = static_cast<double>(h) / 2.0, cx = static_cast<double>(w) / 2.0;
  const double base = cfg.bump_gain * force / cfg.force_max;
  Tensor sensors[2];
  for (int side = 0; side < 2; ++side) {
    const double skew = side == 0 ? 1.0 + cfg.asymmetry * scene.offset : 1.0 - cfg.asymmetry * scene.offset;
    const double peak = base * std::max(skew, 0.0);
    Tensor sim = pre.sim_background.clone();
    auto v = sim.values_mut();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
          v[(c * h + y) * w + x] +=
              kGelTint[c] * peak * std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.bump_sigma * cfg.bump_sigma));
        }
    Tensor real = background_substitute(gaussian_filter(sim, pre.sigma), pre.sim_background, pre.real_background);
    sensors[side] = add_gaussian_noise(real, cfg.tactile_noise, rng);
  }
  return splice_tactile(sensors[0], sensors[1]);
}

Sample make_sample(const SceneParams& scene, double force, const DataConfig& cfg,
                   const PreprocessConfig& pre, Rng& rng) {
  Sample s;
  s.scene = scene;
  s.force = static_cast<double>(to_f32(force));
  s.label = label_rule(scene, s.force, cfg.margin);
  s.visual = quantized(render_visual(scene, cfg, rng));
  s.tactile = quantized(render_tactile(scene, s.force, cfg, pre, rng));
  return s;
}

std::vector<Sample> generate_dataset(const DataConfig& cfg, std::size_t n, std::uint64_t seed) {
  cfg.validate();
  if (n == 0) throw ContractError("generate_dataset: n must be positive");
  const PreprocessConfig pre = cfg.preprocess();
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, i);
    const SceneParams scene = sample_scene(cfg, rng);
    const double force = rng.uniform(cfg.force_min, cfg.force_max);
    out.push_back(make_sample(scene, force, cfg, pre, rng));
  }
  return out;
}

double positive_fraction(const std::vector<Sample>& data) {
  if (data.empty()) return 0.0;
  std::size_t pos = 0;
  for (const Sample& s : data) pos += static_cast<std::size_t>(s.label);
  return static_cast<double>(pos) / static_cast<double>(data.size());
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const std::size_t side = static_cast<std::size_t>(2 * r + 1);
  std::vector<double> k(side * side);
  double total = 0.0;
  for (std::ptrdiff_t y = -r; y <= r; ++y)
    for (std::ptrdiff_t x = -r; x <= r; ++x) {
      const double v = std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((y + r) * (2 * r + 1) + (x + r))] = v;
      total += v;
    }
  for (double& v : k) v /= total;
  return k;
}

Tensor gaussian_filter(const Tensor& image, double sigma) {
  require_image("gaussian_filter", image);
  const std::vector<double> k = gaussian_kernel(sigma);
  const auto side = static_cast<std::ptrdiff_t>(std::lround(std::sqrt(static_cast<double>(k.size()))));
  const std::ptrdiff_t r = side / 2;
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto src = image.values();
  std::vector<double> out(src.size(), 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    const double* plane = src.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + dy, h);
          const double* krow = k.data() + (dy + r) * side + r;
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            acc += krow[dx] * plane[sy * w + reflect(static_cast<std::ptrdiff_t>(x) + dx, w)];
          }
        }
        out[(c * h + y) * w + x] = acc;
      }
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor background_substitute(const Tensor& image, const Tensor& sim_background, const Tensor& real_background) {
  if (image.shape() != sim_background.shape() || image.shape() != real_background.shape()) {
    throw DimensionError("background_substitute: shapes " + shape_str(image.shape()) + ", " +
                         shape_str(sim_background.shape()) + ", " + shape_str(real_background.shape()) +
                         " differ");
  }
  std::vector<double> out(image.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = clamp01(image.at(i) - sim_background.at(i) + real_background.at(i));
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor splice_tactile(const Tensor& left, const Tensor& right) {
  require_image("splice_tactile", left);
  if (left.shape() != right.shape()) {
    throw DimensionError("splice_tactile: " + shape_str(left.shape()) + " vs " + shape_str(right.shape()));
  }
  const std::size_t ch = left.dim(0), plane = left.dim(1) * left.dim(2);
  std::vector<double> out(2 * left.size());
  for (std::size_t c = 0; c < ch; ++c) {
    std::copy_n(left.values().begin() + c * plane, plane, out.begin() + 2 * c * plane);
    std::copy_n(right.values().begin() + c * plane, plane, out.begin() + (2 * c + 1) * plane);
  }
  return Tensor({ch, 2 * left.dim(1), left.dim(2)}, std::move(out));
}

std::pair<Tensor, Tensor> unsplice_tactile(const Tensor& spliced) {
  require_image("unsplice_tactile", spliced);
  if (spliced.dim(1) % 2 != 0) throw DimensionError("unsplice_tactile: odd height " + shape_str(spliced.shape()));
  const std::size_t ch = spliced.dim(0), h = spliced.dim(1) / 2, w = spliced.dim(2), plane = h * w;
  std::vector<double> top(ch * plane), bottom(ch * plane);
  for (std::size_t c = 0; c < ch; ++c) {
    std::copy_n(spliced.values().begin() + 2 * c * plane, plane, top.begin() + c * plane);
    std::copy_n(spliced.values().begin() + (2 * c + 1) * plane, plane, bottom.begin() + c * plane);
  }
  return {Tensor({ch, h, w}, std::move(top)), Tensor({ch, h, w}, std::move(bottom))};
}

Tensor add_gaussian_noise(const Tensor& image, double std, Rng& rng) {
  if (std < 0.0) throw ContractError("noise std must be non-negative");
  Tensor out = image.detach().clone();
  if (std == 0.0) return out;
  for (double& v : out.values_mut()) v = clamp01(v + std * rng.normal());
  return out;
}

void write_dataset(const std::string& path, const std::vector<Sample>& data) {
  if (data.empty()) throw ContractError("write_dataset: empty dataset");
  const Shape vs = data.front().visual.shape(), ts = data.front().tactile.shape();
  io::Writer w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  for (std::size_t d : vs) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t d : ts) w.u32(static_cast<std::uint32_t>(d));
  for (const Sample& s : data) {
    if (s.visual.shape() != vs || s.tactile.shape() != ts) {
      throw DimensionError("write_dataset: samples disagree on image shapes");
    }
    for (double v : s.visual.values()) w.f32(to_f32(v));
    for (double v : s.tactile.values()) w.f32(to_f32(v));
    w.f32(to_f32(s.force));
    w.u8(static_cast<std::uint8_t>(s.label));
  }
  w.save(path);
}

std::vector<Sample> read_dataset(const std::string& path) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("bad file format: unsupported dataset version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  Shape vs(3), ts(3);
  for (std::size_t& d : vs) d = r.u32();
  for (std::size_t& d : ts) d = r.u32();
  if (shape_numel(vs) == 0 || shape_numel(ts) == 0) throw FormatError("bad file format: empty image shape");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    std::vector<double> v(shape_numel(vs)), t(shape_numel(ts));
    for (double& x : v) x = r.f32();
    for (double& x : t) x = r.f32();
    s.visual = Tensor(vs, std::move(v));
    s.tactile = Tensor(ts, std::move(t));
    s.force = r.f32();
    const std::uint8_t label = r.u8();
    if (label > 1) throw FormatError("bad file format: label " + std::to_string(label) + " in '" + path + "'");
    s.label = label;
    out.push_back(std::move(s));
  }
  r.expect_end();
  return out;
}

}  // namespace vtfuse
