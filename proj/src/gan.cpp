#include "vtfuse/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vtfuse/attention.hpp"
#include "vtfuse/binary_io.hpp"
#include "vtfuse/checkpoint.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/ops.hpp"
#include "vtfuse/synthetic.hpp"
#include "vtfuse/training.hpp"

namespace vtfuse {

namespace {

constexpr std::string_view kPairMagic = "VTP1";
constexpr std::uint32_t kPairVersion = 1;
constexpr std::string_view kGanKind = "gan";

constexpr Conv2dGeometry kDown{2, 1};
constexpr Conv2dGeometry kSame{1, 1};

ConvLayer conv_layer(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  return {xavier_uniform({out, in, k, k}, in * k * k, out * k * k, rng), Tensor::zeros({out}, true)};
}

ConvLayer transposed_layer(std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  return {xavier_uniform({in, out, k, k}, in * k * k, out * k * k, rng), Tensor::zeros({out}, true)};
}

Tensor apply(const ConvLayer& l, const Tensor& x, Conv2dGeometry g) {
  return add_channel_bias(conv2d(x, l.w, g), l.b);
}

Tensor apply_transposed(const ConvLayer& l, const Tensor& x, Conv2dGeometry g) {
  return add_channel_bias(conv2d_transpose(x, l.w, g), l.b);
}

void push(std::vector<NamedTensor>& out, const std::string& prefix, const ConvLayer& l) {
  out.push_back({prefix + ".w", l.w});
  out.push_back({prefix + ".b", l.b});
}

void require_side(const Tensor& x, std::size_t channels, const char* who) {
  if (x.rank() != 3 || x.dim(0) != channels || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) == 0 ||
      x.dim(2) == 0) {
    throw DimensionError(std::string(who) + ": expected [" + std::to_string(channels) +
                         " x H x W] with H, W positive multiples of 4, got " + shape_str(x.shape()));
  }
}

void require_batch(const std::vector<Tensor>& x, const std::vector<Tensor>& y, const char* who) {
  if (x.empty() || x.size() != y.size()) {
    throw DimensionError(std::string(who) + ": " + std::to_string(x.size()) + " inputs for " +
                         std::to_string(y.size()) + " targets");
  }
}

void require_unit_range(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError(std::string(what) + " pixel " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

Tensor squared(const Tensor& t) { return mul(t, t); }

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const NamedTensor& n : named) out.push_back(n.tensor);
  return out;
}

void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& t : params) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

}  // namespace

void GanTrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
  if (!(learning_rate > 0.0) || batch_size == 0 || epochs == 0) {
    throw ContractError("learning rate, batch size and epochs must be positive");
  }
}

Generator Generator::init(std::size_t channels, std::size_t width, Rng& rng) {
  if (channels == 0 || width == 0) throw ContractError("generator needs positive channel counts");
  Generator g;
  g.channels = channels;
  g.width = width;
  g.down1 = conv_layer(width, channels, 4, rng);
  g.down2 = conv_layer(2 * width, width, 4, rng);
  g.up1 = transposed_layer(2 * width, width, 4, rng);
  g.up2 = transposed_layer(2 * width, width, 4, rng);
  g.out = conv_layer(channels, width + channels, 3, rng);
  return g;
}

std::vector<NamedTensor> Generator::parameters() const {
  std::vector<NamedTensor> named;
  push(named, "generator.down1", down1);
  push(named, "generator.down2", down2);
  push(named, "generator.up1", up1);
  push(named, "generator.up2", up2);
  push(named, "generator.out", out);
  return named;
}

Tensor Generator::operator()(const Tensor& x) const {
  require_side(x, channels, "generator");
  const Tensor e1 = relu(apply(down1, x, kDown));
  const Tensor e2 = relu(apply(down2, e1, kDown));
  const Tensor u1 = relu(apply_transposed(up1, e2, kDown));
  const Tensor u2 = relu(apply_transposed(up2, concat({u1, e1}, 0), kDown));
  return sigmoid(apply(out, concat({u2, x}, 0), kSame));
}

Discriminator Discriminator::init(std::size_t channels, std::size_t width, Rng& rng) {
  if (channels == 0 || width == 0) throw ContractError("discriminator needs positive channel counts");
  Discriminator d;
  d.channels = channels;
  d.width = width;
  d.conv1 = conv_layer(width, 2 * channels, 4, rng);
  d.conv2 = conv_layer(2 * width, width, 4, rng);
  d.score = conv_layer(1, 2 * width, 3, rng);
  return d;
}

std::vector<NamedTensor> Discriminator::parameters() const {
  std::vector<NamedTensor> out;
  push(out, "discriminator.conv1", conv1);
  push(out, "discriminator.conv2", conv2);
  push(out, "discriminator.score", score);
  return out;
}

Tensor Discriminator::operator()(const Tensor& x, const Tensor& y) const {
  require_side(x, channels, "discriminator input");
  if (y.shape() != x.shape()) {
    throw DimensionError("discriminator: candidate " + shape_str(y.shape()) + " vs input " + shape_str(x.shape()));
  }
  const Tensor h1 = relu(apply(conv1, concat({x, y}, 0), kDown));
  const Tensor h2 = relu(apply(conv2, h1, kDown));
  return sigmoid(apply(score, h2, kSame));
}

GanModel GanModel::init(std::uint64_t seed, std::size_t channels, std::size_t width) {
  Rng rng(seed);
  GanModel m;
  m.generator = Generator::init(channels, width, rng);
  m.discriminator = Discriminator::init(channels, width, rng);
  return m;
}

std::vector<NamedTensor> GanModel::parameters() const {
  std::vector<NamedTensor> out = generator.parameters();
  for (NamedTensor& n : discriminator.parameters()) out.push_back(std::move(n));
  return out;
}

Tensor lsgan_d_loss(const DiscriminatorFn& d, const std::vector<Tensor>& x, const std::vector<Tensor>& y,
                    const GeneratorFn& g) {
  require_batch(x, y, "lsgan_d_loss");
  std::vector<Tensor> real, fake;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor generated;
    {
      NoGradGuard no_grad;
      generated = g(x[i]).detach();
    }
    real.push_back(d(x[i], y[i]));
    fake.push_back(d(x[i], generated));
  }
  const Tensor r = concat(real, 0), f = concat(fake, 0);
  return add(mul_scalar(mean(squared(add_scalar(r, -1.0))), 0.5), mul_scalar(mean(squared(f)), 0.5));
}

Tensor lsgan_g_loss(const DiscriminatorFn& d, const std::vector<Tensor>& x, const GeneratorFn& g) {
  if (x.empty()) throw DimensionError("lsgan_g_loss: empty batch");
  std::vector<Tensor> fake;
  for (const Tensor& xi : x) fake.push_back(d(xi, g(xi)));
  return mul_scalar(mean(squared(add_scalar(concat(fake, 0), -1.0))), 0.5);
}

Tensor reconstruction_loss(const std::vector<Tensor>& generated, const std::vector<Tensor>& target) {
  require_batch(generated, target, "reconstruction_loss");
  for (std::size_t i = 0; i < generated.size(); ++i) {
    require_unit_range(generated[i], "generated");
    require_unit_range(target[i], "target");
  }
  return bce_loss(concat(generated, 0), concat(target, 0).detach(), Reduction::Mean);
}

Tensor generator_objective(const DiscriminatorFn& d, const std::vector<Tensor>& x, const std::vector<Tensor>& y,
                           const GeneratorFn& g, double lambda) {
  require_batch(x, y, "generator_objective");
  std::vector<Tensor> generated, scores;
  for (const Tensor& xi : x) {
    generated.push_back(g(xi));
    scores.push_back(d(xi, generated.back()));
  }
  const Tensor adversarial = mul_scalar(mean(squared(add_scalar(concat(scores, 0), -1.0))), 0.5);
  if (lambda == 0.0) return adversarial;
  return add(adversarial, mul_scalar(reconstruction_loss(generated, y), lambda));
}

GanLosses gan_objectives(const DiscriminatorFn& d, const GeneratorFn& g, const std::vector<Tensor>& x,
                         const std::vector<Tensor>& y, const GanTrainConfig& cfg) {
  cfg.validate();
  return {lsgan_d_loss(d, x, y, g), generator_objective(d, x, y, g, cfg.lambda)};
}

struct GanTrainer::Impl {
  std::vector<Tensor> g_params, d_params;
  AdamState g_state, d_state;
  AdamConfig adam;
};

GanTrainer::GanTrainer(GanModel& model, const GanTrainConfig& cfg)
    : model_(model), cfg_(cfg), impl_(std::make_shared<Impl>()) {
  cfg_.validate();
  impl_->g_params = tensors_of(model_.generator.parameters());
  impl_->d_params = tensors_of(model_.discriminator.parameters());
  impl_->g_state = AdamState::for_params(impl_->g_params);
  impl_->d_state = AdamState::for_params(impl_->d_params);
  impl_->adam.learning_rate = cfg_.learning_rate;
}

double GanTrainer::discriminator_step(const std::vector<Tensor>& x, const std::vector<Tensor>& y) {
  const Generator& g = model_.generator;
  const Discriminator& d = model_.discriminator;
  Tensor loss = lsgan_d_loss(d, x, y, g);
  loss.backward();
  adam_step(impl_->d_params, impl_->d_state, impl_->adam);
  zero_grads(impl_->d_params);
  zero_grads(impl_->g_params);
  return loss.item();
}

double GanTrainer::generator_step(const std::vector<Tensor>& x, const std::vector<Tensor>& y) {
  const Generator& g = model_.generator;
  const Discriminator& d = model_.discriminator;
  Tensor loss = generator_objective(d, x, y, g, cfg_.lambda);
  loss.backward();
  adam_step(impl_->g_params, impl_->g_state, impl_->adam);
  zero_grads(impl_->d_params);
  zero_grads(impl_->g_params);
  return loss.item();
}

std::vector<GanEpoch> train_gan(GanModel& model, const std::vector<GanPair>& pairs, const GanTrainConfig& cfg,
                                const std::function<void(const GanEpoch&)>& observer) {
  cfg.validate();
  if (pairs.empty()) throw ContractError("train_gan: no training pairs");
  GanTrainer trainer(model, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<GanEpoch> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    GanEpoch e;
    e.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> x, y;
      for (std::size_t j = start; j < end; ++j) {
        x.push_back(pairs[order[j]].real);
        y.push_back(pairs[order[j]].sim);
      }
      e.d_loss += trainer.discriminator_step(x, y);
      e.g_loss += trainer.generator_step(x, y);
      ++batches;
    }
    e.d_loss /= static_cast<double>(batches);
    e.g_loss /= static_cast<double>(batches);
    history.push_back(e);
    if (observer) observer(e);
  }
  round_to_float(model.parameters());
  return history;
}

Tensor translate(const Generator& g, const Tensor& real) {
  NoGradGuard no_grad;
  return g(real.detach()).detach();
}

Tensor corrupt(const Tensor& sim, const PairConfig& cfg) {
  if (sim.rank() != 3) throw DimensionError("corrupt: expected [C x H x W], got " + shape_str(sim.shape()));
  const std::size_t ch = sim.dim(0), h = sim.dim(1), w = sim.dim(2);
  const Tensor blurred = gaussian_filter(sim, cfg.blur_sigma);
  std::vector<double> out(sim.size());
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
        const double shade = 1.0 - cfg.vignette * 4.0 * (fx * fx + fy * fy);
        const double texture = cfg.texture_base * (1.0 - 0.1 * static_cast<double>(c)) +
                               cfg.texture * std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / 7.0) *
                                   std::cos(2.0 * std::numbers::pi * static_cast<double>(y) / 5.0);
        const std::size_t i = (c * h + y) * w + x;
        out[i] = std::clamp(cfg.gain * shade * blurred.at(i) + texture, 0.0, 1.0);
      }
  return Tensor(sim.shape(), std::move(out));
}

std::vector<GanPair> generate_paired_toy(std::size_t n, std::uint64_t seed, const PairConfig& cfg) {
  if (n == 0) throw ContractError("generate_paired_toy: n must be positive");
  if (cfg.size < 16 || cfg.size % 4 != 0 || cfg.min_blobs == 0 || cfg.max_blobs < cfg.min_blobs) {
    throw ContractError("paired toy needs a side that is a multiple of 4 (>= 16) and a blob count range");
  }
  const std::size_t s = cfg.size;
  const double side = static_cast<double>(s);
  std::vector<GanPair> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng = Rng::derive(seed, k);
    std::vector<double> img(3 * s * s, cfg.background);
    const std::size_t blobs = cfg.min_blobs + rng.below(cfg.max_blobs - cfg.min_blobs + 1);
    for (std::size_t b = 0; b < blobs; ++b) {
      const double cx = rng.uniform(0.2 * side, 0.8 * side), cy = rng.uniform(0.2 * side, 0.8 * side);
      const double sigma = rng.uniform(1.5, 3.5);
      double colour[3];
      for (double& c : colour) c = rng.uniform(0.3, 0.9);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x < s; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
            img[(c * s + y) * s + x] += colour[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          }
    }
    for (double& v : img) v = static_cast<double>(static_cast<float>(std::min(v, 1.0)));
    Tensor sim({3, s, s}, std::move(img));
    Tensor real = corrupt(sim, cfg);
    for (double& v : real.values_mut()) v = static_cast<double>(static_cast<float>(v));
    out.push_back({std::move(real), std::move(sim)});
  }
  return out;
}

std::pair<std::vector<GanPair>, std::vector<GanPair>> split_pairs(const std::vector<GanPair>& pairs,
                                                                  double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("train fraction must lie in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pairs.size())));
  return {std::vector<GanPair>(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<GanPair>(pairs.begin() + static_cast<std::ptrdiff_t>(cut), pairs.end())};
}

void write_pairs(const std::string& path, const std::vector<GanPair>& pairs) {
  if (pairs.empty()) throw ContractError("write_pairs: no pairs");
  const Shape shape = pairs.front().real.shape();
  if (shape.size() != 3) throw DimensionError("write_pairs: images must be [C x H x W]");
  io::Writer w;
  w.bytes(kPairMagic);
  w.u32(kPairVersion);
  w.u32(static_cast<std::uint32_t>(pairs.size()));
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (const GanPair& p : pairs) {
    if (p.real.shape() != shape || p.sim.shape() != shape) throw DimensionError("write_pairs: pairs disagree on shape");
    for (double v : p.real.values()) w.f32(static_cast<float>(v));
    for (double v : p.sim.values()) w.f32(static_cast<float>(v));
  }
  w.save(path);
}

std::vector<GanPair> read_pairs(const std::string& path) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic(kPairMagic);
  const std::uint32_t version = r.u32();
  if (version != kPairVersion) throw FormatError("bad file format: unsupported pair version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  Shape shape(3);
  for (std::size_t& d : shape) d = r.u32();
  if (shape_numel(shape) == 0) throw FormatError("bad file format: empty image shape");
  std::vector<GanPair> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<double> real(shape_numel(shape)), sim(shape_numel(shape));
    for (double& v : real) v = r.f32();
    for (double& v : sim) v = r.f32();
    out.push_back({Tensor(shape, std::move(real)), Tensor(shape, std::move(sim))});
  }
  r.expect_end();
  return out;
}

void save_gan(const std::string& path, const GanModel& model) {
  Checkpoint c;
  c.kind = std::string(kGanKind);
  c.config = {{"channels", static_cast<std::int64_t>(model.generator.channels)},
              {"width", static_cast<std::int64_t>(model.generator.width)}};
  c.tensors = model.parameters();
  write_checkpoint(path, c);
}

GanModel load_gan(const std::string& path) {
  const Checkpoint c = read_checkpoint(path);
  if (c.kind != kGanKind) {
    throw FormatError("bad file format: '" + path + "' holds a '" + c.kind + "' checkpoint, not a GAN");
  }
  const std::int64_t channels = c.get("channels"), width = c.get("width");
  if (channels <= 0 || width <= 0 || channels > 64 || width > 4096) {
    throw FormatError("bad file format: invalid GAN dimensions");
  }
  GanModel m = GanModel::init(0, static_cast<std::size_t>(channels), static_cast<std::size_t>(width));
  assign_parameters(m.parameters(), c);
  return m;
}

}  // namespace vtfuse
