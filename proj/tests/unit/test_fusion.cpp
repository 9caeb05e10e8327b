#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "vtfuse/checkpoint.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/fusion.hpp"
#include "vtfuse/grad_check.hpp"
#include "vtfuse/ops.hpp"

using namespace vtfuse;
using vtfuse::testing::max_abs_diff;
using vtfuse::testing::random_tensor;
using vtfuse::testing::to_vec;

namespace {

std::vector<Tensor> images(std::size_t n, std::size_t side, Rng& rng, bool grad = false) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(3 * side * side);
    for (double& x : v) x = rng.uniform();
    out.emplace_back(Shape{3, side, side}, std::move(v), grad);
  }
  return out;
}

// Small enough that every parameter can be finite-differenced.
FusionConfig tiny(Variant v) {
  FusionConfig cfg;
  cfg.variant = v;
  cfg.visual.stages = {{4, 3, 2}, {4, 3, 2}};
  cfg.visual.reduce_dim = 8;
  cfg.tactile = cfg.visual;
  cfg.image_size = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.ffn_dim = 12;
  cfg.head_hidden = 8;
  return cfg;
}

void randomize_biases(const FusionModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const NamedTensor& p : m.parameters()) {
    if (p.tensor.rank() != 1) continue;
    Tensor t = p.tensor;
    for (double& v : t.values_mut()) v = rng.uniform(0.3, 0.8);
  }
}

// Moves the batch's mean logit to 0.3, away from sigmoid saturation where
// log(1 - p) keeps too few digits for finite differences.
void center_logits(FusionModel& m, const std::vector<Tensor>& vis, const std::vector<Tensor>& tac) {
  double mean_logit = 0.0;
  {
    NoGradGuard guard;
    const Tensor p = model_forward(m, vis, tac);
    for (double v : p.values()) mean_logit += std::log(v / (1.0 - v)) / static_cast<double>(p.size());
  }
  for (double& b : m.head.b2.values_mut()) b += 0.3 - mean_logit;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vtfuse_" + name)).string();
}

}  // namespace

TEST_CASE("extract_features geometry") {
  const FusionConfig cfg = FusionConfig::toy();
  CHECK(cfg.visual_length() == 16);
  const FusionModel m = FusionModel::init(cfg, 1);
  Rng rng(2);
  const Tensor seq = extract_features(images(1, 16, rng)[0], cfg.visual, m.visual);
  CHECK(seq.shape() == Shape{16, 32});
  CHECK_THROWS_AS(extract_features(Tensor({1, 16, 16}), cfg.visual, m.visual), DimensionError);
  CHECK_THROWS_AS(extract_features(Tensor({3, 16, 8}), cfg.visual, m.visual), DimensionError);
}

TEST_CASE("1x1 reduction equals a per-pixel matmul") {
  BackboneConfig b;
  b.stages.clear();
  b.in_channels = 5;
  b.reduce_dim = 6;
  Rng rng(3);
  BackboneParams p = BackboneParams::init(b, rng);
  for (double& v : p.reduce_b.values_mut()) v = rng.uniform(-1.0, 1.0);
  const Tensor x = random_tensor({5, 3, 3}, rng, 1.0, false);
  const Tensor seq = extract_features(x, b, p);
  REQUIRE(seq.shape() == Shape{9, 6});
  for (std::size_t s = 0; s < 9; ++s)
    for (std::size_t j = 0; j < 6; ++j) {
      double acc = p.reduce_b.at(j);
      for (std::size_t c = 0; c < 5; ++c) acc += p.reduce_w.at(j * 5 + c) * x.at(c * 9 + s);
      CHECK(std::abs(seq.at(s * 6 + j) - acc) < 1e-12);
    }
}

TEST_CASE("paper-width reduction") {
  BackboneConfig b;
  b.stages = {{8, 3, 2}};
  b.reduce_dim = 512;
  Rng rng(4);
  const BackboneParams p = BackboneParams::init(b, rng);
  CHECK(extract_features(Tensor({3, 8, 8}), b, p).shape() == Shape{16, 512});
}

TEST_CASE("segment_mean") {
  Tensor x({4, 2}, {1, 2, 3, 4, 10, 20, 30, 40}, true);
  const Tensor m = segment_mean(x, 2);
  CHECK(to_vec(m) == std::vector<double>{2, 3, 20, 30});
  CHECK_THROWS_AS(segment_mean(x, 3), DimensionError);
  Rng rng(5);
  auto r = grad_check([](const auto& in) { return sum(mul(segment_mean(in[0], 3), segment_mean(in[0], 3))); },
                      {random_tensor({6, 4}, rng)});
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("fusion_forward") {
  SUBCASE("co-attention only with zero weights is pure pooling") {
    FusionConfig cfg = FusionConfig::toy(Variant::OursM);
    FusionModel m = FusionModel::init(cfg, 6);
    CHECK(m.layers.empty());
    m.co_attention = BlockParams::zeros(cfg.mha(), cfg.ffn_dim);
    Rng rng(7);
    const Tensor v = random_tensor({16, 32}, rng, 1.0, false);
    const Tensor h = random_tensor({16, 32}, rng, 1.0, false);
    const Tensor out = fusion_forward(v, h, m);
    REQUIRE(out.shape() == Shape{1, 32});
    for (std::size_t c = 0; c < 32; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < 16; ++r) acc += v.at(r * 32 + c) + h.at(r * 32 + c);
      CHECK(std::abs(out.at(c) - acc / 32.0) < 1e-14);
    }
  }
  SUBCASE("output is a d-vector per sample") {
    const FusionModel m = FusionModel::init(FusionConfig::toy(), 8);
    Rng rng(9);
    const Tensor out = fusion_forward(random_tensor({48, 32}, rng, 1.0, false),
                                      random_tensor({48, 32}, rng, 1.0, false), m, 3);
    CHECK(out.shape() == Shape{3, 32});
  }
  SUBCASE("a stacked batch equals samples run one by one") {
    const FusionModel m = FusionModel::init(FusionConfig::toy(), 10);
    Rng rng(11);
    const auto vis = images(3, 16, rng), tac = images(3, 16, rng);
    const Tensor batch = model_forward(m, vis, tac);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(model_forward(m, {vis[i]}, {tac[i]}).item() - batch.at(i)) < 1e-12);
    }
  }
  SUBCASE("concat variant joins the two pooled vectors") {
    const FusionModel m = FusionModel::init(FusionConfig::toy(Variant::Concat), 12);
    Rng rng(13);
    const Tensor v = random_tensor({32, 32}, rng, 1.0, false), h = random_tensor({32, 32}, rng, 1.0, false);
    const Tensor out = fusion_forward(v, h, m, 2);
    REQUIRE(out.shape() == Shape{2, 64});
    CHECK(std::abs(out.at(64 + 40) - segment_mean(h, 16).at(32 + 8)) < 1e-15);
  }
  SUBCASE("width mismatch") {
    const FusionModel m = FusionModel::init(FusionConfig::toy(), 14);
    CHECK_THROWS_AS(fusion_forward(Tensor({16, 16}), Tensor({16, 32}), m), DimensionError);
    CHECK_THROWS_AS(fusion_forward(Tensor({16, 32}), Tensor(), m), DimensionError);
  }
}

TEST_CASE("forward output is a finite probability for every variant") {
  Rng rng(15);
  const auto vis = images(4, 16, rng), tac = images(4, 16, rng);
  for (Variant v : kAllVariants) {
    const FusionModel m = FusionModel::init(FusionConfig::toy(v), 16);
    const Tensor p = model_forward(m, vis, tac);
    REQUIRE(p.shape() == Shape{4});
    for (double x : p.values()) {
      CHECK(std::isfinite(x));
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("predict") {
  SUBCASE("zero weights give sigmoid of the output bias") {
    FfnParams head = FfnParams::zeros(4, 4, 1);
    CHECK(predict(Tensor({4}), head).item() == 0.5);
    head.b2.values_mut()[0] = 1.3;
    CHECK(std::abs(predict(Tensor({4}), head).item() - 1.0 / (1.0 + std::exp(-1.3))) < 1e-15);
  }
  SUBCASE("strictly increasing in the output bias") {
    Rng rng(17);
    FfnParams head = FfnParams::init(6, 6, 1, rng);
    const Tensor f = random_tensor({6}, rng, 1.0, false);
    double last = 0.0;
    for (double b = -3.0; b <= 3.0; b += 0.5) {
      head.b2.values_mut()[0] = b;
      const double p = predict(f, head).item();
      CHECK(p > last);
      last = p;
    }
  }
  SUBCASE("matches a composed ffn and sigmoid") {
    Rng rng(18);
    FfnParams head = FfnParams::init(6, 5, 1, rng);
    for (double& v : head.b1.values_mut()) v = rng.uniform(-0.5, 0.5);
    const Tensor f = random_tensor({3, 6}, rng, 1.0, false);
    const Tensor p = predict(f, head);
    for (std::size_t r = 0; r < 3; ++r) {
      double z = head.b2.at(0);
      for (std::size_t j = 0; j < 5; ++j) {
        double a = head.b1.at(j);
        for (std::size_t i = 0; i < 6; ++i) a += f.at(r * 6 + i) * head.w1.at(i * 5 + j);
        z += std::max(a, 0.0) * head.w2.at(j);
      }
      CHECK(std::abs(p.at(r) - 1.0 / (1.0 + std::exp(-z))) < 1e-14);
    }
  }
}

TEST_CASE("bce_loss") {
  SUBCASE("perfect predictions") {
    CHECK(bce_loss(Tensor({3}, {1, 0, 1}), std::vector<double>{1, 0, 1}, Reduction::Sum).item() < 1e-6);
  }
  SUBCASE("ln 2 at one half") {
    CHECK(std::abs(bce_loss(Tensor({1}, {0.5}), std::vector<double>{1}, Reduction::Sum).item() - std::log(2.0)) < 1e-12);
  }
  SUBCASE("label flip symmetry") {
    for (double p : {1e-9, 0.01, 0.3, 0.5, 0.77, 0.999999}) {
      const double a = bce_loss(Tensor({1}, {p}), std::vector<double>{0}).item();
      const double b = bce_loss(Tensor({1}, {1.0 - p}), std::vector<double>{1}).item();
      CHECK(a == b);
    }
  }
  SUBCASE("sum and mean conventions") {
    const Tensor p({4}, {0.2, 0.9, 0.6, 0.4});
    const std::vector<double> y{0, 1, 1, 0};
    double ref = 0.0;
    for (std::size_t i = 0; i < 4; ++i) ref -= y[i] * std::log(p.at(i)) + (1 - y[i]) * std::log(1 - p.at(i));
    CHECK(std::abs(bce_loss(p, y, Reduction::Sum).item() - ref) < 1e-14);
    CHECK(std::abs(bce_loss(p, y, Reduction::Mean).item() - ref / 4) < 1e-14);
  }
  SUBCASE("clamped extremes stay finite") {
    CHECK(std::abs(bce_loss(Tensor({1}, {0.0}), std::vector<double>{1}, Reduction::Sum).item() + std::log(1e-7)) < 1e-9);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(bce_loss(Tensor({2}), Tensor({3})), DimensionError);
  }
}

TEST_CASE("full pipeline gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FusionModel m = FusionModel::init(tiny(Variant::Full), seed);
    randomize_biases(m, seed + 100);
    Rng rng(seed);
    const auto vis = images(2, 8, rng), tac = images(2, 8, rng);
    center_logits(m, vis, tac);
    std::vector<Tensor> inputs;
    for (const NamedTensor& p : m.parameters()) inputs.push_back(p.tensor);
    const std::vector<double> y{1.0, 0.0};
    auto r = grad_check([&](const auto&) { return bce_loss(model_forward(m, vis, tac), y); }, inputs);
    INFO("seed " << seed << " input " << r.worst_input << "[" << r.worst_index << "] analytic "
                 << r.worst_analytic << " numeric " << r.worst_numeric);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("model parameters") {
  SUBCASE("unimodal variants own a single backbone") {
    const FusionModel v = FusionModel::init(FusionConfig::toy(Variant::VisualOnly), 1);
    for (const NamedTensor& p : v.parameters()) CHECK(p.name.rfind("tactile", 0) != 0);
    const FusionModel t = FusionModel::init(FusionConfig::toy(Variant::TactileOnly), 1);
    for (const NamedTensor& p : t.parameters()) CHECK(p.name.rfind("visual", 0) != 0);
  }
  SUBCASE("names are unique and the full model has four layers") {
    const FusionModel m = FusionModel::init(FusionConfig::toy(), 1);
    std::set<std::string> names;
    for (const NamedTensor& p : m.parameters()) names.insert(p.name);
    CHECK(names.size() == m.parameters().size());
    CHECK(m.layers.size() == 4);
    CHECK(names.count("layer3.mca_h.ffn.b2") == 1);
    CHECK(names.count("co.wq") == 1);
  }
  SUBCASE("same seed, same parameters") {
    const auto a = FusionModel::init(FusionConfig::toy(), 42).parameters();
    const auto b = FusionModel::init(FusionConfig::toy(), 42).parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(to_vec(a[i].tensor) == to_vec(b[i].tensor));
  }
  SUBCASE("variant names round-trip") {
    for (Variant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_AS(parse_variant("resnet"), ConfigError);
  }
  SUBCASE("full fusion needs a layer") {
    FusionConfig cfg = FusionConfig::toy();
    cfg.layers = 0;
    CHECK_THROWS_AS(FusionModel::init(cfg, 1), ContractError);
  }
}

TEST_CASE("checkpoint round trip") {
  const std::string path = temp_path("model.xmf");
  for (Variant v : kAllVariants) {
    FusionModel m = FusionModel::init(FusionConfig::toy(v), 3);
    randomize_biases(m, 4);
    round_to_float(m.parameters());
    save_model(path, m);
    const FusionModel back = load_model(path);
    CHECK(back.cfg.variant == v);
    const auto a = m.parameters(), b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(to_vec(a[i].tensor) == to_vec(b[i].tensor));
    }
    Rng rng(5);
    const auto vis = images(2, 16, rng), tac = images(2, 16, rng);
    CHECK(to_vec(model_forward(m, vis, tac)) == to_vec(model_forward(back, vis, tac)));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  const std::string path = temp_path("bad.xmf");
  SUBCASE("missing file") { CHECK_THROWS_AS(load_model(temp_path("does_not_exist.xmf")), IoError); }
  SUBCASE("bad magic") {
    std::ofstream(path, std::ios::binary) << "XMF0garbage";
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("truncated") {
    save_model(path, FusionModel::init(FusionConfig::toy(Variant::Concat), 1));
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("wrong kind") {
    write_checkpoint(path, Checkpoint{"gan", {}, {}});
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  std::filesystem::remove(path);
}
