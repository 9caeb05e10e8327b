#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "vtfuse/checkpoint.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/gan.hpp"
#include "vtfuse/grad_check.hpp"
#include "vtfuse/ops.hpp"

using namespace vtfuse;
using vtfuse::testing::max_abs_diff;
using vtfuse::testing::to_vec;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vtfuse_" + name)).string();
}

std::vector<Tensor> images(std::size_t n, std::size_t c, std::size_t side, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(c * side * side);
    for (double& x : v) x = rng.uniform(0.05, 0.95);
    out.emplace_back(Shape{c, side, side}, std::move(v));
  }
  return out;
}

DiscriminatorFn constant_d(double real, double fake, const std::vector<Tensor>& targets) {
  return [=](const Tensor&, const Tensor& y) {
    for (const Tensor& t : targets)
      if (to_vec(t) == to_vec(y)) return Tensor::full({1, 2, 2}, real);
    return Tensor::full({1, 2, 2}, fake);
  };
}

GeneratorFn constant_g(double v) {
  return [v](const Tensor& x) { return Tensor::full(x.shape(), v); };
}

std::vector<Tensor> param_tensors(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const NamedTensor& n : named) out.push_back(n.tensor);
  return out;
}

void bias_positive(const std::vector<NamedTensor>& named, std::uint64_t seed) {
  Rng rng(seed);
  for (const NamedTensor& n : named) {
    if (n.tensor.rank() != 1) continue;
    Tensor t = n.tensor;
    for (double& v : t.values_mut()) v = rng.uniform(0.1, 0.4);
  }
}

}  // namespace

TEST_CASE("lsgan discriminator loss") {
  Rng rng(1);
  const auto x = images(3, 3, 8, rng), y = images(3, 3, 8, rng);
  SUBCASE("perfect discriminator") {
    CHECK(lsgan_d_loss(constant_d(1.0, 0.0, y), x, y, constant_g(0.3)).item() == 0.0);
  }
  SUBCASE("undecided discriminator") {
    CHECK(lsgan_d_loss(constant_d(0.5, 0.5, y), x, y, constant_g(0.3)).item() == 0.25);
  }
  SUBCASE("scalar recomputation on a 2x2 patch grid") {
    // Scores depend on the candidate's first pixel so real and fake differ per sample.
    const DiscriminatorFn d = [](const Tensor& xi, const Tensor& yi) {
      const double a = yi.at(0), b = xi.at(1);
      return Tensor({1, 2, 2}, {a, b, a * b, 0.5 * (a + b)});
    };
    const GeneratorFn g = [](const Tensor& xi) { return mul_scalar(xi, 0.5); };
    double ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double b = x[i].at(1);
      for (double a : {y[i].at(0)}) {
        for (double s : {a, b, a * b, 0.5 * (a + b)}) ref += 0.5 * (s - 1.0) * (s - 1.0) / 12.0;
      }
      const double a = 0.5 * x[i].at(0);
      for (double s : {a, b, a * b, 0.5 * (a + b)}) ref += 0.5 * s * s / 12.0;
    }
    CHECK(std::abs(lsgan_d_loss(d, x, y, g).item() - ref) < 1e-15);
  }
  SUBCASE("generator output is detached") {
    GanModel m = GanModel::init(3, 3, 4);
    Tensor loss = lsgan_d_loss(m.discriminator, x, y, m.generator);
    loss.backward();
    for (const NamedTensor& p : m.generator.parameters()) CHECK(!p.tensor.has_grad());
    std::size_t touched = 0;
    for (const NamedTensor& p : m.discriminator.parameters()) touched += p.tensor.has_grad();
    CHECK(touched == m.discriminator.parameters().size());
  }
  SUBCASE("batch mismatch") {
    const std::vector<Tensor> short_y(y.begin(), y.begin() + 2);
    CHECK_THROWS_AS(lsgan_d_loss(constant_d(1, 0, y), x, short_y, constant_g(0.3)), DimensionError);
  }
}

TEST_CASE("lsgan generator loss") {
  Rng rng(2);
  const auto x = images(2, 3, 8, rng);
  SUBCASE("fooled discriminator") {
    CHECK(lsgan_g_loss([](const Tensor&, const Tensor&) { return Tensor::full({1, 2, 2}, 1.0); }, x,
                       constant_g(0.4)).item() == 0.0);
  }
  SUBCASE("confident discriminator") {
    CHECK(lsgan_g_loss([](const Tensor&, const Tensor&) { return Tensor::full({1, 2, 2}, 0.0); }, x,
                       constant_g(0.4)).item() == 0.5);
  }
  SUBCASE("gradient reaches every generator parameter") {
    GanModel m = GanModel::init(5, 3, 4);
    bias_positive(m.parameters(), 6);
    const auto xs = images(4, 3, 16, rng);
    lsgan_g_loss(m.discriminator, xs, m.generator).backward();
    std::size_t nonzero = 0, total = 0;
    for (const NamedTensor& p : m.generator.parameters()) {
      REQUIRE(p.tensor.has_grad());
      for (double g : p.tensor.grad()) nonzero += g != 0.0;
      total += p.tensor.size();
    }
    CHECK(nonzero == total);
  }
}

TEST_CASE("generator objective") {
  Rng rng(3);
  const auto x = images(2, 3, 8, rng), y = images(2, 3, 8, rng);
  const DiscriminatorFn d = [](const Tensor&, const Tensor& c) {
    return sigmoid(reshape(slice(reshape(c, {c.size()}), 0, 0, 4), {1, 2, 2}));
  };
  const GeneratorFn g = [](const Tensor& xi) { return sigmoid(xi); };
  SUBCASE("lambda zero is the adversarial term alone") {
    CHECK(generator_objective(d, x, y, g, 0.0).item() == lsgan_g_loss(d, x, g).item());
  }
  SUBCASE("adds lambda times mean pixel BCE") {
    double bce = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < x[i].size(); ++j) {
        const double p = 1.0 / (1.0 + std::exp(-x[i].at(j))), t = y[i].at(j);
        bce -= t * std::log(p) + (1 - t) * std::log(1 - p);
        ++n;
      }
    const double expect = lsgan_g_loss(d, x, g).item() + 10.0 * bce / static_cast<double>(n);
    CHECK(std::abs(generator_objective(d, x, y, g, 10.0).item() - expect) < 1e-12);
    GanTrainConfig cfg;
    CHECK(cfg.lambda == 10.0);
    const GanLosses both = gan_objectives(d, g, x, y, cfg);
    CHECK(both.generator.item() == generator_objective(d, x, y, g, 10.0).item());
    CHECK(both.discriminator.item() == lsgan_d_loss(d, x, y, g).item());
  }
  SUBCASE("reconstruction vanishes only for an exact match") {
    std::vector<Tensor> binary;
    for (int i = 0; i < 2; ++i) {
      std::vector<double> v(3 * 8 * 8);
      for (double& p : v) p = rng.uniform() < 0.5 ? 0.0 : 1.0;
      binary.emplace_back(Shape{3, 8, 8}, v);
    }
    const GeneratorFn identity = [](const Tensor& xi) { return xi; };
    std::vector<Tensor> generated;
    for (const Tensor& b : binary) generated.push_back(identity(b));
    CHECK(reconstruction_loss(generated, binary).item() < 1e-6);
    generated[1] = Tensor(binary[1].shape(), std::vector<double>(binary[1].size(), 0.5));
    CHECK(reconstruction_loss(generated, binary).item() > 0.1);
  }
  SUBCASE("pixels outside the unit interval") {
    std::vector<Tensor> bad{Tensor::full({3, 8, 8}, 1.2)};
    const std::vector<Tensor> ok{Tensor::full({3, 8, 8}, 0.5)};
    CHECK_THROWS_AS(reconstruction_loss(bad, ok), ContractError);
    CHECK_THROWS_AS(reconstruction_loss(ok, bad), ContractError);
  }
}

TEST_CASE("networks") {
  GanModel m = GanModel::init(4);
  Rng rng(4);
  const auto x = images(1, 3, 32, rng);
  SUBCASE("generator keeps the input shape and maps into (0, 1)") {
    const Tensor out = translate(m.generator, x[0]);
    CHECK(out.shape() == x[0].shape());
    for (double v : out.values()) CHECK((v > 0.0 && v < 1.0));
    CHECK(to_vec(translate(m.generator, x[0])) == to_vec(out));
  }
  SUBCASE("discriminator scores a patch grid") {
    const Tensor s = m.discriminator(x[0], x[0]);
    CHECK(s.shape() == Shape{1, 8, 8});
    for (double v : s.values()) CHECK((v > 0.0 && v < 1.0));
  }
  SUBCASE("parameter names are unique") {
    std::set<std::string> names;
    for (const NamedTensor& p : m.parameters()) names.insert(p.name);
    CHECK(names.size() == m.parameters().size());
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(m.generator(Tensor::zeros({3, 30, 32})), DimensionError);
    CHECK_THROWS_AS(m.generator(Tensor::zeros({1, 32, 32})), DimensionError);
    CHECK_THROWS_AS(m.discriminator(x[0], Tensor::zeros({3, 16, 16})), DimensionError);
  }
}

TEST_CASE("gradients through the adversarial losses") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GanModel m = GanModel::init(seed, 1, 2);
    bias_positive(m.parameters(), seed + 50);
    Rng rng(seed);
    const auto x = images(2, 1, 8, rng), y = images(2, 1, 8, rng);
    const auto g_params = param_tensors(m.generator.parameters());
    const auto d_params = param_tensors(m.discriminator.parameters());
    const auto rg = grad_check([&](const auto&) { return generator_objective(m.discriminator, x, y, m.generator, 10.0); },
                               g_params);
    const auto ra = grad_check([&](const auto&) { return lsgan_g_loss(m.discriminator, x, m.generator); }, g_params);
    const auto rd = grad_check([&](const auto&) { return lsgan_d_loss(m.discriminator, x, y, m.generator); }, d_params);
    INFO("seed " << seed << " worst G " << rg.worst_analytic << " vs " << rg.worst_numeric);
    CHECK(rg.max_relative_error < 1e-4);
    CHECK(ra.max_relative_error < 1e-4);
    CHECK(rd.max_relative_error < 1e-4);
  }
}

TEST_CASE("training") {
  const auto pairs = generate_paired_toy(12, 5);
  GanTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  cfg.seed = 9;
  SUBCASE("history has one entry per epoch and is reproducible") {
    GanModel a = GanModel::init(1, 3, 4), b = GanModel::init(1, 3, 4);
    const auto ha = train_gan(a, pairs, cfg), hb = train_gan(b, pairs, cfg);
    REQUIRE(ha.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
      CHECK(ha[e].epoch == e + 1);
      CHECK(ha[e].d_loss == hb[e].d_loss);
      CHECK(ha[e].g_loss == hb[e].g_loss);
    }
  }
  SUBCASE("each step moves only its own player") {
    GanModel m = GanModel::init(2, 3, 4);
    GanTrainer trainer(m, cfg);
    std::vector<Tensor> x, y;
    for (const GanPair& p : pairs) {
      x.push_back(p.real);
      y.push_back(p.sim);
    }
    auto snap = [](const std::vector<NamedTensor>& ps) {
      std::vector<std::vector<double>> out;
      for (const NamedTensor& p : ps) out.push_back(to_vec(p.tensor));
      return out;
    };
    const auto g0 = snap(m.generator.parameters()), d0 = snap(m.discriminator.parameters());
    trainer.discriminator_step(x, y);
    CHECK(snap(m.generator.parameters()) == g0);
    CHECK(snap(m.discriminator.parameters()) != d0);
    const auto d1 = snap(m.discriminator.parameters());
    trainer.generator_step(x, y);
    CHECK(snap(m.discriminator.parameters()) == d1);
    CHECK(snap(m.generator.parameters()) != g0);
  }
  SUBCASE("errors") {
    GanModel m = GanModel::init(1, 3, 4);
    CHECK_THROWS_AS(train_gan(m, {}, cfg), ContractError);
    GanTrainConfig bad = cfg;
    bad.lambda = -1.0;
    CHECK_THROWS_AS(train_gan(m, pairs, bad), ContractError);
  }
}

TEST_CASE("paired toy data") {
  const PairConfig pc;
  const auto pairs = generate_paired_toy(50, 3);
  SUBCASE("shapes and range") {
    for (const GanPair& p : pairs) {
      CHECK(p.real.shape() == Shape{3, 32, 32});
      CHECK(p.sim.shape() == Shape{3, 32, 32});
      for (const Tensor* t : {&p.real, &p.sim})
        for (double v : t->values()) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
  SUBCASE("pairs are pixel-aligned") {
    const Tensor blank = corrupt(Tensor::full({3, 32, 32}, pc.background), pc);
    for (const GanPair& p : pairs) {
      double ws = 0, xs = 0, ys = 0, wr = 0, xr = 0, yr = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
          for (std::size_t x = 0; x < 32; ++x) {
            const std::size_t i = (c * 32 + y) * 32 + x;
            const double s = p.sim.at(i) - pc.background, r = p.real.at(i) - blank.at(i);
            ws += s, xs += s * x, ys += s * y;
            wr += r, xr += r * x, yr += r * y;
          }
      CHECK(std::hypot(xs / ws - xr / wr, ys / ws - yr / wr) < 0.5);
    }
  }
  SUBCASE("deterministic under seed") {
    const auto again = generate_paired_toy(50, 3);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CHECK(to_vec(again[i].real) == to_vec(pairs[i].real));
      CHECK(to_vec(again[i].sim) == to_vec(pairs[i].sim));
    }
    CHECK(to_vec(generate_paired_toy(1, 4)[0].sim) != to_vec(pairs[0].sim));
  }
  SUBCASE("eighty-twenty split") {
    const auto [train, test] = split_pairs(pairs);
    CHECK(train.size() == 40);
    CHECK(test.size() == 10);
    CHECK(to_vec(test[0].sim) == to_vec(pairs[40].sim));
  }
  SUBCASE("file round trip") {
    const std::string path = temp_path("pairs.vtp");
    write_pairs(path, pairs);
    const auto back = read_pairs(path);
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CHECK(to_vec(back[i].real) == to_vec(pairs[i].real));
      CHECK(to_vec(back[i].sim) == to_vec(pairs[i].sim));
    }
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    in.close();
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(read_pairs(path), FormatError);
    std::filesystem::remove(path);
  }
  SUBCASE("n must be positive") { CHECK_THROWS_AS(generate_paired_toy(0, 1), ContractError); }
}

TEST_CASE("ssim") {
  Rng rng(8);
  SUBCASE("identical images score one") {
    for (const Tensor& t : images(5, 3, 16, rng)) CHECK(std::abs(ssim(t, t) - 1.0) < 1e-9);
  }
  SUBCASE("symmetric") {
    const auto a = images(4, 3, 16, rng), b = images(4, 3, 16, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ssim(a[i], b[i]) == ssim(b[i], a[i]));
  }
  SUBCASE("constant images in closed form") {
    const double expect = (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
    CHECK(std::abs(ssim(Tensor::full({3, 12, 12}, 0.5), Tensor::full({3, 12, 12}, 0.6)) - expect) < 1e-12);
    CHECK(std::abs(expect - 0.9836) < 1e-4);
  }
  SUBCASE("bounded by one, with equality only for identical images") {
    for (int trial = 0; trial < 40; ++trial) {
      const auto a = images(1, 3, 12, rng);
      Tensor b = a[0].clone();
      b.values_mut()[rng.below(b.size())] += rng.uniform(0.01, 0.2);
      const double s = ssim(a[0], b);
      CHECK(s < 1.0);
      CHECK(s >= -1.0);
    }
  }
  SUBCASE("matches a direct single-window computation") {
    const auto a = images(1, 1, 8, rng), b = images(1, 1, 8, rng);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < 64; ++i) ma += a[0].at(i) / 64, mb += b[0].at(i) / 64;
    double va = 0, vb = 0, cab = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      va += (a[0].at(i) - ma) * (a[0].at(i) - ma) / 64;
      vb += (b[0].at(i) - mb) * (b[0].at(i) - mb) / 64;
      cab += (a[0].at(i) - ma) * (b[0].at(i) - mb) / 64;
    }
    const double expect = (2 * ma * mb + 1e-4) * (2 * cab + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
    CHECK(std::abs(ssim(a[0], b[0]) - expect) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 9})), DimensionError);
    CHECK_THROWS_AS(ssim(Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 4})), DimensionError);
  }
}

TEST_CASE("gan checkpoint") {
  const std::string path = temp_path("gan.xmf");
  GanModel m = GanModel::init(6, 3, 4);
  round_to_float(m.parameters());
  save_gan(path, m);
  const GanModel back = load_gan(path);
  Rng rng(1);
  const auto x = images(1, 3, 16, rng);
  CHECK(to_vec(translate(back.generator, x[0])) == to_vec(translate(m.generator, x[0])));
  CHECK(to_vec(back.discriminator(x[0], x[0])) == to_vec(m.discriminator(x[0], x[0])));
  save_model(path, FusionModel::init(FusionConfig::toy(), 1));
  CHECK_THROWS_AS(load_gan(path), FormatError);
  std::filesystem::remove(path);
}
