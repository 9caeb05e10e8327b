#include <string>

#include "vtfuse/errors.hpp"
#include "vtfuse/gan.hpp"

namespace vtfuse {

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t ch = a.dim(0), h = a.dim(1), w = a.dim(2), k = cfg.window;
  if (k == 0 || k > h || k > w) {
    throw DimensionError("ssim: window " + std::to_string(k) + " does not fit " + shape_str(a.shape()));
  }
  const double n = static_cast<double>(k * k);
  const auto av = a.values(), bv = b.values();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y + k <= h; ++y)
      for (std::size_t x = 0; x + k <= w; ++x) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t i = (c * h + y + dy) * w + x + dx;
            sa += av[i];
            sb += bv[i];
          }
        const double ma = sa / n, mb = sb / n;
        double vaa = 0.0, vbb = 0.0, vab = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t i = (c * h + y + dy) * w + x + dx;
            const double da = av[i] - ma, db = bv[i] - mb;
            vaa += da * da;
            vbb += db * db;
            vab += da * db;
          }
        vaa /= n;
        vbb /= n;
        vab /= n;
        total += ((2.0 * ma * mb + cfg.c1) * (2.0 * vab + cfg.c2)) /
                 ((ma * ma + mb * mb + cfg.c1) * (vaa + vbb + cfg.c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

double mean_ssim(const Generator& g, const std::vector<GanPair>& pairs, const SsimConfig& cfg) {
  if (pairs.empty()) throw ContractError("mean_ssim: no pairs");
  double total = 0.0;
  for (const GanPair& p : pairs) total += ssim(translate(g, p.real), p.sim, cfg);
  return total / static_cast<double>(pairs.size());
}

}  // namespace vtfuse
