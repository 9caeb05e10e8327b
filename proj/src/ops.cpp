#include "vtfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dense.hpp"
#include "vtfuse/errors.hpp"

namespace vtfuse {

namespace {


void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

// Strides for viewing a tensor as [outer x extent x inner] around `axis`.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b},
                 {[](auto g, auto, auto in) {
                   for (auto sink : in) {
                     for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += g[i];
                   }
                 }});
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, {[](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                   for (std::size_t i = 0; i < in[1].size(); ++i) in[1][i] -= g[i];
                 }});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, {[a, b](auto g, auto, auto in) {
                   auto av = a.values(), bv = b.values();
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i] * bv[i];
                   for (std::size_t i = 0; i < in[1].size(); ++i) in[1][i] += g[i] * av[i];
                 }});
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += c;
  return make_op("add_scalar", a.shape(), std::move(out), {a}, {[](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                 }});
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  return make_op("mul_scalar", a.shape(), std::move(out), {a}, {[c](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += c * g[i];
                 }});
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    throw DimensionError("add_bias: trailing extent of " + shape_str(x.shape()) +
                         " does not match bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_op("add_bias", x.shape(), std::move(out), {x, bias}, {[n](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                   if (!in[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) in[1][i % n] += g[i];
                   }
                 }});
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 3);
  require_rank("add_channel_bias", bias, 1);
  const std::size_t channels = x.dim(0);
  if (bias.dim(0) != channels) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bv[c];
  }
  return make_op("add_channel_bias", x.shape(), std::move(out), {x, bias},
                 {[channels, plane](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                   if (!in[1].empty()) {
                     for (std::size_t c = 0; c < channels; ++c) {
                       double acc = 0.0;
                       for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
                       in[1][c] += acc;
                     }
                   }
                 }});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const dense::RowMatrix c = dense::load(a.values().data(), m, k) * dense::load(b.values().data(), k, n);
  dense::store(c, out.data());
  return make_op("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
                 {[a, b, m, k, n](auto g, auto, auto in) {
                   const dense::RowMatrix dc = dense::load(g.data(), m, n);
                   if (!in[0].empty()) {
                     const dense::RowMatrix da = dc * dense::load(b.values().data(), k, n).transpose();
                     dense::accumulate(da, in[0].data());
                   }
                   if (!in[1].empty()) {
                     const dense::RowMatrix db = dense::load(a.values().data(), m, k).transpose() * dc;
                     dense::accumulate(db, in[1].data());
                   }
                 }});
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = av[r * cols + c];
  }
  return make_op("transpose", {cols, rows}, std::move(out), {a}, {[rows, cols](auto g, auto, auto in) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < cols; ++c) in[0][r * cols + c] += g[c * rows + r];
                   }
                 }});
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {a}, {[](auto g, auto, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i];
                 }});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: extent mismatch " + shape_str(first) + " vs " + shape_str(s) +
                           " on axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const AxisView pv = axis_view(p.shape(), axis);
    auto src = p.values();
    for (std::size_t o = 0; o < pv.outer; ++o) {
      std::copy_n(src.begin() + o * pv.extent * pv.inner, pv.extent * pv.inner,
                  out.begin() + (o * ov.extent + offset) * ov.inner);
    }
    offsets.push_back(offset);
    offset += pv.extent;
  }
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) extents.push_back(p.dim(axis));
  return make_op("concat", out_shape, std::move(out), parts,
                 {[ov, offsets, extents](auto g, auto, auto in) {
                   for (std::size_t p = 0; p < in.size(); ++p) {
                     if (in[p].empty()) continue;
                     const std::size_t block = extents[p] * ov.inner;
                     for (std::size_t o = 0; o < ov.outer; ++o) {
                       const double* src = g.data() + (o * ov.extent + offsets[p]) * ov.inner;
                       double* dst = in[p].data() + o * block;
                       for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                     }
                   }
                 }});
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                         " of " + shape_str(a.shape()));
  }
  const AxisView av = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  auto src = a.values();
  const std::size_t block = length * av.inner;
  for (std::size_t o = 0; o < av.outer; ++o) {
    std::copy_n(src.begin() + (o * av.extent + start) * av.inner, block, out.begin() + o * block);
  }
  return make_op("slice", out_shape, std::move(out), {a}, {[av, start, block](auto g, auto, auto in) {
                   for (std::size_t o = 0; o < av.outer; ++o) {
                     double* dst = in[0].data() + (o * av.extent + start) * av.inner;
                     const double* src = g.data() + o * block;
                     for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                   }
                 }});
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  if (times == 0) throw DimensionError("repeat_rows: zero repetitions");
  Shape out_shape = a.shape();
  out_shape[0] *= times;
  std::vector<double> out;
  out.reserve(a.size() * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), a.values().begin(), a.values().end());
  const std::size_t n = a.size();
  return make_op("repeat_rows", out_shape, std::move(out), {a}, {[n, times](auto g, auto, auto in) {
                   for (std::size_t t = 0; t < times; ++t) {
                     for (std::size_t i = 0; i < n; ++i) in[0][i] += g[t * n + i];
                   }
                 }});
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op("sum", {1}, {acc}, {a}, {[](auto g, auto, auto in) {
                   for (double& v : in[0]) v += g[0];
                 }});
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op("mean", {1}, {acc / n}, {a}, {[n](auto g, auto, auto in) {
                   for (double& v : in[0]) v += g[0] / n;
                 }});
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const AxisView v = axis_view(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) peak = std::max(peak, xv[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double z = std::exp(xv[base + e * v.inner] - peak);
        out[base + e * v.inner] = z;
        total += z;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  return make_op("softmax", x.shape(), std::move(out), {x}, {[v](auto g, auto y, auto in) {
                   for (std::size_t o = 0; o < v.outer; ++o) {
                     for (std::size_t i = 0; i < v.inner; ++i) {
                       const std::size_t base = o * v.extent * v.inner + i;
                       double dot = 0.0;
                       for (std::size_t e = 0; e < v.extent; ++e) {
                         dot += g[base + e * v.inner] * y[base + e * v.inner];
                       }
                       for (std::size_t e = 0; e < v.extent; ++e) {
                         const std::size_t k = base + e * v.inner;
                         in[0][k] += y[k] * (g[k] - dot);
                       }
                     }
                   }
                 }});
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op("relu", x.shape(), std::move(out), {x}, {[](auto g, auto y, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) {
                     if (y[i] > 0.0) in[0][i] += g[i];
                   }
                 }});
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_op("sigmoid", x.shape(), std::move(out), {x}, {[](auto g, auto y, auto in) {
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i] * y[i] * (1.0 - y[i]);
                 }});
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw ContractError("log: non-positive input " + std::to_string(xv[i]) + " at index " +
                          std::to_string(i));
    }
    out[i] = std::log(xv[i]);
  }
  return make_op("log", x.shape(), std::move(out), {x}, {[x](auto g, auto, auto in) {
                   auto xv = x.values();
                   for (std::size_t i = 0; i < in[0].size(); ++i) in[0][i] += g[i] / xv[i];
                 }});
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::clamp(v, lo, hi);
  return make_op("clamp", x.shape(), std::move(out), {x}, {[x, lo, hi](auto g, auto, auto in) {
                   auto xv = x.values();
                   for (std::size_t i = 0; i < in[0].size(); ++i) {
                     if (xv[i] > lo && xv[i] < hi) in[0][i] += g[i];
                   }
                 }});
}

}  // namespace vtfuse
