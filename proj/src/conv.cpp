#include <string>

#include "dense.hpp"
#include "vtfuse/errors.hpp"
#include "vtfuse/ops.hpp"

namespace vtfuse {

namespace {


struct ConvDims {
  std::size_t channels, height, width;  // image side
  std::size_t kernel;
  std::size_t out_h, out_w;             // patch grid
  Conv2dGeometry geo;

  std::size_t patch_rows() const { return channels * kernel * kernel; }
  std::size_t patches() const { return out_h * out_w; }
};

// Unfolds image [C x H x W] into columns [C*k*k x out_h*out_w].
std::vector<double> im2col(const double* image, const ConvDims& d) {
  std::vector<double> cols(d.patch_rows() * d.patches(), 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(d.geo.padding);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (std::size_t ky = 0; ky < d.kernel; ++ky) {
      for (std::size_t kx = 0; kx < d.kernel; ++kx) {
        double* row = cols.data() + ((c * d.kernel + ky) * d.kernel + kx) * d.patches();
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.geo.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.geo.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
            row[oy * d.out_w + ox] = image[(c * d.height + iy) * d.width + ix];
          }
        }
      }
    }
  }
  return cols;
}

// Scatter-adds columns back into an image; exact adjoint of im2col.
void col2im(const double* cols, const ConvDims& d, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(d.geo.padding);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (std::size_t ky = 0; ky < d.kernel; ++ky) {
      for (std::size_t kx = 0; kx < d.kernel; ++kx) {
        const double* row = cols + ((c * d.kernel + ky) * d.kernel + kx) * d.patches();
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.geo.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
          for (std::size_t ox = 0; ox < d.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.geo.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
            image[(c * d.height + iy) * d.width + ix] += row[oy * d.out_w + ox];
          }
        }
      }
    }
  }
}

void check_weight(const char* op, const Tensor& w) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw DimensionError(std::string(op) + ": weight must be [C_out x C_in x k x k], got " +
                         shape_str(w.shape()));
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, Conv2dGeometry geometry) {
  if (geometry.stride == 0) throw DimensionError("convolution stride must be positive");
  if (kernel > input + 2 * geometry.padding) {
    throw DimensionError("kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(input + 2 * geometry.padding));
  }
  return (input + 2 * geometry.padding - kernel) / geometry.stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dGeometry geometry) {
  check_weight("conv2d", w);
  if (x.rank() != 3 || x.dim(0) != w.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), w.dim(2), 0, 0, geometry};
  d.out_h = conv_output_extent(d.height, d.kernel, geometry);
  d.out_w = conv_output_extent(d.width, d.kernel, geometry);
  const std::size_t c_out = w.dim(0);

  auto cols = std::make_shared<std::vector<double>>(im2col(x.values().data(), d));
  const auto rows = static_cast<Eigen::Index>(d.patch_rows());
  const auto patches = static_cast<Eigen::Index>(d.patches());
  const auto co = static_cast<Eigen::Index>(c_out);

  // Accumulates each output in (c_in, ky, kx) order, the same order as a
  // direct nested-loop convolution, so the two agree bit for bit.
  std::vector<double> out(c_out * d.patches(), 0.0);
  const double* wv = w.values().data();
  for (std::size_t o = 0; o < c_out; ++o) {
    double* dst = out.data() + o * d.patches();
    for (std::size_t r = 0; r < d.patch_rows(); ++r) {
      const double weight = wv[o * d.patch_rows() + r];
      const double* src = cols->data() + r * d.patches();
      for (std::size_t p = 0; p < d.patches(); ++p) dst[p] += weight * src[p];
    }
  }

  return make_op("conv2d", {c_out, d.out_h, d.out_w}, std::move(out), {x, w},
                 {[w, cols, d, rows, patches, co](auto g, auto, auto in) {
                   const dense::RowMatrix dy = dense::load(g.data(), co, patches);
                   if (!in[0].empty()) {
                     const dense::RowMatrix dcols = dense::load(w.values().data(), co, rows).transpose() * dy;
                     col2im(dcols.data(), d, in[0].data());
                   }
                   if (!in[1].empty()) {
                     const dense::RowMatrix dw = dy * dense::load(cols->data(), rows, patches).transpose();
                     dense::accumulate(dw, in[1].data());
                   }
                 }});
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, Conv2dGeometry geometry) {
  check_weight("conv2d_transpose", w);
  if (x.rank() != 3 || x.dim(0) != w.dim(0)) {
    throw DimensionError("conv2d_transpose: input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
  }
  if (geometry.stride == 0) throw DimensionError("convolution stride must be positive");
  const std::size_t k = w.dim(2);
  const std::size_t span_h = (x.dim(1) - 1) * geometry.stride + k;
  const std::size_t span_w = (x.dim(2) - 1) * geometry.stride + k;
  if (span_h <= 2 * geometry.padding || span_w <= 2 * geometry.padding) {
    throw DimensionError("conv2d_transpose: padding " + std::to_string(geometry.padding) +
                         " leaves no output for input " + shape_str(x.shape()));
  }
  // The image side of the equivalent forward convolution is the output here.
  ConvDims d{w.dim(1), span_h - 2 * geometry.padding, span_w - 2 * geometry.padding, k,
             x.dim(1), x.dim(2), geometry};
  if (conv_output_extent(d.height, k, geometry) != d.out_h ||
      conv_output_extent(d.width, k, geometry) != d.out_w) {
    throw DimensionError("conv2d_transpose: geometry does not invert for " + shape_str(x.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(d.patch_rows());
  const auto patches = static_cast<Eigen::Index>(d.patches());
  const auto co = static_cast<Eigen::Index>(w.dim(0));

  const dense::RowMatrix cols = dense::load(w.values().data(), co, rows).transpose() *
                                dense::load(x.values().data(), co, patches);
  std::vector<double> out(d.channels * d.height * d.width, 0.0);
  col2im(cols.data(), d, out.data());

  return make_op("conv2d_transpose", {d.channels, d.height, d.width}, std::move(out), {x, w},
                 {[x, w, d, rows, patches, co](auto g, auto, auto in) {
                   const std::vector<double> gcols = im2col(g.data(), d);
                   const dense::RowMatrix gc = dense::load(gcols.data(), rows, patches);
                   if (!in[0].empty()) {
                     const dense::RowMatrix dx = dense::load(w.values().data(), co, rows) * gc;
                     dense::accumulate(dx, in[0].data());
                   }
                   if (!in[1].empty()) {
                     const dense::RowMatrix dw = dense::load(x.values().data(), co, patches) * gc.transpose();
                     dense::accumulate(dw, in[1].data());
                   }
                 }});
}

}  // namespace vtfuse
