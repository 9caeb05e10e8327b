#pragma once

#include <cstddef>
#include <vector>

#include "vtfuse/tensor.hpp"

namespace vtfuse {

// Elementwise, same shapes required (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// x[..., n] + bias[n], bias repeated over all leading positions.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[C x H x W] + bias[C], one value per channel.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Requires equal extents on every axis except `axis`.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Sub-range [start, start + length) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// Stacks `times` copies of a along axis 0.
Tensor repeat_rows(const Tensor& a, std::size_t times);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Max-subtracted softmax over slices along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
// Subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Throws ContractError on any non-positive entry; clamp first.
Tensor log(const Tensor& x);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation with zero padding. x: [C_in x H x W], w: [C_out x C_in x k x k].
Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dGeometry geometry = {});
// Adjoint of conv2d in x with the same w and geometry. x: [C_out x H x W] ->
// [C_in x ((H-1)*stride - 2*padding + k) x ...].
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, Conv2dGeometry geometry = {});

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, Conv2dGeometry geometry);

}  // namespace vtfuse
