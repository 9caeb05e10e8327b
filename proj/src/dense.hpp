#pragma once

#include <Eigen/Core>

namespace vtfuse::dense {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

// Eigen picks its kernels by pointer alignment, which changes the summation
// order. Products therefore run only on owned (aligned) copies, so results
// depend on values alone and not on where the heap placed them.
inline RowMatrix load(const double* p, Eigen::Index rows, Eigen::Index cols, Eigen::Index stride) {
  return ConstMap(p, rows, cols, Eigen::OuterStride<>(stride));
}
inline RowMatrix load(const double* p, Eigen::Index rows, Eigen::Index cols) {
  return load(p, rows, cols, cols);
}

inline void store(const RowMatrix& m, double* p, Eigen::Index stride) {
  MutMap(p, m.rows(), m.cols(), Eigen::OuterStride<>(stride)) = m;
}
inline void store(const RowMatrix& m, double* p) { store(m, p, m.cols()); }

inline void accumulate(const RowMatrix& m, double* p, Eigen::Index stride) {
  MutMap(p, m.rows(), m.cols(), Eigen::OuterStride<>(stride)) += m;
}
inline void accumulate(const RowMatrix& m, double* p) { accumulate(m, p, m.cols()); }

}  // namespace vtfuse::dense
