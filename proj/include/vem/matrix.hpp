#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vem/error.hpp"
#include "vem/rng.hpp"

namespace vem {

// Dense row-major real matrix; the carrier for features, embeddings, voxel
// targets and every parameter tensor. Biases are stored as 1 x n matrices so
// all parameters share one type.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw ValidationError(what + ": non-finite value");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(what + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_cols(const Matrix& m, Eigen::Index cols, const std::string& what) {
  if (m.cols() != cols)
    throw ValidationError(what + ": expected " + std::to_string(cols) + " columns, got " +
                          std::to_string(m.cols()));
}

// Rows of `m` selected by index, in the given order.
inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Matrix row_vector(const Vector& v) { return v.transpose(); }

}  // namespace vem
