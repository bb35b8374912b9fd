#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Eigenvalues>

#include "vem/matrix.hpp"

namespace vem {

// Principal-component model. `components` rows are orthonormal and ordered by
// non-increasing `variances`; `mean` is the column mean of the fitted data.
struct PcaModel {
  Vector mean;
  Matrix components;  // k x d
  Vector variances;   // k

  Eigen::Index k() const { return components.rows(); }
  Eigen::Index dim() const { return components.cols(); }

  friend bool operator==(const PcaModel& a, const PcaModel& b) {
    return a.mean.size() == b.mean.size() && a.mean == b.mean &&
           a.components.rows() == b.components.rows() &&
           a.components.cols() == b.components.cols() && a.components == b.components &&
           a.variances.size() == b.variances.size() && a.variances == b.variances;
  }
};

// Sample covariance with divisor n-1.
inline Matrix sample_covariance(const Matrix& x) {
  const Vector mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  return (0.5 * (cov + cov.transpose())).eval();
}

// Flip each row so its largest-magnitude entry is positive. Ties go to the
// lowest index.
inline void canonicalize_signs(Matrix& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index arg = 0;
    rows.row(r).cwiseAbs().maxCoeff(&arg);
    if (rows(r, arg) < 0) rows.row(r) *= -1.0;
  }
}

// Top-k principal components via eigendecomposition of the d x d covariance.
inline PcaModel pca_fit(const Matrix& x, Eigen::Index k) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n < 2) throw PreconditionError("pca_fit: need at least 2 rows, got " + std::to_string(n));
  if (k < 1 || k > std::min(n - 1, d))
    throw PreconditionError("pca_fit: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(std::min(n - 1, d)) + "]");
  require_finite(x, "pca_fit input");

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sample_covariance(x));
  if (eig.info() != Eigen::Success) throw ValidationError("pca_fit: eigendecomposition failed");

  // Eigen orders eigenvalues ascending.
  model.components.resize(k, d);
  model.variances.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = d - 1 - i;
    model.components.row(i) = eig.eigenvectors().col(src).transpose();
    model.variances(i) = std::max(0.0, eig.eigenvalues()(src));
  }
  canonicalize_signs(model.components);
  return model;
}

inline Matrix pca_project(const PcaModel& model, const Matrix& x) {
  require_cols(x, model.dim(), "pca_project");
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Matrix pca_reconstruct(const PcaModel& model, const Matrix& z) {
  require_cols(z, model.k(), "pca_reconstruct");
  return (z * model.components).rowwise() + model.mean.transpose();
}

// Sample Pearson correlation. A zero-variance argument yields 0.
inline double pearson_corr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw PreconditionError("pearson_corr: length mismatch " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
  if (a.size() < 2) throw PreconditionError("pearson_corr: need at least 2 values");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  };
  if (constant(a) || constant(b)) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double pearson_corr(const Vector& a, const Vector& b) {
  return pearson_corr(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                      std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

}  // namespace vem
