#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace fedaia {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Singular values below kPinvCutoff * sigma_max are treated as zero.
inline constexpr double kPinvCutoff = 1e-10;

namespace linalg {

template <typename Derived>
using PlainMatrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
Eigen::JacobiSVD<PlainMatrix<Derived>> thin_svd(const Eigen::MatrixBase<Derived>& a) {
  return Eigen::JacobiSVD<PlainMatrix<Derived>>(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

// Number of singular values above the relative cutoff.
template <typename Vec>
Index numerical_rank(const Vec& singular_values, typename Vec::Scalar rel_cutoff) {
  if (singular_values.size() == 0) return 0;
  const auto threshold = rel_cutoff * singular_values(0);
  Index rank = 0;
  for (Index i = 0; i < singular_values.size(); ++i) {
    if (singular_values(i) > threshold) ++rank;
  }
  return rank;
}

// Moore-Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
template <typename Derived>
PlainMatrix<Derived> pseudo_inverse(const Eigen::MatrixBase<Derived>& a,
                                    typename Derived::RealScalar rel_cutoff = kPinvCutoff) {
  if (a.size() == 0) return PlainMatrix<Derived>::Zero(a.cols(), a.rows());
  const auto svd = thin_svd(a);
  const auto& sv = svd.singularValues();
  const Index rank = numerical_rank(sv, rel_cutoff);
  PlainMatrix<Derived> result = PlainMatrix<Derived>::Zero(a.cols(), a.rows());
  for (Index i = 0; i < rank; ++i) {
    result.noalias() += (svd.matrixV().col(i) / sv(i)) * svd.matrixU().col(i).adjoint();
  }
  return result;
}

// Minimum-norm least-squares solution of a * x = b (b may have several columns).
template <typename DerivedA, typename DerivedB>
PlainMatrix<DerivedB> min_norm_solve(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b,
                                     typename DerivedA::RealScalar rel_cutoff = kPinvCutoff) {
  const auto svd = thin_svd(a);
  const auto& sv = svd.singularValues();
  const Index rank = numerical_rank(sv, rel_cutoff);
  PlainMatrix<DerivedB> result = PlainMatrix<DerivedB>::Zero(a.cols(), b.cols());
  for (Index i = 0; i < rank; ++i) {
    result.noalias() += (svd.matrixV().col(i) / sv(i)) * (svd.matrixU().col(i).adjoint() * b);
  }
  return result;
}

// 2-norm condition number sigma_max / sigma_min over min(rows, cols) singular
// values; +inf when the smallest one is exactly zero.
template <typename Derived>
typename Derived::RealScalar condition_number(const Eigen::MatrixBase<Derived>& a) {
  using Real = typename Derived::RealScalar;
  if (a.size() == 0) return std::numeric_limits<Real>::infinity();
  Eigen::JacobiSVD<PlainMatrix<Derived>> svd(a);
  const auto& sv = svd.singularValues();
  const Real smallest = sv(sv.size() - 1);
  if (smallest <= Real(0)) return std::numeric_limits<Real>::infinity();
  return sv(0) / smallest;
}

// lambda_min(a^T a / n) where n = a.rows(); zero when a has fewer rows than columns.
template <typename Derived>
typename Derived::RealScalar min_gram_eigenvalue(const Eigen::MatrixBase<Derived>& a) {
  using Real = typename Derived::RealScalar;
  if (a.rows() == 0 || a.rows() < a.cols()) return Real(0);
  Eigen::JacobiSVD<PlainMatrix<Derived>> svd(a);
  const Real smallest = svd.singularValues()(svd.singularValues().size() - 1);
  return smallest * smallest / static_cast<Real>(a.rows());
}

// Eigenvalues of a symmetric matrix in increasing order.
template <typename Derived>
Eigen::Matrix<typename Derived::RealScalar, Eigen::Dynamic, 1> symmetric_eigenvalues(
    const Eigen::MatrixBase<Derived>& a) {
  Eigen::SelfAdjointEigenSolver<PlainMatrix<Derived>> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.allFinite();
}

}  // namespace linalg
}  // namespace fedaia
