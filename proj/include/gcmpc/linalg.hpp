#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>

namespace gcmpc {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Row6 = Eigen::Matrix<double, 1, 6>;
using Mat62 = Eigen::Matrix<double, 6, 2>;
using Mat32 = Eigen::Matrix<double, 3, 2>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

/**
 * @brief Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
 *
 * Follows Higham (2005), "The scaling and squaring method for the matrix exponential
 * revisited". The 13th-order approximant is used unconditionally; the matrices
 * handled here are small, so the cheaper low-order branches are not worth the code.
 */
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
expm(const Eigen::MatrixBase<Derived>& input)
{
  using Mat = Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
                            Derived::ColsAtCompileTime>;
  if (input.rows() != input.cols()) {
    throw std::invalid_argument("expm: matrix must be square");
  }
  static constexpr std::array<double, 14> b = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  Mat A = input;
  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    A /= std::ldexp(1.0, squarings);
  }

  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  const Mat U =
    A * (A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
  const Mat V =
    A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;

  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int i = 0; i < squarings; ++i) { R = (R * R).eval(); }
  return R;
}

/// Largest singular value.
template <typename Derived>
double spectral_norm(const Eigen::MatrixBase<Derived>& m)
{
  if (m.size() == 0) { return 0.0; }
  Eigen::MatrixXd mtm = (m.transpose() * m).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mtm, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix, eigenvalues below rel_tol*max dropped.
template <typename Derived>
Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
psd_pinv(const Eigen::MatrixBase<Derived>& m, double rel_tol = 1e-12)
{
  using Mat = Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.eval());
  const auto& ev = es.eigenvalues();
  const double cutoff = rel_tol * std::max(1e-300, ev.cwiseAbs().maxCoeff());
  Mat out = Mat::Zero(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cutoff) {
      out += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / ev[i];
    }
  }
  return out;
}

template <typename Derived>
double min_eigenvalue(const Eigen::MatrixBase<Derived>& symmetric)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace gcmpc
