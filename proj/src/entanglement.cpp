#include "qmon/entanglement.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace qmon {

complexd chi(const Vec4& phi) {
  return 2.0 * (phi(1) * phi(2) - phi(0) * phi(3));
}

double concurrence_pure(const Vec4& phi) {
  double n2 = phi.squaredNorm();
  if (n2 < 1e-280)
    throw std::invalid_argument("concurrence_pure: zero state vector");
  return std::abs(chi(phi)) / n2;
}

bool is_x_state(const Mat4& rho, double tol) {
  static const int off[8][2] = {{0, 1}, {0, 2}, {1, 0}, {2, 0},
                                {1, 3}, {2, 3}, {3, 1}, {3, 2}};
  for (auto& ij : off)
    if (std::abs(rho(ij[0], ij[1])) > tol) return false;
  return true;
}

double concurrence_x(const Mat4& rho) {
  if (!is_x_state(rho))
    throw std::invalid_argument("concurrence_x: state has non-X matrix elements");
  double p1 = std::max(0.0, rho(0, 0).real());
  double p2 = std::max(0.0, rho(1, 1).real());
  double p3 = std::max(0.0, rho(2, 2).real());
  double p4 = std::max(0.0, rho(3, 3).real());
  double c1 = std::abs(rho(1, 2)) - std::sqrt(p1 * p4);
  double c2 = std::abs(rho(0, 3)) - std::sqrt(p2 * p3);
  return 2.0 * std::max({0.0, c1, c2});
}

namespace {

double spin_flip_sum(const Mat4& rho_in) {
  double tr = rho_in.trace().real();
  if (std::abs(tr) < 1e-280)
    throw std::invalid_argument("concurrence_mixed: zero-trace input");
  Mat4 rho = rho_in / tr;
  validate_density(rho, false);
  static const Mat4 yy = tensor(pauli(2), pauli(2));
  Mat4 r = rho * yy * rho.conjugate() * yy;
  Eigen::ComplexEigenSolver<Mat4> es(r, false);
  // Eigenvalues are nonnegative reals up to round-off; clamp dust before the
  // square roots (rank-deficient inputs otherwise leak ~sqrt(eps) into C).
  double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  std::array<double, 4> mu;
  for (int i = 0; i < 4; ++i) {
    double lam = es.eigenvalues()(i).real();
    if (lam < 0.0 || std::abs(es.eigenvalues()(i)) < 1e-13 * scale) lam = 0.0;
    mu[i] = std::sqrt(lam);
  }
  std::sort(mu.begin(), mu.end(), std::greater<double>());
  return mu[0] - mu[1] - mu[2] - mu[3];
}

}  // namespace

double concurrence_mixed(const Mat4& rho) {
  return std::max(0.0, spin_flip_sum(rho));
}

double concurrence_mixed_raw(const Mat4& rho) { return spin_flip_sum(rho); }

}  // namespace qmon
