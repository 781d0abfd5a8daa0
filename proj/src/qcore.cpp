#include "qmon/qcore.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace qmon {

namespace {
const complexd I(0.0, 1.0);
}

const Mat2& pauli(int i) {
  static const Mat2 sx = (Mat2() << 0, 1, 1, 0).finished();
  static const Mat2 sy = (Mat2() << 0, -I, I, 0).finished();
  static const Mat2 sz = (Mat2() << 1, 0, 0, -1).finished();
  switch (i) {
    case 1: return sx;
    case 2: return sy;
    case 3: return sz;
  }
  throw std::invalid_argument("pauli: index must be 1, 2 or 3");
}

const Mat2& sigma_plus() {
  static const Mat2 sp = (Mat2() << 0, 1, 0, 0).finished();
  return sp;
}

const Mat2& sigma_minus() {
  static const Mat2 sm = (Mat2() << 0, 0, 1, 0).finished();
  return sm;
}

const Mat2& id2() {
  static const Mat2 one = Mat2::Identity();
  return one;
}

const Mat4& id4() {
  static const Mat4 one = Mat4::Identity();
  return one;
}

Mat4 tensor(const Mat2& a, const Mat2& b) {
  Mat4 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

Vec4 tensor(const Vec2& a, const Vec2& b) {
  Vec4 out;
  out << a(0) * b(0), a(0) * b(1), a(1) * b(0), a(1) * b(1);
  return out;
}

Vec4 t_conjugate(const Vec4& phi) { return phi.conjugate(); }

const std::array<Vec4, 4>& bell_basis() {
  static const std::array<Vec4, 4> basis = [] {
    const double s = 1.0 / std::sqrt(2.0);
    Vec4 b0;
    b0 << s, 0, 0, s;  // (|11> + |00>)/sqrt(2)
    std::array<Vec4, 4> out;
    out[0] = b0;
    for (int i = 1; i <= 3; ++i) out[i] = tensor(pauli(i), id2()) * b0;
    return out;
  }();
  return basis;
}

Mat2 partial_trace(const Mat4& m, int which) {
  Mat2 out = Mat2::Zero();
  if (which == 1) {
    // keep qubit 1: sum over the qubit-2 index
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        out(i, j) = m(2 * i, 2 * j) + m(2 * i + 1, 2 * j + 1);
  } else if (which == 2) {
    // keep qubit 2: sum over the qubit-1 index
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        out(i, j) = m(i, j) + m(i + 2, j + 2);
  } else {
    throw std::invalid_argument("partial_trace: which must be 1 or 2");
  }
  return out;
}

complexd det2(const Mat2& m) { return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0); }

Mat4 dyad(const Vec4& v) { return v * v.adjoint(); }

bool is_hermitian(const Mat2& m, double tol) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

bool is_hermitian(const Mat4& m, double tol) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

void validate_density(const Mat4& rho, bool normalized) {
  if (!is_hermitian(rho))
    throw std::invalid_argument("density operator is not Hermitian");
  if (normalized && std::abs(rho.trace() - 1.0) > herm_tol)
    throw std::invalid_argument("density operator trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Mat4> es(rho, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -pos_tol)
    throw std::invalid_argument("density operator has a negative eigenvalue");
}

double trace_distance(const Mat4& a, const Mat4& b) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(a - b, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace qmon
