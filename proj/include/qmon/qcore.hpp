#pragma once

// Core types and fixed conventions for the two-qubit simulator.
//
// Basis order is |11>, |10>, |01>, |00> (qubit 1 = left tensor factor,
// single-qubit order |1>, |0>). Every matrix and state vector in the code
// uses this ordering.

#include <array>
#include <complex>
#include <Eigen/Dense>

namespace qmon {

using complexd = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using Mat4 = Eigen::Matrix4cd;
using Vec2 = Eigen::Vector2cd;
using Vec4 = Eigen::Vector4cd;

inline constexpr double herm_tol = 1e-12;
inline constexpr double pos_tol = 1e-10;

const Mat2& pauli(int i);  // i = 1,2,3 -> x,y,z
const Mat2& sigma_plus();
const Mat2& sigma_minus();
const Mat2& id2();
const Mat4& id4();

// Kronecker product, first factor acts on qubit 1.
Mat4 tensor(const Mat2& a, const Mat2& b);
Vec4 tensor(const Vec2& a, const Vec2& b);

// Componentwise complex conjugation in the canonical basis.
Vec4 t_conjugate(const Vec4& phi);

// beta_0 = (|00> + |11>)/sqrt(2), beta_i = (sigma_i (x) 1) beta_0.
const std::array<Vec4, 4>& bell_basis();

// which = 1 traces out qubit 2 (returns the qubit-1 operator), which = 2
// traces out qubit 1.
Mat2 partial_trace(const Mat4& m, int which);

complexd det2(const Mat2& m);

Mat4 dyad(const Vec4& v);  // |v><v|

bool is_hermitian(const Mat2& m, double tol = herm_tol);
bool is_hermitian(const Mat4& m, double tol = herm_tol);

// Throws std::invalid_argument if rho is not Hermitian within herm_tol, has an
// eigenvalue below -pos_tol, or (when normalized is set) trace differs from 1
// by more than herm_tol.
void validate_density(const Mat4& rho, bool normalized = true);

double trace_distance(const Mat4& a, const Mat4& b);

}  // namespace qmon
