#pragma once

// Concurrence of two-qubit states.

#include "qmon/qcore.hpp"

namespace qmon {

// chi_phi = 2 (phi_10 phi_01 - phi_11 phi_00) = <T phi | sigma_y (x) sigma_y phi>.
// Bilinear in phi (no conjugation), so chi(c phi) = c^2 chi(phi).
complexd chi(const Vec4& phi);

// |chi| / ||phi||^2 for a not-necessarily-normalized pure state.
// Throws std::invalid_argument on (numerically) zero vectors.
double concurrence_pure(const Vec4& phi);

// X structure: zeros outside the diagonal and the anti-diagonal.
bool is_x_state(const Mat4& rho, double tol = herm_tol);

// Closed form 2 max{0, |rho_23| - sqrt(rho_11 rho_44), |rho_14| - sqrt(rho_22 rho_33)}.
// Throws std::invalid_argument if rho is not an X state within herm_tol.
double concurrence_x(const Mat4& rho);

// Wootters concurrence max{0, mu_1 - mu_2 - mu_3 - mu_4}, mu_i the decreasing
// square roots of the eigenvalues of rho (sy x sy) conj(rho) (sy x sy).
// Throws std::invalid_argument if rho is not a valid density operator
// (Hermitian, positive within pos_tol; trace need not be 1, the value is
// computed on rho / Tr rho).
double concurrence_mixed(const Mat4& rho);

// Same as concurrence_mixed without the final clamp at 0; negative values
// indicate how far inside the separable region the spin-flip spectrum sits.
// Useful for locating entanglement sudden death by sign change.
double concurrence_mixed_raw(const Mat4& rho);

}  // namespace qmon
