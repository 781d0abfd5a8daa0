#pragma once

// Concurrence along recorded trajectories, closed-form benchmark curves for
// the bundled presets, disentanglement-time solvers, and the multiplicative
// pathwise reconstruction of the a posteriori concurrence from a stored
// noise record.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qmon/engine.hpp"
#include "qmon/model.hpp"

namespace qmon {

// Named scalar curve t -> value, exportable on the simulation grid.
struct OracleCurve {
  std::string id;
  std::function<double(double)> value;
};

// Concurrence of the normalized conditional state at each grid point:
// |chi(psi)| / ||psi||^2 for pure records, Wootters concurrence of
// rho / Tr rho for density records. The series stops at the first
// zero-weight point (reference-measure underflow).
std::vector<double> aposteriori_concurrence(const TrajectoryRecord& rec);

// Mean concurrence under local detection: C(0) exp(-int_0^t c(s) ds) with the
// piecewise-constant total decay rate c(s) = local_coefficients(m, s).c_total.
// Also an upper bound for the concurrence of the mean (a priori) state.
// Throws if some detection operator is not local on a single qubit.
OracleCurve oracle_mean_concurrence_local(const MonitoredModel& m, double c0);

// Deterministic chi(t) of the unnormalized reference-measure state under
// collective sigma_x monitoring with mixing phases (theta, phi) and zero
// qubit splitting:
//   chi(t) = 1/2 e^{-g- t}(chi0 + d0) + 1/2 e^{-g+ t}(chi0 - d0),
//   g_pm = gamma (1 pm e^{2 i theta}).
// The chi +- D combinations are the eigenmodes: (chi + D) decays at g_-,
// (chi - D) at g_+. The mean a posteriori concurrence is |value|.
complexd oracle_nonlocal_chi(double gamma, double theta, complexd chi0,
                             complexd d0, double t);

// Mean a posteriori concurrence under the random Bell-swap model:
// 1 - (1 - c0) e^{-nu t}.
double oracle_swap_mean_concurrence(double nu, double c0, double t);

// A priori concurrence for psi0 = (|10> + i|01>)/sqrt(2) under independent
// sigma_x noise of strength gamma on each qubit: (1/2)(1 + e^{-gamma t})^2 - 1.
// Negative values past the death time indicate separability margin.
double apriori_concurrence_sigmax(double gamma, double t);

// A priori state of the random Bell-swap model:
// e^{-nu t} rho0 + (1 - e^{-nu t}) (Tr rho0) 1/4.
Mat4 apriori_state_swap(const Mat4& rho0, double nu, double t);

// First time the a priori concurrence vanishes, for the closed-form cases:
//  - "local_diffusive" / "local_jump" / "nonlocal_diffusive" (params: gamma,
//    optional omega0 which must be 0) with rho0 = the sigma_x-noise death
//    state above: ln(1 + sqrt 2) / gamma;
//  - "swap_witness" (params: nu) with an X-state rho0: bisection on the
//    X-state concurrence of the analytic a priori state, tolerance 1e-10.
// Returns nullopt when rho0 is separable (nothing to lose) or, for the swap
// model, when the concurrence never vanishes. Unsupported cases throw.
std::optional<double> oracle_esd_times(
    const std::string& preset_id, const std::map<std::string, double>& params,
    const Mat4& rho0);

// First time the a priori concurrence of the master evolution vanishes on
// [0, T]: grid scan of the unclamped spin-flip value for a sign change, then
// bisection refined with Runge-Kutta substeps, tolerance 1e-10 in t.
// nullopt when the state starts separable or the concurrence stays positive.
std::optional<double> master_esd_time(const SimModel& m, const Mat4& rho0,
                                      double T, double dt);

// Pathwise reconstruction of the a posteriori concurrence from the recorded
// noise increments and counts via the multiplicative (stochastic-exponential)
// law: per diffusive output j the log gains n_j dWhat_j - (c_j + n_j^2/2) dt
// with n_j = Re ell_j - m_j and dWhat_j = dW_j - m_j dt, per counting channel
// k the drift -(c_{d+k} + |d_k| - mu_k) dt and a factor |d_k| / mu_k at each
// count. A count through a channel with det J_k = 0 kills the concurrence
// exactly. Coefficients are evaluated at the step-start state, matching the
// integrator's convention, so direct and reconstructed series agree to O(dt).
// Requires a pure-state record with stored noise and a model whose detection
// operators are local on a single qubit.
std::vector<double> aposteriori_concurrence_reconstruction(
    const TrajectoryRecord& rec, const MonitoredModel& m);

// Bilinear forms of the (unnormalized) state driving the chi dynamics under
// collective sigma_x monitoring: phi^T (sz x sz) phi and
// phi^T (sz x 1 + 1 x sz) phi. Like chi, both are noise-free along such paths.
complexd bilinear_zz(const Vec4& phi);
complexd bilinear_z_total(const Vec4& phi);

// Max residual over the grid of the integral form of the chi_pm dynamics
// along a pure reference-measure record of the collective-monitoring model:
//   chi pm D = e^{-g_mp t}(chi0 pm d0) mp i omega0 int_0^t e^{-g_mp (t-s)} E(s) ds,
// with E(s) evaluated from the recorded state and the integral by trapezoid.
// O(dt^2) for omega0 = 0 (where it reduces to the closed form), O(dt) otherwise.
double nonlocal_chi_residual(const TrajectoryRecord& rec, double gamma,
                             double theta, double omega0);

}  // namespace qmon
