#pragma once

// Trajectory integration and ensemble estimation.
//
// Q-mode integrates the linear (unnormalized) equations under the reference
// measure: diffusive outputs are Wiener increments, counts arrive as Poisson
// processes at the reference rates lambda_k, and the likelihood weight
// p_t = ||phi||^2 (or Tr sigma) turns reference averages into physical ones.
// P-mode integrates normalized states directly: diffusive outputs carry the
// drift m_j = 2 Re Tr(R_j rho), counts are thinned to the physical intensity
// mu_k = Tr J_k(rho), and a count replaces the state by J_k(rho)/Tr J_k(rho).
//
// Two stepping schemes. "euler" is the plain Euler-Maruyama update of
// step_linear_sse / step_linear_sme. "exponential" (default) advances with
// exp(sum_j R_j dW_j) exp((K - 1/2 sum_j R_j R_j) dt); same weak order, but
// exact for the commuting-generator models here, and it preserves the
// determinism of chi along non-local paths and the constancy of concurrence
// under unitary-proportional jumps at finite dt, which the plain update
// only reaches as dt -> 0.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "qmon/model.hpp"

namespace qmon {

enum class Measure { Q, P };
enum class Scheme { exponential, euler };
enum class Observable { state, concurrence, weight, counts };

using Superop = Eigen::Matrix<complexd, 16, 16>;
using LiouvilleFn = std::function<Mat4(const Mat4&, double)>;

// Piecewise-constant compiled model the integrators run on.
struct SimModel {
  struct Segment {
    double t0 = 0.0;
    std::vector<Mat4> R;
    std::vector<JumpChannel> channels;
    std::vector<Mat4> channel_effect;  // sum K^dag K per channel
    Mat4 K = Mat4::Zero();
    double rate_sum = 0.0;
  };
  std::vector<Segment> segments;
  LiouvilleFn liouville;
  int n_diffusive = 0;
  int n_counting = 0;
  bool operator_channels = true;  // every jump channel has a single Kraus term
  std::optional<MonitoredModel> source;

  static SimModel compile(const MonitoredModel& m);
  static SimModel from_channels(std::vector<JumpChannel> channels,
                                LiouvilleFn liou);
  const Segment& at(double t) const;
  double max_rate() const;
};

struct TrajectoryRecord {
  Measure measure = Measure::P;
  double dt = 0.0;
  std::vector<double> times;
  // Pure paths store psi (unnormalized in Q-mode), density paths store rho.
  std::vector<Vec4> psi;
  std::vector<Mat4> rho;
  std::vector<double> weight;  // p_t in Q-mode, 1 in P-mode
  // dW[j][i]: increment of output j over (times[i], times[i+1]].
  std::vector<std::vector<double>> dW;
  struct Count {
    double t;
    int channel;
    int mark;
  };
  std::vector<Count> counts;
  bool terminated = false;  // Q-mode weight underflow
  bool pure() const { return !psi.empty(); }
  int counts_before(int channel, double t) const;
};

// One Euler-Maruyama update of the linear stochastic Schroedinger equation.
// dW has one entry per diffusive operator, dN one 0/1 indicator per counting
// channel; all terms are evaluated at the pre-step phi.
Vec4 step_linear_sse(const Vec4& phi, const DerivedOperators& ops,
                     const std::vector<double>& rates, double dt,
                     std::span<const double> dW, std::span<const int> dN);

// Same update at the density level for the linear stochastic master equation.
Mat4 step_linear_sme(const Mat4& sigma,
                     const std::function<Mat4(const Mat4&)>& liou,
                     const std::vector<Mat4>& R,
                     const std::vector<JumpChannel>& channels, double dt,
                     std::span<const double> dW, std::span<const int> dN);

using InitialState = std::variant<Vec4, Mat4>;

TrajectoryRecord simulate_physical(const SimModel& m, const InitialState& init,
                                   double T, double dt, std::uint64_t seed,
                                   Scheme scheme = Scheme::exponential);
TrajectoryRecord simulate_reference(const SimModel& m, const InitialState& init,
                                    double T, double dt, std::uint64_t seed,
                                    Scheme scheme = Scheme::exponential);

// Deterministic master equation, classic RK4 on the compiled Liouvillian.
// Throws std::runtime_error when |Tr eta - 1| drifts beyond 1e-8 (suggests a
// smaller dt). Returned series includes t = 0.
std::vector<Mat4> evolve_master(const SimModel& m, const Mat4& rho0, double T,
                                double dt);
// Advance one state by n_sub RK4 substeps of size h/n_sub starting at time t.
Mat4 master_advance(const SimModel& m, Mat4 eta, double t, double h, int n_sub);

struct EnsembleOptions {
  double T = 2.0;
  double dt = 1e-3;
  int n_traj = 1;
  std::uint64_t seed = 1;
  Measure measure = Measure::P;
  Scheme scheme = Scheme::exponential;
  int n_threads = 0;  // 0 = hardware concurrency
};

struct EnsembleEstimate {
  Observable kind = Observable::concurrence;
  Measure measure = Measure::P;
  int n_traj = 0;
  std::vector<double> times;
  // Scalar observables (concurrence, weight).
  std::vector<double> mean, se;
  // Observable::state.
  std::vector<Mat4> state_mean;
  std::vector<double> state_se;  // sqrt(sum_ij Var_ij / n), Frobenius level
  // Observable::counts, per channel.
  std::vector<std::vector<double>> count_mean, count_se;
};

EnsembleEstimate ensemble_run(const SimModel& m, const InitialState& init,
                              const EnsembleOptions& opt, Observable obs);
std::vector<EnsembleEstimate> ensemble_run_multi(
    const SimModel& m, const InitialState& init, const EnsembleOptions& opt,
    const std::vector<Observable>& obs);

// Counter-based stream derivation: trajectory i of a run with root seed s
// draws from an independent generator seeded with derive_stream(s, i).
std::uint64_t derive_stream(std::uint64_t root, std::uint64_t index);

// The recording grid used by every run: ceil(T/dt) steps of size dt with the
// last point clamped to exactly T.
std::vector<double> time_grid(double T, double dt);

// exp(m) for 2x2 complex matrices, closed form.
Mat2 exp2(const Mat2& m);

}  // namespace qmon
