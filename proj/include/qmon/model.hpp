#pragma once

// Monitored two-qubit model: Hamiltonian, environment channels L_z, optional
// scattering blocks S_zw, local oscillator amplitudes v(t) and detector mixing
// u(t), split into d diffusive outputs and d' counting outputs with reference
// rates lambda_k. All time dependence is piecewise constant.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qmon/qcore.hpp"

namespace qmon {

struct PiecewisePath {
  std::vector<double> t;  // segment start times, t[0] = 0
  std::vector<Eigen::VectorXcd> val;
  bool empty() const { return val.empty(); }
  const Eigen::VectorXcd& at(double time) const;
};

struct PiecewiseMatrix {
  std::vector<double> t;
  std::vector<Eigen::MatrixXcd> val;
  bool empty() const { return val.empty(); }
  const Eigen::MatrixXcd& at(double time) const;
};

struct MonitoredModel {
  Mat4 H = Mat4::Zero();
  std::vector<std::string> labels;
  std::vector<Mat4> L;
  // S[z][w]; empty means identity (S_zw = delta_zw 1).
  std::vector<std::vector<Mat4>> S;
  PiecewisePath v;    // empty means v = 0
  PiecewiseMatrix u;  // empty means u = 1
  int n_diffusive = 0;
  int n_counting = 0;
  std::vector<double> rates;  // lambda_k, one per counting channel

  int n_channels() const { return n_diffusive + n_counting; }
  bool s_is_identity() const { return S.empty(); }
  // Union of u/v segment starts (always contains 0), sorted.
  std::vector<double> breakpoints() const;
  // Throws std::invalid_argument with a specific message per violated rule.
  void validate() const;

  Eigen::VectorXcd v_at(double t) const;
  Eigen::MatrixXcd u_at(double t) const;
};

// R_j(t) = sum_z u_jz(t) (L_z + sum_w S_zw v_w(t)), J_k = R_{d+k},
// H_0(t) = H + (i/2) sum_zw (conj(v_z) S_wz^dag L_w - L_w^dag S_wz v_z),
// K(t) = -i H_0(t) - 1/2 sum_{all j} R_j(t)^dag R_j(t).
struct DerivedOperators {
  std::vector<Mat4> R;  // diffusive, size d
  std::vector<Mat4> J;  // counting, size d'
  Mat4 K;
  Mat4 H0;
};

DerivedOperators detection_operators(const MonitoredModel& m, double t);

// Master-equation generator: -i[H(t), tau] + sum_z (Lt_z tau Lt_z^dag
// - 1/2 {Lt_z^dag Lt_z, tau}) with Lt_z = L_z + sum_w (S_zw - delta_zw) v_w
// and H(t) the v/S-shifted Hamiltonian.
Mat4 apply_liouvillian(const MonitoredModel& m, const Mat4& tau, double t);

enum class Interaction { direct, indirect_only, none };
const char* to_string(Interaction c);

struct UnsupportedClassification : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Splits H and the channel set into local / sum-of-local / coupling parts
// (Hilbert-Schmidt projection, residual tolerance 1e-10).
// "none": H is a sum of locals and the channels partition between the qubits.
// "indirect_only": H a sum of locals, every L_z a sum of locals, no partition.
// "direct": anything else. Only defined for S = identity; otherwise throws
// UnsupportedClassification.
Interaction classify_interaction(const MonitoredModel& m);

struct PauliDecomposition {
  std::array<complexd, 3> h;  // sigma_x, sigma_y, sigma_z coefficients
  complexd r;                 // identity coefficient
};

// a = sum_i h_i sigma_i + r 1, h_i = Tr(sigma_i a)/2, r = Tr(a)/2.
PauliDecomposition pauli_decompose(const Mat2& a);

// Jump channel sigma -> sum_i K_i sigma K_i^dag with reference rate lambda.
struct JumpChannel {
  std::vector<Mat4> kraus;
  double rate = 1.0;
  Mat4 apply(const Mat4& sigma) const;
  Mat4 effect() const;  // sum_i K_i^dag K_i
};

// Locality analysis in the Pauli product basis.
bool is_local_sum(const Mat4& m, double tol = 1e-10);
// m = A (x) 1 + 1 (x) B with the identity component absorbed into A;
// nullopt when the coupling residual exceeds tol.
std::optional<std::pair<Mat2, Mat2>> split_local_sum(const Mat4& m,
                                                     double tol = 1e-10);
// 0: not local on a single side; 1, 2: local on that qubit; 3: scalar.
int local_side(const Mat4& m, double tol = 1e-10);

// Per-channel ingredients of the mean-concurrence decay rate under local
// detection: ell_j = Tr R_j^0, rotated Pauli components h~_ji of R_j^0,
// determinants d_k of the counting operators, and the per-channel
// contributions c_j. Requires S = 1 and every R_j(t) local on one qubit.
struct LocalCoefficients {
  std::vector<complexd> ell;                    // all channels
  std::vector<std::array<complexd, 3>> h_rot;   // all channels
  std::vector<int> side;                        // 1 or 2 per channel
  std::vector<complexd> d;                      // counting channels
  std::vector<double> c;                        // all channels
  double c_total = 0.0;
};

LocalCoefficients local_coefficients(const MonitoredModel& m, double t);

}  // namespace qmon
