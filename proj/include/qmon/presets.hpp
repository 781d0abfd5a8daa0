#pragma once

// Ready-made monitored models: independent sigma_x noise on both qubits read
// out by homodyne or counting detectors (with adjustable local oscillator
// phases or a collective mixing unitary), single-qubit decay/excitation
// unravelings sharing one dissipator, and the random Bell-swap model whose
// counts collapse the pair onto Bell states.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qmon/engine.hpp"
#include "qmon/model.hpp"

namespace qmon {

struct Preset {
  std::string id;
  std::map<std::string, double> params;  // resolved parameter values
  // Either a monitored model or an explicit channel list with its Liouvillian.
  std::optional<MonitoredModel> model;
  std::vector<JumpChannel> channels;
  LiouvilleFn liouville;
  std::vector<std::string> oracles;  // bound benchmark-curve ids
  std::string interaction;           // qubit-qubit interaction classification
  SimModel compile() const;
};

// Homodyne monitoring of independent sigma_x noise: L_1 = sqrt(g/2) sx x 1,
// L_2 = 1 x sqrt(g/2) sx, H = (omega0/2)(sz x 1 + 1 x sz), detector phases
// u = diag(e^{i phi1}, e^{i phi2}); two diffusive outputs. Mean concurrence
// decays at rate c = g (cos^2 phi1 + cos^2 phi2).
Preset preset_local_diffusive(double gamma, double omega0, double phi1,
                              double phi2);

// Same model read out by two counting detectors (J_k = R_k, reference rates
// gamma/2). The jump operators are proportional to local unitaries, so the
// a posteriori concurrence is constant along every path.
Preset preset_local_jump(double gamma, double omega0, double phi1,
                         double phi2);

// Same environment coupling with a collective detector mixing unitary
// u = (1/sqrt 2) [[e^{i(theta+phi)}, e^{i(theta-phi)}],
//                 [i e^{i(theta+phi)}, -i e^{i(theta-phi)}]];
// the detection operators act on both qubits although the master equation is
// unchanged. At omega0 = 0, chi of the unnormalized state is deterministic.
Preset preset_nonlocal_diffusive(double gamma, double omega0, double theta,
                                 double phi);

// Random Bell-swap model: Liouvillian L(eta) = nu (Tr eta / 4) 1 - nu eta;
// four counting channels x' = 0..3 with Kraus families
// {sqrt(nu/4) |beta_x'><u_i|, i = 1..4} and reference rate lambda/4. Each
// count replaces the state by the Bell projector |beta_x'><beta_x'|.
Preset preset_swap_witness(double nu, double lambda);

// Refinement of the swap model resolving the pre-swap Bell component: sixteen
// single-Kraus channels (x, x') with K = sqrt(nu/4) |beta_x'><beta_x| and
// reference rate lambda/16. Coarse-graining the marks over x reproduces the
// four-channel statistics.
Preset preset_swap_witness_refined(double nu, double lambda);

// One monitored qubit (side = 1 or 2) with decay rate g_minus = delta +
// g_plus and excitation rate g_plus, unraveled by one of three counting
// schemes that share the same dissipator:
//   1: J = {sqrt(g_minus) s-, sqrt(g_plus) s+}   (c contribution g_plus + delta/2)
//   2: J = {sqrt(g_plus/2) sx, sqrt(g_plus/2) sy, sqrt(delta) s-}  (delta/2)
//   3: J = {(s+ sqrt(g_plus) pm s- sqrt(g_minus))/sqrt 2}  ((sqrt g_minus - sqrt g_plus)^2 / 2)
// Channels with a vanishing operator (g_plus = 0) are dropped.
Preset preset_gammadelta(double gamma_plus, double delta, int variant,
                         int side);

// Registry: stable ids and default parameters, used by the CLI config.
std::vector<std::string> preset_ids();
std::map<std::string, double> preset_defaults(const std::string& id);
// Builds a preset by id; entries of params override the defaults. Unknown ids
// or parameter names throw std::invalid_argument.
Preset make_preset(const std::string& id,
                   const std::map<std::string, double>& params = {});

}  // namespace qmon
