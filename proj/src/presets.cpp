#include "qmon/presets.hpp"

#include <cmath>
#include <stdexcept>

namespace qmon {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0))
    throw std::invalid_argument(std::string(name) + " must be positive");
}

// H and L of the independent sigma_x noise model.
MonitoredModel sigmax_base(double gamma, double omega0) {
  require_positive(gamma, "gamma");
  MonitoredModel m;
  double s = std::sqrt(gamma / 2.0);
  m.H = 0.5 * omega0 * (tensor(pauli(3), id2()) + tensor(id2(), pauli(3)));
  m.L = {s * tensor(pauli(1), id2()), s * tensor(id2(), pauli(1))};
  m.labels = {"q1", "q2"};
  return m;
}

Eigen::MatrixXcd phase_diag(double phi1, double phi2) {
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(2, 2);
  u(0, 0) = std::exp(complexd(0.0, phi1));
  u(1, 1) = std::exp(complexd(0.0, phi2));
  return u;
}

}  // namespace

SimModel Preset::compile() const {
  if (model) return SimModel::compile(*model);
  if (channels.empty() || !liouville)
    throw std::invalid_argument("preset '" + id +
                                "' has neither a model nor channels");
  return SimModel::from_channels(channels, liouville);
}

Preset preset_local_diffusive(double gamma, double omega0, double phi1,
                              double phi2) {
  Preset p;
  p.id = "local_diffusive";
  p.params = {{"gamma", gamma}, {"omega0", omega0}, {"phi1", phi1},
              {"phi2", phi2}};
  MonitoredModel m = sigmax_base(gamma, omega0);
  m.n_diffusive = 2;
  m.u.t = {0.0};
  m.u.val = {phase_diag(phi1, phi2)};
  m.validate();
  p.model = std::move(m);
  p.oracles = {"mean_concurrence_local"};
  p.interaction = "none";
  return p;
}

Preset preset_local_jump(double gamma, double omega0, double phi1,
                         double phi2) {
  Preset p;
  p.id = "local_jump";
  p.params = {{"gamma", gamma}, {"omega0", omega0}, {"phi1", phi1},
              {"phi2", phi2}};
  MonitoredModel m = sigmax_base(gamma, omega0);
  m.n_counting = 2;
  // Reference rates equal to the constant physical intensity ||J psi||^2 =
  // gamma/2, so the reference-measure likelihood weight is identically 1.
  m.rates = {gamma / 2.0, gamma / 2.0};
  m.u.t = {0.0};
  m.u.val = {phase_diag(phi1, phi2)};
  m.validate();
  p.model = std::move(m);
  p.oracles = {"mean_concurrence_local"};
  p.interaction = "none";
  return p;
}

Preset preset_nonlocal_diffusive(double gamma, double omega0, double theta,
                                 double phi) {
  Preset p;
  p.id = "nonlocal_diffusive";
  p.params = {{"gamma", gamma}, {"omega0", omega0}, {"theta", theta},
              {"phi", phi}};
  MonitoredModel m = sigmax_base(gamma, omega0);
  m.n_diffusive = 2;
  const double r = 1.0 / std::sqrt(2.0);
  const complexd i1(0.0, 1.0);
  Eigen::MatrixXcd u(2, 2);
  u(0, 0) = r * std::exp(i1 * (theta + phi));
  u(0, 1) = r * std::exp(i1 * (theta - phi));
  u(1, 0) = i1 * r * std::exp(i1 * (theta + phi));
  u(1, 1) = -i1 * r * std::exp(i1 * (theta - phi));
  m.u.t = {0.0};
  m.u.val = {u};
  m.validate();
  p.model = std::move(m);
  if (omega0 == 0.0) p.oracles = {"nonlocal_chi"};
  p.interaction = "none";
  return p;
}

Preset preset_swap_witness(double nu, double lambda) {
  require_positive(nu, "nu");
  require_positive(lambda, "lambda");
  Preset p;
  p.id = "swap_witness";
  p.params = {{"nu", nu}, {"lambda", lambda}};
  const auto& bell = bell_basis();
  double amp = std::sqrt(nu / 4.0);
  for (int xp = 0; xp < 4; ++xp) {
    JumpChannel ch;
    ch.rate = lambda / 4.0;
    for (int i = 0; i < 4; ++i) {
      Mat4 k = Mat4::Zero();
      k.col(i) = amp * bell[xp];  // sqrt(nu/4) |beta_xp><u_i|
      ch.kraus.push_back(k);
    }
    p.channels.push_back(std::move(ch));
  }
  p.liouville = [nu](const Mat4& eta, double) {
    return Mat4((nu * eta.trace() / 4.0) * Mat4::Identity() - nu * eta);
  };
  p.oracles = {"swap_mean_concurrence", "swap_apriori_concurrence"};
  p.interaction = "direct";
  return p;
}

Preset preset_swap_witness_refined(double nu, double lambda) {
  require_positive(nu, "nu");
  require_positive(lambda, "lambda");
  Preset p;
  p.id = "swap_witness_refined";
  p.params = {{"nu", nu}, {"lambda", lambda}};
  const auto& bell = bell_basis();
  double amp = std::sqrt(nu / 4.0);
  for (int x = 0; x < 4; ++x) {
    for (int xp = 0; xp < 4; ++xp) {
      JumpChannel ch;
      ch.rate = lambda / 16.0;
      ch.kraus.push_back(amp * bell[xp] * bell[x].adjoint());
      p.channels.push_back(std::move(ch));
    }
  }
  p.liouville = [nu](const Mat4& eta, double) {
    return Mat4((nu * eta.trace() / 4.0) * Mat4::Identity() - nu * eta);
  };
  p.oracles = {"swap_mean_concurrence", "swap_apriori_concurrence"};
  p.interaction = "direct";
  return p;
}

Preset preset_gammadelta(double gamma_plus, double delta, int variant,
                         int side) {
  if (gamma_plus < 0.0)
    throw std::invalid_argument("gamma_plus must be nonnegative");
  require_positive(delta, "delta");
  if (variant < 1 || variant > 3)
    throw std::invalid_argument("variant must be 1, 2 or 3");
  if (side != 1 && side != 2)
    throw std::invalid_argument("side must be 1 or 2");
  double gamma_minus = delta + gamma_plus;

  std::vector<Mat2> ops;
  switch (variant) {
    case 1:
      ops = {std::sqrt(gamma_minus) * sigma_minus(),
             std::sqrt(gamma_plus) * sigma_plus()};
      break;
    case 2:
      // sqrt(g+/2) on sx, sy reproduces 2 g+ (D[s+] + D[s-]) from their
      // cross terms; sqrt(g+) would double the dissipator.
      ops = {std::sqrt(gamma_plus / 2.0) * Mat2(pauli(1)),
             std::sqrt(gamma_plus / 2.0) * Mat2(pauli(2)),
             std::sqrt(delta) * sigma_minus()};
      break;
    case 3: {
      double r = 1.0 / std::sqrt(2.0);
      ops = {r * (std::sqrt(gamma_plus) * sigma_plus() +
                  std::sqrt(gamma_minus) * sigma_minus()),
             r * (std::sqrt(gamma_plus) * sigma_plus() -
                  std::sqrt(gamma_minus) * sigma_minus())};
      break;
    }
  }

  MonitoredModel m;
  m.H = Mat4::Zero();
  for (const Mat2& a : ops) {
    double w = a.squaredNorm();  // Tr a^dag a
    if (w < 1e-14) continue;     // vanishing operator (gamma_plus = 0)
    m.L.push_back(side == 1 ? tensor(a, id2()) : tensor(id2(), a));
    m.rates.push_back(w / 2.0);
    m.labels.push_back("count_" + std::to_string(m.L.size()));
  }
  m.n_counting = static_cast<int>(m.L.size());
  m.validate();

  Preset p;
  p.id = "gammadelta";
  p.params = {{"gamma_plus", gamma_plus},
              {"delta", delta},
              {"variant", static_cast<double>(variant)},
              {"side", static_cast<double>(side)}};
  p.model = std::move(m);
  p.oracles = {"mean_concurrence_local"};
  p.interaction = "none";
  return p;
}

std::vector<std::string> preset_ids() {
  return {"local_diffusive", "local_jump", "nonlocal_diffusive",
          "swap_witness", "swap_witness_refined", "gammadelta"};
}

std::map<std::string, double> preset_defaults(const std::string& id) {
  if (id == "local_diffusive" || id == "local_jump")
    return {{"gamma", 1.0}, {"omega0", 0.0}, {"phi1", 0.0}, {"phi2", 0.0}};
  if (id == "nonlocal_diffusive")
    return {{"gamma", 1.0}, {"omega0", 0.0}, {"theta", 0.0}, {"phi", 0.0}};
  if (id == "swap_witness" || id == "swap_witness_refined")
    return {{"nu", 1.0}};  // lambda defaults to the resolved nu
  if (id == "gammadelta")
    return {{"gamma_plus", 0.5}, {"delta", 1.0}, {"variant", 1.0},
            {"side", 1.0}};
  throw std::invalid_argument("unknown preset '" + id + "'");
}

Preset make_preset(const std::string& id,
                   const std::map<std::string, double>& params) {
  std::map<std::string, double> v = preset_defaults(id);
  bool swap_like = (id == "swap_witness" || id == "swap_witness_refined");
  for (const auto& [name, value] : params) {
    if (swap_like && name == "lambda") continue;  // resolved below
    if (v.find(name) == v.end())
      throw std::invalid_argument("preset '" + id +
                                  "' has no parameter '" + name + "'");
    v[name] = value;
  }
  if (swap_like) {
    auto it = params.find("lambda");
    v["lambda"] = it != params.end() ? it->second : v["nu"];
  }
  if (id == "local_diffusive")
    return preset_local_diffusive(v["gamma"], v["omega0"], v["phi1"],
                                  v["phi2"]);
  if (id == "local_jump")
    return preset_local_jump(v["gamma"], v["omega0"], v["phi1"], v["phi2"]);
  if (id == "nonlocal_diffusive")
    return preset_nonlocal_diffusive(v["gamma"], v["omega0"], v["theta"],
                                     v["phi"]);
  if (id == "swap_witness") return preset_swap_witness(v["nu"], v["lambda"]);
  if (id == "swap_witness_refined")
    return preset_swap_witness_refined(v["nu"], v["lambda"]);
  if (id == "gammadelta")
    return preset_gammadelta(v["gamma_plus"], v["delta"],
                             static_cast<int>(v["variant"]),
                             static_cast<int>(v["side"]));
  throw std::invalid_argument("unknown preset '" + id + "'");
}

}  // namespace qmon
