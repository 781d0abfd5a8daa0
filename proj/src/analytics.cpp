#include "qmon/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "qmon/entanglement.hpp"

namespace qmon {

namespace {

constexpr double kEventTol = 1e-12;

// Unclamped X-state concurrence 2 max(|r23| - sqrt(r11 r44), |r14| - sqrt(r22 r33))
// of a normalized X state; negative inside the separable region.
double x_concurrence_raw(const Mat4& r) {
  double c1 = std::abs(r(1, 2)) -
              std::sqrt(std::max(0.0, r(0, 0).real() * r(3, 3).real()));
  double c2 = std::abs(r(0, 3)) -
              std::sqrt(std::max(0.0, r(1, 1).real() * r(2, 2).real()));
  return 2.0 * std::max(c1, c2);
}

}  // namespace

std::vector<double> aposteriori_concurrence(const TrajectoryRecord& rec) {
  std::vector<double> out;
  const std::size_t n = rec.times.size();
  out.reserve(n);
  if (rec.pure()) {
    for (std::size_t i = 0; i < n && i < rec.psi.size(); ++i) {
      if (i < rec.weight.size() && rec.weight[i] <= 0.0) break;
      double nrm2 = rec.psi[i].squaredNorm();
      if (nrm2 <= 0.0) break;
      out.push_back(std::abs(chi(rec.psi[i])) / nrm2);
    }
  } else {
    for (std::size_t i = 0; i < n && i < rec.rho.size(); ++i) {
      if (i < rec.weight.size() && rec.weight[i] <= 0.0) break;
      if (rec.rho[i].trace().real() <= 0.0) break;
      out.push_back(concurrence_mixed(rec.rho[i]));
    }
  }
  return out;
}

OracleCurve oracle_mean_concurrence_local(const MonitoredModel& m, double c0) {
  m.validate();
  std::vector<double> bps = m.breakpoints();
  std::vector<double> rate(bps.size());
  for (std::size_t i = 0; i < bps.size(); ++i)
    rate[i] = local_coefficients(m, bps[i]).c_total;
  std::vector<double> cum(bps.size(), 0.0);
  for (std::size_t i = 1; i < bps.size(); ++i)
    cum[i] = cum[i - 1] + rate[i - 1] * (bps[i] - bps[i - 1]);
  OracleCurve curve;
  curve.id = "mean_concurrence_local";
  curve.value = [c0, bps = std::move(bps), rate = std::move(rate),
                 cum = std::move(cum)](double t) {
    if (t <= 0.0) return c0;
    std::size_t i = bps.size() - 1;
    while (i > 0 && bps[i] > t) --i;
    return c0 * std::exp(-(cum[i] + rate[i] * (t - bps[i])));
  };
  return curve;
}

complexd oracle_nonlocal_chi(double gamma, double theta, complexd chi0,
                             complexd d0, double t) {
  // chi' = -g chi + g e^{2it} D and D' = g e^{2it} chi - g D close on the
  // combinations chi +- D: (chi + D) decays at g_- = g(1 - e^{2it}) and
  // (chi - D) at g_+ = g(1 + e^{2it}).
  complexd phase = std::exp(complexd(0.0, 2.0 * theta));
  complexd gp = gamma * (1.0 + phase);
  complexd gm = gamma * (1.0 - phase);
  return 0.5 * std::exp(-gm * t) * (chi0 + d0) +
         0.5 * std::exp(-gp * t) * (chi0 - d0);
}

double oracle_swap_mean_concurrence(double nu, double c0, double t) {
  if (nu <= 0.0) throw std::invalid_argument("swap rate nu must be positive");
  return 1.0 - (1.0 - c0) * std::exp(-nu * t);
}

double apriori_concurrence_sigmax(double gamma, double t) {
  double e = std::exp(-gamma * t);
  return 0.5 * (1.0 + e) * (1.0 + e) - 1.0;
}

Mat4 apriori_state_swap(const Mat4& rho0, double nu, double t) {
  double e = std::exp(-nu * t);
  return e * rho0 +
         (1.0 - e) * (rho0.trace().real() / 4.0) * Mat4::Identity();
}

std::optional<double> oracle_esd_times(
    const std::string& preset_id, const std::map<std::string, double>& params,
    const Mat4& rho0) {
  validate_density(rho0, true);
  auto param = [&params](const char* name) {
    auto it = params.find(name);
    if (it == params.end())
      throw std::invalid_argument(std::string("missing parameter '") + name +
                                  "' for the disentanglement-time oracle");
    return it->second;
  };
  if (preset_id == "local_diffusive" || preset_id == "local_jump" ||
      preset_id == "nonlocal_diffusive") {
    double gamma = param("gamma");
    if (gamma <= 0.0)
      throw std::invalid_argument("gamma must be positive");
    auto it = params.find("omega0");
    if (it != params.end() && it->second != 0.0)
      throw std::invalid_argument(
          "closed-form disentanglement time needs omega0 = 0");
    if (concurrence_mixed(rho0) == 0.0) return std::nullopt;
    Vec4 death;  // (|10> + i|01>)/sqrt(2) in the |11>,|10>,|01>,|00> basis
    death << 0.0, 1.0 / std::sqrt(2.0), complexd(0.0, 1.0 / std::sqrt(2.0)),
        0.0;
    if (trace_distance(rho0, dyad(death)) > 1e-10)
      throw std::invalid_argument(
          "no closed-form disentanglement time for this initial state under "
          "local sigma_x noise");
    return std::log(1.0 + std::sqrt(2.0)) / gamma;
  }
  if (preset_id == "swap_witness") {
    double nu = param("nu");
    if (nu <= 0.0) throw std::invalid_argument("nu must be positive");
    if (concurrence_mixed(rho0) == 0.0) return std::nullopt;
    if (!is_x_state(rho0))
      throw std::invalid_argument(
          "disentanglement time is supported only for X-state initial "
          "conditions of the swap model");
    auto f = [&rho0, nu](double t) {
      return x_concurrence_raw(apriori_state_swap(rho0, nu, t));
    };
    double lo = 0.0, hi = 1.0 / nu;
    int guard = 0;
    while (f(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (++guard > 60) return std::nullopt;
    }
    while (hi - lo > 1e-10) {
      double mid = 0.5 * (lo + hi);
      (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
  throw std::invalid_argument("no closed-form disentanglement time for '" +
                              preset_id + "'");
}

std::optional<double> master_esd_time(const SimModel& m, const Mat4& rho0,
                                      double T, double dt) {
  std::vector<Mat4> etas = evolve_master(m, rho0, T, dt);
  if (etas.empty()) return std::nullopt;
  double raw0 = concurrence_mixed_raw(etas[0]);
  if (raw0 <= 0.0) return std::nullopt;
  std::size_t hit = 0;
  for (std::size_t i = 1; i < etas.size(); ++i) {
    if (concurrence_mixed_raw(etas[i]) <= 0.0) {
      hit = i;
      break;
    }
  }
  if (hit == 0) return std::nullopt;
  double t_lo = std::min(static_cast<double>(hit - 1) * dt, T);
  double t_hi = std::min(static_cast<double>(hit) * dt, T);
  const Mat4& base = etas[hit - 1];
  double lo = 0.0, hi = t_hi - t_lo;
  auto raw_at = [&](double tau) {
    if (tau <= 0.0) return concurrence_mixed_raw(base);
    int n_sub = std::max(1, static_cast<int>(std::ceil(tau / dt)));
    return concurrence_mixed_raw(master_advance(m, base, t_lo, tau, n_sub));
  };
  while (hi - lo > 1e-10) {
    double mid = 0.5 * (lo + hi);
    (raw_at(mid) > 0.0 ? lo : hi) = mid;
  }
  return t_lo + 0.5 * (lo + hi);
}

std::vector<double> aposteriori_concurrence_reconstruction(
    const TrajectoryRecord& rec, const MonitoredModel& m) {
  if (!rec.pure())
    throw std::invalid_argument(
        "concurrence reconstruction needs a pure-state record");
  if (rec.times.size() < 1 || rec.psi.size() != rec.times.size())
    throw std::invalid_argument("record has no stored states");
  m.validate();
  const int d = m.n_diffusive;
  const int dp = m.n_counting;
  if (d > 0 && static_cast<int>(rec.dW.size()) != d)
    throw std::invalid_argument("record has no stored noise path");

  Vec4 psi0 = rec.psi[0];
  double n0 = psi0.norm();
  if (n0 <= 0.0)
    throw std::invalid_argument("record starts from the zero vector");
  psi0 /= n0;
  double c0 = std::abs(chi(psi0));
  std::vector<double> out{c0};
  out.reserve(rec.times.size());

  double lg = 0.0;
  bool dead = (c0 == 0.0);
  std::size_t ci = 0;
  for (std::size_t i = 0; i + 1 < rec.times.size(); ++i) {
    double t = rec.times[i];
    double h = rec.times[i + 1] - t;
    double t_next = rec.times[i + 1];
    if (!dead) {
      LocalCoefficients lc = local_coefficients(m, t);
      DerivedOperators ops = detection_operators(m, t);
      Vec4 psi = rec.psi[i];
      double nn = psi.norm();
      if (nn <= 0.0) {
        dead = true;
      } else {
        psi /= nn;
        for (int j = 0; j < d; ++j) {
          double mj = 2.0 * std::real(psi.dot(ops.R[j] * psi));
          double nj = std::real(lc.ell[j]) - mj;
          double dwhat = rec.dW[j][i] - mj * h;
          lg += nj * dwhat - (lc.c[j] + 0.5 * nj * nj) * h;
        }
        for (int k = 0; k < dp; ++k) {
          double mu = (ops.J[k] * psi).squaredNorm();
          lg -= (lc.c[d + k] + std::abs(lc.d[k]) - mu) * h;
        }
        while (ci < rec.counts.size() &&
               rec.counts[ci].t <= t_next + kEventTol) {
          int k = rec.counts[ci].channel;
          if (k < 0 || k >= dp)
            throw std::invalid_argument("count channel out of range");
          double adk = std::abs(lc.d[k]);
          double mu = (ops.J[k] * psi).squaredNorm();
          if (adk == 0.0 || mu <= 0.0)
            dead = true;
          else
            lg += std::log(adk / mu);
          ++ci;
        }
      }
    } else {
      while (ci < rec.counts.size() && rec.counts[ci].t <= t_next + kEventTol)
        ++ci;
    }
    out.push_back(dead ? 0.0 : c0 * std::exp(lg));
  }
  return out;
}

complexd bilinear_zz(const Vec4& phi) {
  // sz x sz = diag(1, -1, -1, 1) in the |11>,|10>,|01>,|00> basis
  return phi(0) * phi(0) - phi(1) * phi(1) - phi(2) * phi(2) +
         phi(3) * phi(3);
}

complexd bilinear_z_total(const Vec4& phi) {
  // sz x 1 + 1 x sz = diag(2, 0, 0, -2)
  return 2.0 * (phi(0) * phi(0) - phi(3) * phi(3));
}

double nonlocal_chi_residual(const TrajectoryRecord& rec, double gamma,
                             double theta, double omega0) {
  if (!rec.pure())
    throw std::invalid_argument("chi residual needs a pure-state record");
  if (rec.psi.size() != rec.times.size() || rec.times.empty())
    throw std::invalid_argument("record has no stored states");
  complexd phase = std::exp(complexd(0.0, 2.0 * theta));
  complexd gp = gamma * (1.0 + phase);
  complexd gm = gamma * (1.0 - phase);
  complexd chi0 = chi(rec.psi[0]);
  complexd d0 = bilinear_zz(rec.psi[0]);
  const complexd iw(0.0, omega0);

  double res = 0.0;
  complexd ip = 0.0, im = 0.0;  // int_0^t e^{g_pm s} E(s) ds
  complexd e_prev = bilinear_z_total(rec.psi[0]);
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    double t = rec.times[i];
    complexd e_here = bilinear_z_total(rec.psi[i]);
    if (i > 0) {
      double h = t - rec.times[i - 1];
      double tp = rec.times[i - 1];
      ip += 0.5 * h *
            (std::exp(gp * tp) * e_prev + std::exp(gp * t) * e_here);
      im += 0.5 * h *
            (std::exp(gm * tp) * e_prev + std::exp(gm * t) * e_here);
    }
    complexd chit = chi(rec.psi[i]);
    complexd dt_ = bilinear_zz(rec.psi[i]);
    // (chi + D)' = -g_-(chi + D) - i w0 E, (chi - D)' = -g_+(chi - D) + i w0 E
    complexd pred_p = std::exp(-gm * t) * ((chi0 + d0) - iw * im);
    complexd pred_m = std::exp(-gp * t) * ((chi0 - d0) + iw * ip);
    res = std::max(res, std::abs(chit + dt_ - pred_p));
    res = std::max(res, std::abs(chit - dt_ - pred_m));
    e_prev = e_here;
  }
  return res;
}

}  // namespace qmon
