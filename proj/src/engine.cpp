#include "qmon/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <thread>

#include <unsupported/Eigen/MatrixFunctions>

#include "qmon/entanglement.hpp"

namespace qmon {

namespace {

constexpr double kWeightFloor = 1e-300;
constexpr double kTimeTol = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_stream(std::uint64_t root, std::uint64_t index) {
  std::uint64_t s = root;
  std::uint64_t mixed = splitmix64(s);
  s = mixed ^ (index * 0xda942042e4dd58b5ULL);
  return splitmix64(s);
}

Mat2 exp2(const Mat2& m) {
  complexd mu = 0.5 * m.trace();
  Mat2 a = m - mu * Mat2::Identity();
  // a is traceless, so a^2 = r^2 * I with r^2 = a00^2 + a01*a10.
  complexd r2 = a(0, 0) * a(0, 0) + a(0, 1) * a(1, 0);
  complexd r = std::sqrt(r2);
  complexd ch, shc;
  if (std::abs(r) < 1e-6) {
    ch = 1.0 + r2 * (0.5 + r2 / 24.0);
    shc = 1.0 + r2 * (1.0 / 6.0 + r2 / 120.0);
  } else {
    ch = std::cosh(r);
    shc = std::sinh(r) / r;
  }
  return std::exp(mu) * (ch * Mat2::Identity() + shc * a);
}

int TrajectoryRecord::counts_before(int channel, double t) const {
  int n = 0;
  for (const auto& c : counts)
    if (c.channel == channel && c.t <= t + kTimeTol) ++n;
  return n;
}

SimModel SimModel::compile(const MonitoredModel& m) {
  m.validate();
  SimModel out;
  out.n_diffusive = m.n_diffusive;
  out.n_counting = m.n_counting;
  out.source = m;
  for (double t0 : m.breakpoints()) {
    Segment s;
    s.t0 = t0;
    DerivedOperators ops = detection_operators(m, t0);
    s.R = ops.R;
    s.K = ops.K;
    for (int k = 0; k < m.n_counting; ++k) {
      JumpChannel ch;
      ch.kraus = {ops.J[k]};
      ch.rate = m.rates[k];
      s.channel_effect.push_back(ch.effect());
      s.rate_sum += ch.rate;
      s.channels.push_back(std::move(ch));
    }
    out.segments.push_back(std::move(s));
  }
  MonitoredModel copy = m;
  out.liouville = [copy](const Mat4& sigma, double t) {
    return apply_liouvillian(copy, sigma, t);
  };
  out.operator_channels = true;
  return out;
}

SimModel SimModel::from_channels(std::vector<JumpChannel> channels,
                                 LiouvilleFn liou) {
  SimModel out;
  Segment s;
  s.t0 = 0.0;
  out.n_counting = static_cast<int>(channels.size());
  Mat4 effect_sum = Mat4::Zero();
  for (const auto& ch : channels) {
    if (ch.rate <= 0) throw std::invalid_argument("channel rate must be > 0");
    if (ch.kraus.empty())
      throw std::invalid_argument("channel needs at least one Kraus operator");
    Mat4 eff = ch.effect();
    s.channel_effect.push_back(eff);
    effect_sum += eff;
    s.rate_sum += ch.rate;
    out.operator_channels = out.operator_channels && ch.kraus.size() == 1;
  }
  s.K = -0.5 * effect_sum;  // no Hamiltonian part
  s.channels = std::move(channels);
  out.segments.push_back(std::move(s));
  out.liouville = std::move(liou);
  return out;
}

const SimModel::Segment& SimModel::at(double t) const {
  std::size_t i = segments.size();
  while (i > 1 && segments[i - 1].t0 > t + kTimeTol) --i;
  return segments[i - 1];
}

double SimModel::max_rate() const {
  double r = 0.0;
  for (const auto& s : segments)
    for (const auto& ch : s.channels) r = std::max(r, ch.rate);
  return r;
}

Vec4 step_linear_sse(const Vec4& phi, const DerivedOperators& ops,
                     const std::vector<double>& rates, double dt,
                     std::span<const double> dW, std::span<const int> dN) {
  if (dW.size() != ops.R.size() || dN.size() != ops.J.size() ||
      rates.size() != ops.J.size())
    throw std::invalid_argument("step_linear_sse: increment sizes mismatch");
  Vec4 out = phi + ops.K * phi * dt;
  for (std::size_t j = 0; j < ops.R.size(); ++j)
    out += ops.R[j] * phi * dW[j];
  for (std::size_t k = 0; k < ops.J.size(); ++k) {
    out += 0.5 * rates[k] * phi * dt;
    if (dN[k]) out += ops.J[k] * phi / std::sqrt(rates[k]) - phi;
  }
  return out;
}

Mat4 step_linear_sme(const Mat4& sigma,
                     const std::function<Mat4(const Mat4&)>& liou,
                     const std::vector<Mat4>& R,
                     const std::vector<JumpChannel>& channels, double dt,
                     std::span<const double> dW, std::span<const int> dN) {
  if (dW.size() != R.size() || dN.size() != channels.size())
    throw std::invalid_argument("step_linear_sme: increment sizes mismatch");
  Mat4 out = sigma + liou(sigma) * dt;
  for (std::size_t j = 0; j < R.size(); ++j)
    out += (R[j] * sigma + sigma * R[j].adjoint()) * dW[j];
  for (std::size_t k = 0; k < channels.size(); ++k) {
    double lam = channels[k].rate;
    Mat4 diff = channels[k].apply(sigma) / lam - sigma;
    out += diff * (static_cast<double>(dN[k]) - lam * dt);
  }
  return out;
}

namespace {

struct PathObserver {
  virtual ~PathObserver() = default;
  virtual void sample(int idx, const Vec4* psi, const Mat4* rho, double w,
                      const std::vector<int>& counts) = 0;
};

struct Stepper {
  const SimModel* model;
  const SimModel::Segment* seg = nullptr;
  Measure meas;
  Scheme scheme;
  double dt;

  Stepper(const SimModel& m, Measure me, Scheme sc, double dt_)
      : model(&m), meas(me), scheme(sc), dt(dt_) {}
  virtual ~Stepper() = default;
  virtual void set_segment(const SimModel::Segment& s) = 0;
  // Continuous update over tau with final output increments dW (already
  // including any P-mode drift shift). full means tau equals the grid dt.
  virtual void advance(double tau, bool full, const double* dW) = 0;
  // Whole-step Euler-Maruyama update; Q includes the jump indicator terms,
  // P is the lambda-free physical drift (jumps applied separately).
  virtual void em_step(double t, double h, const double* dW,
                       const int* dN) = 0;
  virtual void jump(int k) = 0;
  virtual double weight() const = 0;
  virtual void normalize() = 0;
  virtual void drift_coeffs(double* mj) const = 0;  // 2 Re <R_j>
  virtual void intensities(double* mu) const = 0;   // Tr(effect_k sigma)
  virtual void kill() = 0;
  virtual void emit(int idx, double w, const std::vector<int>& counts,
                    TrajectoryRecord* rec, bool states, PathObserver* obs) = 0;
};

struct PureStepper final : Stepper {
  Vec4 phi;
  Mat4 D = Mat4::Zero();
  Mat4 E_full = Mat4::Identity();
  bool local_noise = false;
  std::vector<Mat2> NA, NB;
  DerivedOperators ops;
  std::vector<double> rates;

  using Stepper::Stepper;

  void set_segment(const SimModel::Segment& s) override {
    seg = &s;
    D = s.K;
    for (const Mat4& r : s.R) D -= 0.5 * r * r;
    if (meas == Measure::Q) D += 0.5 * s.rate_sum * Mat4::Identity();
    if (scheme == Scheme::exponential) {
      E_full = Mat4(D * dt).exp();
      local_noise = true;
      NA.clear();
      NB.clear();
      for (const Mat4& r : s.R) {
        if (!is_local_sum(r)) {
          local_noise = false;
          break;
        }
        auto parts = split_local_sum(r);
        if (!parts) {
          local_noise = false;
          break;
        }
        NA.push_back(parts->first);
        NB.push_back(parts->second);
      }
    } else {
      ops.R = s.R;
      ops.K = s.K;
      ops.J.clear();
      rates.clear();
      for (const auto& ch : s.channels) {
        ops.J.push_back(ch.kraus[0]);
        rates.push_back(ch.rate);
      }
    }
  }

  void advance(double tau, bool full, const double* dW) override {
    phi = (full ? E_full : Mat4(Mat4(D * tau).exp())) * phi;
    std::size_t nd = seg->R.size();
    if (nd == 0) return;
    if (local_noise) {
      Mat2 a = Mat2::Zero(), b = Mat2::Zero();
      for (std::size_t j = 0; j < nd; ++j) {
        a += dW[j] * NA[j];
        b += dW[j] * NB[j];
      }
      phi = tensor(exp2(a), exp2(b)) * phi;
    } else {
      Mat4 N = Mat4::Zero();
      for (std::size_t j = 0; j < nd; ++j) N += dW[j] * seg->R[j];
      phi = Mat4(N.exp()) * phi;
    }
  }

  void em_step(double, double h, const double* dW, const int* dN) override {
    std::size_t nd = ops.R.size(), nc = ops.J.size();
    if (meas == Measure::Q) {
      phi = step_linear_sse(phi, ops, rates, h, {dW, nd}, {dN, nc});
    } else {
      Vec4 out = phi + ops.K * phi * h;
      for (std::size_t j = 0; j < nd; ++j) out += ops.R[j] * phi * dW[j];
      phi = out;
    }
  }

  void jump(int k) override {
    phi = seg->channels[k].kraus[0] * phi;
    if (meas == Measure::Q)
      phi /= std::sqrt(seg->channels[k].rate);
    else
      phi.normalize();
  }

  double weight() const override { return phi.squaredNorm(); }
  void normalize() override { phi.normalize(); }

  void drift_coeffs(double* mj) const override {
    for (std::size_t j = 0; j < seg->R.size(); ++j)
      mj[j] = 2.0 * phi.dot(seg->R[j] * phi).real();
  }

  void intensities(double* mu) const override {
    for (std::size_t k = 0; k < seg->channels.size(); ++k)
      mu[k] = (seg->channels[k].kraus[0] * phi).squaredNorm();
  }

  void kill() override { phi.setZero(); }

  void emit(int idx, double w, const std::vector<int>& counts,
            TrajectoryRecord* rec, bool states, PathObserver* obs) override {
    if (rec) {
      rec->weight.push_back(w);
      if (states) rec->psi.push_back(phi);
    }
    if (obs) obs->sample(idx, &phi, nullptr, w, counts);
  }
};

struct DensityStepper final : Stepper {
  Mat4 sigma = Mat4::Zero();
  Mat4 D = Mat4::Zero();
  Mat4 E_full = Mat4::Identity();
  bool local_noise = false;
  std::vector<Mat2> NA, NB;

  using Stepper::Stepper;

  void set_segment(const SimModel::Segment& s) override {
    seg = &s;
    D = s.K;
    for (const Mat4& r : s.R) D -= 0.5 * r * r;
    if (meas == Measure::Q) D += 0.5 * s.rate_sum * Mat4::Identity();
    if (scheme == Scheme::exponential) {
      E_full = Mat4(D * dt).exp();
      local_noise = true;
      NA.clear();
      NB.clear();
      for (const Mat4& r : s.R) {
        if (!is_local_sum(r)) {
          local_noise = false;
          break;
        }
        auto parts = split_local_sum(r);
        if (!parts) {
          local_noise = false;
          break;
        }
        NA.push_back(parts->first);
        NB.push_back(parts->second);
      }
    }
  }

  void advance(double tau, bool full, const double* dW) override {
    Mat4 P = full ? E_full : Mat4(Mat4(D * tau).exp());
    std::size_t nd = seg->R.size();
    if (nd > 0) {
      if (local_noise) {
        Mat2 a = Mat2::Zero(), b = Mat2::Zero();
        for (std::size_t j = 0; j < nd; ++j) {
          a += dW[j] * NA[j];
          b += dW[j] * NB[j];
        }
        P = tensor(exp2(a), exp2(b)) * P;
      } else {
        Mat4 N = Mat4::Zero();
        for (std::size_t j = 0; j < nd; ++j) N += dW[j] * seg->R[j];
        P = Mat4(N.exp()) * P;
      }
    }
    sigma = (P * sigma * P.adjoint()).eval();
    sigma = (0.5 * (sigma + sigma.adjoint())).eval();
  }

  void em_step(double t, double h, const double* dW, const int* dN) override {
    std::size_t nd = seg->R.size(), nc = seg->channels.size();
    if (meas == Measure::Q) {
      auto liou = [&](const Mat4& x) { return model->liouville(x, t); };
      sigma = step_linear_sme(sigma, liou, seg->R, seg->channels, h, {dW, nd},
                              {dN, nc});
    } else {
      Mat4 out = sigma + model->liouville(sigma, t) * h;
      for (std::size_t k = 0; k < nc; ++k)
        out -= seg->channels[k].apply(sigma) * h;
      for (std::size_t j = 0; j < nd; ++j)
        out += (seg->R[j] * sigma + sigma * seg->R[j].adjoint()) * dW[j];
      sigma = out;
    }
    sigma = (0.5 * (sigma + sigma.adjoint())).eval();
  }

  void jump(int k) override {
    Mat4 post = seg->channels[k].apply(sigma);
    if (meas == Measure::Q)
      sigma = post / seg->channels[k].rate;
    else
      sigma = post / post.trace().real();
  }

  double weight() const override { return sigma.trace().real(); }
  void normalize() override { sigma /= sigma.trace().real(); }

  void drift_coeffs(double* mj) const override {
    for (std::size_t j = 0; j < seg->R.size(); ++j)
      mj[j] = 2.0 * (seg->R[j] * sigma).trace().real();
  }

  void intensities(double* mu) const override {
    for (std::size_t k = 0; k < seg->channel_effect.size(); ++k)
      mu[k] = (seg->channel_effect[k] * sigma).trace().real();
  }

  void kill() override { sigma.setZero(); }

  void emit(int idx, double w, const std::vector<int>& counts,
            TrajectoryRecord* rec, bool states, PathObserver* obs) override {
    if (rec) {
      rec->weight.push_back(w);
      if (states) rec->rho.push_back(sigma);
    }
    if (obs) obs->sample(idx, nullptr, &sigma, w, counts);
  }
};

// Jump-only density path driven by the 16x16 superoperator exponential.
// Handles multi-Kraus channels; exact between jumps. A scalar generator
// (proportional to the identity superoperator) is applied as a plain factor.
struct SuperStepper final : Stepper {
  Mat4 sigma = Mat4::Zero();
  Superop G = Superop::Zero();
  Superop E_full = Superop::Identity();
  bool scalar = false;
  complexd g0 = 0.0;

  using Stepper::Stepper;

  void set_segment(const SimModel::Segment& s) override {
    seg = &s;
    for (int c = 0; c < 16; ++c) {
      Mat4 basis = Mat4::Zero();
      basis.data()[c] = 1.0;
      Mat4 img = model->liouville(basis, s.t0);
      for (const auto& ch : s.channels) img -= ch.apply(basis);
      G.col(c) = Eigen::Map<const Eigen::Matrix<complexd, 16, 1>>(img.data());
    }
    if (meas == Measure::Q) G += s.rate_sum * Superop::Identity();
    double scale = std::max(G.cwiseAbs().maxCoeff(), 1.0);
    scalar = true;
    g0 = G(0, 0);
    for (int i = 0; i < 16 && scalar; ++i)
      for (int j = 0; j < 16; ++j) {
        double dev = (i == j) ? std::abs(G(i, j) - g0) : std::abs(G(i, j));
        if (dev > 1e-13 * scale) {
          scalar = false;
          break;
        }
      }
    if (scheme == Scheme::exponential && !scalar)
      E_full = Superop(G * dt).exp();
  }

  void apply_super(const Superop& E) {
    Eigen::Map<Eigen::Matrix<complexd, 16, 1>> v(sigma.data());
    Eigen::Matrix<complexd, 16, 1> tmp = E * v;
    v = tmp;
  }

  void advance(double tau, bool full, const double*) override {
    if (scalar)
      sigma *= std::exp(g0 * tau);
    else
      apply_super(full ? E_full : Superop(Superop(G * tau).exp()));
    sigma = (0.5 * (sigma + sigma.adjoint())).eval();
  }

  void em_step(double t, double h, const double*, const int* dN) override {
    std::size_t nc = seg->channels.size();
    if (meas == Measure::Q) {
      auto liou = [&](const Mat4& x) { return model->liouville(x, t); };
      sigma = step_linear_sme(sigma, liou, {}, seg->channels, h, {}, {dN, nc});
    } else {
      Mat4 out = sigma + model->liouville(sigma, t) * h;
      for (std::size_t k = 0; k < nc; ++k)
        out -= seg->channels[k].apply(sigma) * h;
      sigma = out;
    }
    sigma = (0.5 * (sigma + sigma.adjoint())).eval();
  }

  void jump(int k) override {
    Mat4 post = seg->channels[k].apply(sigma);
    if (meas == Measure::Q)
      sigma = post / seg->channels[k].rate;
    else
      sigma = post / post.trace().real();
  }

  double weight() const override { return sigma.trace().real(); }
  void normalize() override { sigma /= sigma.trace().real(); }
  void drift_coeffs(double*) const override {}
  void intensities(double* mu) const override {
    for (std::size_t k = 0; k < seg->channel_effect.size(); ++k)
      mu[k] = (seg->channel_effect[k] * sigma).trace().real();
  }
  void kill() override { sigma.setZero(); }

  void emit(int idx, double w, const std::vector<int>& counts,
            TrajectoryRecord* rec, bool states, PathObserver* obs) override {
    if (rec) {
      rec->weight.push_back(w);
      if (states) rec->rho.push_back(sigma);
    }
    if (obs) obs->sample(idx, nullptr, &sigma, w, counts);
  }
};

struct RunConfig {
  double T;
  double dt;
  Scheme scheme;
  Measure meas;
  bool record_states;
  bool record_noise;
};

std::vector<double> make_grid(double T, double dt, int& n) {
  n = (T <= 0) ? 0
               : static_cast<int>(std::llround(std::ceil(T / dt - 1e-9)));
  std::vector<double> times;
  times.reserve(n + 1);
  for (int i = 0; i <= n; ++i) times.push_back(std::min(i * dt, T));
  return times;
}

void run_path(const SimModel& m, const InitialState& init, const RunConfig& rc,
              std::uint64_t seed, TrajectoryRecord* rec, PathObserver* obs) {
  if (!(rc.dt > 0)) throw std::invalid_argument("dt must be positive");
  if (rc.T < 0) throw std::invalid_argument("T must be non-negative");
  if (m.segments.empty()) throw std::invalid_argument("model has no segments");
  if (m.max_rate() * rc.dt >= 0.1)
    throw std::invalid_argument(
        "dt too large for the counting rates: need lambda_k * dt < 0.1");

  bool pure_init = std::holds_alternative<Vec4>(init);
  std::unique_ptr<Stepper> st;
  if (pure_init && m.operator_channels) {
    auto ps = std::make_unique<PureStepper>(m, rc.meas, rc.scheme, rc.dt);
    const Vec4& phi0 = std::get<Vec4>(init);
    if (std::abs(phi0.squaredNorm() - 1.0) > 1e-9)
      throw std::invalid_argument("initial pure state must be normalized");
    ps->phi = phi0;
    st = std::move(ps);
  } else {
    Mat4 rho0 = pure_init ? dyad(std::get<Vec4>(init)) : std::get<Mat4>(init);
    validate_density(rho0, true);
    if (m.n_diffusive == 0 && !m.operator_channels) {
      auto ss = std::make_unique<SuperStepper>(m, rc.meas, rc.scheme, rc.dt);
      ss->sigma = rho0;
      st = std::move(ss);
    } else if (m.operator_channels || rc.scheme == Scheme::euler) {
      auto ds = std::make_unique<DensityStepper>(m, rc.meas, rc.scheme, rc.dt);
      ds->sigma = rho0;
      st = std::move(ds);
    } else {
      throw std::invalid_argument(
          "exponential scheme needs single-Kraus channels when diffusive "
          "outputs are present; use scheme=euler");
    }
  }

  int n = 0;
  std::vector<double> times = make_grid(rc.T, rc.dt, n);
  int nd = m.n_diffusive, nc = m.n_counting;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> exp1(1.0);

  if (rec) {
    rec->measure = rc.meas;
    rec->dt = rc.dt;
    rec->times = times;
    rec->dW.assign(rc.record_noise ? nd : 0, {});
    for (auto& v : rec->dW) v.reserve(n);
  }

  const auto& segs = m.segments;
  std::size_t seg_idx = 0;
  while (seg_idx + 1 < segs.size() && segs[seg_idx + 1].t0 <= kTimeTol)
    ++seg_idx;
  st->set_segment(segs[seg_idx]);

  std::vector<double> next(nc, kInf);
  auto draw_arrivals = [&](double from) {
    for (int k = 0; k < nc; ++k) {
      double lam = segs[seg_idx].channels[k].rate;
      next[k] = lam > 0 ? from + exp1(rng) / lam : kInf;
    }
  };
  if (rc.meas == Measure::Q) draw_arrivals(0.0);

  std::vector<int> cum(nc, 0);
  st->emit(0, 1.0, cum, rec, rc.record_states, obs);

  std::vector<double> mj(nd, 0.0), mu(nc, 0.0), bound(nc, 0.0);
  std::vector<double> mu_now(nc, 0.0), dWrec(nd, 0.0), dw(nd, 0.0);
  std::vector<int> dN(nc, 0);
  struct Ev {
    double t;
    int k;
  };
  std::vector<Ev> props;
  bool dead = false;

  for (int i = 0; i < n; ++i) {
    double t0 = times[i], t1 = times[i + 1], h = t1 - t0;
    if (dead) {
      if (rec && rc.record_noise)
        for (int j = 0; j < nd; ++j) rec->dW[j].push_back(0.0);
      st->emit(i + 1, 0.0, cum, rec, rc.record_states, obs);
      continue;
    }

    bool seg_changed = false;
    while (seg_idx + 1 < segs.size() && segs[seg_idx + 1].t0 <= t0 + kTimeTol) {
      ++seg_idx;
      seg_changed = true;
    }
    if (seg_changed) {
      st->set_segment(segs[seg_idx]);
      if (rc.meas == Measure::Q) draw_arrivals(t0);
    }

    if (rc.meas == Measure::P) {
      st->normalize();
      st->drift_coeffs(mj.data());
      st->intensities(mu.data());
      for (int k = 0; k < nc; ++k) bound[k] = 1.5 * mu[k];
      props.clear();
      for (int k = 0; k < nc; ++k) {
        double u1 = unif(rng);
        if (u1 < bound[k] * h) props.push_back({t0 + unif(rng) * h, k});
      }
      std::stable_sort(props.begin(), props.end(),
                       [](const Ev& a, const Ev& b) { return a.t < b.t; });
    }

    std::fill(dWrec.begin(), dWrec.end(), 0.0);

    if (rc.scheme == Scheme::euler) {
      std::fill(dN.begin(), dN.end(), 0);
      if (rc.meas == Measure::Q) {
        for (int k = 0; k < nc; ++k) {
          double lam = segs[seg_idx].channels[k].rate;
          double first = kInf;
          while (next[k] < t1 - kTimeTol) {
            if (first == kInf) first = next[k];
            next[k] += exp1(rng) / lam;
          }
          if (first < kInf) {
            dN[k] = 1;
            ++cum[k];
            if (rec) rec->counts.push_back({first, k, 0});
          }
        }
      }
      for (int j = 0; j < nd; ++j) {
        dWrec[j] = gauss(rng) * std::sqrt(h);
        if (rc.meas == Measure::P) dWrec[j] += mj[j] * h;
      }
      std::vector<Ev> accepted;
      if (rc.meas == Measure::P) {
        for (const Ev& e : props) {
          double u3 = unif(rng);
          double p = bound[e.k] > 0 ? mu[e.k] / bound[e.k] : 0.0;
          if (u3 < p) accepted.push_back(e);
        }
      }
      st->em_step(t0, h, dWrec.data(), dN.data());
      for (const Ev& e : accepted) {
        st->jump(e.k);
        ++cum[e.k];
        if (rec) rec->counts.push_back({e.t, e.k, 0});
      }
      if (rc.meas == Measure::P) st->normalize();
    } else {
      double cur = t0;
      std::size_t prop_i = 0;
      auto sub_advance = [&](double upto) {
        double tau = upto - cur;
        if (tau <= kTimeTol) {
          cur = upto;
          return;
        }
        for (int j = 0; j < nd; ++j) {
          dw[j] = gauss(rng) * std::sqrt(tau);
          if (rc.meas == Measure::P) dw[j] += mj[j] * tau;
          dWrec[j] += dw[j];
        }
        st->advance(tau, std::abs(tau - rc.dt) < kTimeTol, dw.data());
        cur = upto;
      };
      while (true) {
        double tb = kInf;
        if (seg_idx + 1 < segs.size() && segs[seg_idx + 1].t0 < t1 - kTimeTol &&
            segs[seg_idx + 1].t0 > cur + kTimeTol)
          tb = segs[seg_idx + 1].t0;
        double ta = kInf;
        int ka = -1;
        if (rc.meas == Measure::Q) {
          for (int k = 0; k < nc; ++k)
            if (next[k] < ta) {
              ta = next[k];
              ka = k;
            }
          if (ta >= t1 - kTimeTol) ta = kInf;
        } else if (prop_i < props.size()) {
          ta = props[prop_i].t;
          ka = props[prop_i].k;
        }
        double te = std::min(tb, ta);
        if (te == kInf) break;
        sub_advance(te);
        if (tb <= ta) {
          ++seg_idx;
          st->set_segment(segs[seg_idx]);
          if (rc.meas == Measure::Q) draw_arrivals(te);
          continue;
        }
        if (rc.meas == Measure::Q) {
          st->jump(ka);
          ++cum[ka];
          if (rec) rec->counts.push_back({te, ka, 0});
          next[ka] = te + exp1(rng) / segs[seg_idx].channels[ka].rate;
        } else {
          ++prop_i;
          double w_now = st->weight();
          st->intensities(mu_now.data());
          double u3 = unif(rng);
          double p = (bound[ka] > 0 && w_now > 0)
                         ? mu_now[ka] / (w_now * bound[ka])
                         : 0.0;
          if (u3 < p) {
            st->jump(ka);
            ++cum[ka];
            if (rec) rec->counts.push_back({te, ka, 0});
          }
        }
      }
      sub_advance(t1);
      if (rc.meas == Measure::P) st->normalize();
    }

    double w = 1.0;
    if (rc.meas == Measure::Q) {
      w = st->weight();
      if (!(w >= kWeightFloor)) {
        dead = true;
        w = 0.0;
        st->kill();
        if (rec) rec->terminated = true;
      }
    }
    if (rec && rc.record_noise)
      for (int j = 0; j < nd; ++j) rec->dW[j].push_back(dWrec[j]);
    st->emit(i + 1, w, cum, rec, rc.record_states, obs);
  }
}

}  // namespace

std::vector<double> time_grid(double T, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  int n = 0;
  return make_grid(T, dt, n);
}

TrajectoryRecord simulate_physical(const SimModel& m, const InitialState& init,
                                   double T, double dt, std::uint64_t seed,
                                   Scheme scheme) {
  TrajectoryRecord rec;
  RunConfig rc{T, dt, scheme, Measure::P, true, true};
  run_path(m, init, rc, seed, &rec, nullptr);
  return rec;
}

TrajectoryRecord simulate_reference(const SimModel& m, const InitialState& init,
                                    double T, double dt, std::uint64_t seed,
                                    Scheme scheme) {
  TrajectoryRecord rec;
  RunConfig rc{T, dt, scheme, Measure::Q, true, true};
  run_path(m, init, rc, seed, &rec, nullptr);
  return rec;
}

Mat4 master_advance(const SimModel& m, Mat4 eta, double t, double h,
                    int n_sub) {
  double hs = h / n_sub;
  for (int s = 0; s < n_sub; ++s) {
    Mat4 k1 = m.liouville(eta, t);
    Mat4 k2 = m.liouville(Mat4(eta + 0.5 * hs * k1), t + 0.5 * hs);
    Mat4 k3 = m.liouville(Mat4(eta + 0.5 * hs * k2), t + 0.5 * hs);
    Mat4 k4 = m.liouville(Mat4(eta + hs * k3), t + hs);
    eta += (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += hs;
  }
  return eta;
}

std::vector<Mat4> evolve_master(const SimModel& m, const Mat4& rho0, double T,
                                double dt) {
  validate_density(rho0, true);
  int n = 0;
  std::vector<double> times = make_grid(T, dt, n);
  std::vector<Mat4> out;
  out.reserve(n + 1);
  out.push_back(rho0);
  Mat4 eta = rho0;
  for (int i = 0; i < n; ++i) {
    eta = master_advance(m, eta, times[i], times[i + 1] - times[i], 1);
    eta = (0.5 * (eta + eta.adjoint())).eval();
    if (std::abs(eta.trace().real() - 1.0) > 1e-8) {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "master equation trace drift %.3e at t=%.6f; reduce dt",
                    eta.trace().real() - 1.0, times[i + 1]);
      throw std::runtime_error(buf);
    }
    out.push_back(eta);
  }
  return out;
}

namespace {

// Streaming mean / sum-of-squared-deviations via Welford updates, merged
// across threads with Chan's formula. The naive sum / sum-of-squares form has
// a cancellation floor of ~|x| sqrt(eps), which would mask the exactly-zero
// variance of the deterministic Q-mode observables.
struct Accumulator {
  Observable kind = Observable::concurrence;
  Measure meas = Measure::P;
  int npts = 0, nchan = 0;
  long count = 0;  // trajectories folded in
  std::vector<double> mean, m2;
  std::vector<Mat4> mmean;
  std::vector<Eigen::Matrix4d> mm2;
  std::vector<std::vector<double>> cmean, cm2;
  std::vector<long> alive;

  void init(Observable k, Measure me, int np, int nch) {
    kind = k;
    meas = me;
    npts = np;
    nchan = nch;
    count = 0;
    alive.assign(np, 0);
    switch (kind) {
      case Observable::state:
        mmean.assign(np, Mat4::Zero());
        mm2.assign(np, Eigen::Matrix4d::Zero());
        break;
      case Observable::counts:
        cmean.assign(nch, std::vector<double>(np, 0.0));
        cm2.assign(nch, std::vector<double>(np, 0.0));
        break;
      default:
        mean.assign(np, 0.0);
        m2.assign(np, 0.0);
    }
  }

  void scalar_add(double& mu, double& s2, double v, long k) {
    double delta = v - mu;
    mu += delta / double(k);
    s2 += delta * (v - mu);
  }

  void add(int idx, const Vec4* psi, const Mat4* rho, double w,
           const std::vector<int>& counts) {
    if (idx == 0) ++count;
    if (w > 0) ++alive[idx];
    switch (kind) {
      case Observable::state: {
        Mat4 val = psi ? dyad(*psi) : *rho;
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) {
            complexd delta = val(r, c) - mmean[idx](r, c);
            mmean[idx](r, c) += delta / double(count);
            mm2[idx](r, c) +=
                (std::conj(delta) * (val(r, c) - mmean[idx](r, c))).real();
          }
        break;
      }
      case Observable::counts: {
        for (int k = 0; k < nchan; ++k) {
          double v = (meas == Measure::Q ? w : 1.0) * counts[k];
          scalar_add(cmean[k][idx], cm2[k][idx], v, count);
        }
        break;
      }
      case Observable::weight: {
        double v = meas == Measure::Q ? w : 1.0;
        scalar_add(mean[idx], m2[idx], v, count);
        break;
      }
      case Observable::concurrence: {
        // Pure paths: |chi| of the stored state equals p_t * C(psi_hat) in
        // Q-mode and C(psi) in P-mode. Density paths: weight times the
        // concurrence of the normalized state.
        double v = 0.0;
        if (psi) {
          v = std::abs(chi(*psi));
        } else if (w > 1e-280) {
          v = w * concurrence_mixed(*rho);
        }
        scalar_add(mean[idx], m2[idx], v, count);
        break;
      }
    }
  }

  static void scalar_merge(double& mu, double& s2, double omu, double os2,
                           long na, long nb) {
    double delta = omu - mu;
    mu += delta * double(nb) / double(na + nb);
    s2 += os2 + delta * delta * double(na) * double(nb) / double(na + nb);
  }

  void merge(const Accumulator& o) {
    if (o.count == 0) return;
    for (int i = 0; i < npts; ++i) alive[i] += o.alive[i];
    if (count == 0) {
      mean = o.mean;
      m2 = o.m2;
      mmean = o.mmean;
      mm2 = o.mm2;
      cmean = o.cmean;
      cm2 = o.cm2;
      count = o.count;
      return;
    }
    long na = count, nb = o.count;
    for (std::size_t i = 0; i < mean.size(); ++i)
      scalar_merge(mean[i], m2[i], o.mean[i], o.m2[i], na, nb);
    for (std::size_t i = 0; i < mmean.size(); ++i)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          complexd delta = o.mmean[i](r, c) - mmean[i](r, c);
          mmean[i](r, c) += delta * (double(nb) / double(na + nb));
          mm2[i](r, c) += o.mm2[i](r, c) + std::norm(delta) * double(na) *
                                               double(nb) / double(na + nb);
        }
    if (kind == Observable::counts)
      for (int k = 0; k < nchan; ++k)
        for (int i = 0; i < npts; ++i)
          scalar_merge(cmean[k][i], cm2[k][i], o.cmean[k][i], o.cm2[k][i], na,
                       nb);
    count = na + nb;
  }

  EnsembleEstimate finalize(const std::vector<double>& times, int n) const {
    EnsembleEstimate est;
    est.kind = kind;
    est.measure = meas;
    est.n_traj = n;
    est.times = times;
    auto se_of = [n](double s2) {
      if (n < 2) return 0.0;
      return std::sqrt(std::max(0.0, s2) / (double(n - 1) * n));
    };
    switch (kind) {
      case Observable::state:
        est.state_mean.resize(npts);
        est.state_se.resize(npts);
        for (int i = 0; i < npts; ++i) {
          est.state_mean[i] = mmean[i];
          double var_total = 0.0;
          if (n >= 2)
            for (int r = 0; r < 4; ++r)
              for (int c = 0; c < 4; ++c)
                var_total += std::max(0.0, mm2[i](r, c)) / (n - 1);
          est.state_se[i] = std::sqrt(var_total / n);
        }
        break;
      case Observable::counts:
        est.count_mean.assign(nchan, {});
        est.count_se.assign(nchan, {});
        for (int k = 0; k < nchan; ++k) {
          est.count_mean[k].resize(npts);
          est.count_se[k].resize(npts);
          for (int i = 0; i < npts; ++i) {
            est.count_mean[k][i] = cmean[k][i];
            est.count_se[k][i] = se_of(cm2[k][i]);
          }
        }
        break;
      default:
        est.mean.resize(npts);
        est.se.resize(npts);
        for (int i = 0; i < npts; ++i) {
          est.mean[i] = mean[i];
          est.se[i] = se_of(m2[i]);
        }
    }
    return est;
  }
};

struct MultiObserver final : PathObserver {
  std::vector<Accumulator>* accs = nullptr;
  void sample(int idx, const Vec4* psi, const Mat4* rho, double w,
              const std::vector<int>& counts) override {
    for (auto& a : *accs) a.add(idx, psi, rho, w, counts);
  }
};

}  // namespace

std::vector<EnsembleEstimate> ensemble_run_multi(
    const SimModel& m, const InitialState& init, const EnsembleOptions& opt,
    const std::vector<Observable>& obs) {
  if (opt.n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
  int n = 0;
  std::vector<double> times = make_grid(opt.T, opt.dt, n);
  int npts = static_cast<int>(times.size());
  int nch = m.n_counting;

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int n_threads = opt.n_threads > 0 ? opt.n_threads : std::max(1, hw);
  n_threads = std::min(n_threads, opt.n_traj);

  RunConfig rc{opt.T, opt.dt, opt.scheme, opt.measure, false, false};

  std::vector<std::vector<Accumulator>> per_thread(n_threads);
  std::vector<std::exception_ptr> errors(n_threads);

  auto worker = [&](int tid, int lo, int hi) {
    try {
      auto& accs = per_thread[tid];
      accs.resize(obs.size());
      for (std::size_t a = 0; a < obs.size(); ++a)
        accs[a].init(obs[a], opt.measure, npts, nch);
      MultiObserver mo;
      mo.accs = &accs;
      for (int idx = lo; idx < hi; ++idx)
        run_path(m, init, rc, derive_stream(opt.seed, idx), nullptr, &mo);
    } catch (...) {
      errors[tid] = std::current_exception();
    }
  };

  if (n_threads == 1) {
    worker(0, 0, opt.n_traj);
  } else {
    std::vector<std::thread> pool;
    int base = opt.n_traj / n_threads, extra = opt.n_traj % n_threads;
    int lo = 0;
    for (int tid = 0; tid < n_threads; ++tid) {
      int cnt = base + (tid < extra ? 1 : 0);
      pool.emplace_back(worker, tid, lo, lo + cnt);
      lo += cnt;
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<EnsembleEstimate> out;
  for (std::size_t a = 0; a < obs.size(); ++a) {
    Accumulator total = std::move(per_thread[0][a]);
    for (int tid = 1; tid < n_threads; ++tid) total.merge(per_thread[tid][a]);
    if (opt.measure == Measure::Q)
      for (int i = 0; i < npts; ++i)
        if (total.alive[i] == 0) {
          char buf[160];
          std::snprintf(buf, sizeof(buf),
                        "all %d trajectory weights underflowed by t=%.6f "
                        "under the reference measure; rerun with measure=P",
                        opt.n_traj, times[i]);
          throw std::runtime_error(buf);
        }
    out.push_back(total.finalize(times, opt.n_traj));
  }
  return out;
}

EnsembleEstimate ensemble_run(const SimModel& m, const InitialState& init,
                              const EnsembleOptions& opt, Observable obs) {
  return ensemble_run_multi(m, init, opt, {obs})[0];
}

}  // namespace qmon
