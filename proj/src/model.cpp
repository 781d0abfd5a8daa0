#include "qmon/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qmon {

namespace {
const complexd I(0.0, 1.0);

int segment_index(const std::vector<double>& t, double time) {
  auto it = std::upper_bound(t.begin(), t.end(), time);
  int idx = static_cast<int>(it - t.begin()) - 1;
  return std::max(idx, 0);
}

const Mat2& pb(int i) { return i == 0 ? id2() : pauli(i); }

// Hilbert-Schmidt coefficients a_ij of m in the sigma_i (x) sigma_j basis,
// including the identity (index 0).
std::array<std::array<complexd, 4>, 4> pauli_coeffs(const Mat4& m) {
  std::array<std::array<complexd, 4>, 4> a;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      a[i][j] = (tensor(pb(i), pb(j)) * m).trace() / 4.0;
  return a;
}

}  // namespace

const Eigen::VectorXcd& PiecewisePath::at(double time) const {
  return val[segment_index(t, time)];
}

const Eigen::MatrixXcd& PiecewiseMatrix::at(double time) const {
  return val[segment_index(t, time)];
}

Eigen::VectorXcd MonitoredModel::v_at(double t) const {
  if (v.empty()) return Eigen::VectorXcd::Zero(n_channels());
  return v.at(t);
}

Eigen::MatrixXcd MonitoredModel::u_at(double t) const {
  if (u.empty()) return Eigen::MatrixXcd::Identity(n_channels(), n_channels());
  return u.at(t);
}

std::vector<double> MonitoredModel::breakpoints() const {
  std::vector<double> bp{0.0};
  bp.insert(bp.end(), u.t.begin(), u.t.end());
  bp.insert(bp.end(), v.t.begin(), v.t.end());
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
  return bp;
}

void MonitoredModel::validate() const {
  const int Z = n_channels();
  if (labels.size() != L.size())
    throw std::invalid_argument("model: labels and channel operators differ in count");
  if (static_cast<int>(L.size()) != Z)
    throw std::invalid_argument(
        "model: diffusive + counting channel count must equal the number of channel operators");
  if (n_diffusive < 0 || n_counting < 0)
    throw std::invalid_argument("model: negative channel count");
  if (!is_hermitian(H))
    throw std::invalid_argument("model: H is not Hermitian");
  if (static_cast<int>(rates.size()) != n_counting)
    throw std::invalid_argument("model: need one reference rate per counting channel");
  for (double lam : rates)
    if (!(lam > 0.0))
      throw std::invalid_argument("model: reference rates must be positive");

  if (!u.empty()) {
    if (u.t.size() != u.val.size() || u.t.empty() || u.t[0] != 0.0)
      throw std::invalid_argument("model: u segments must start at t = 0");
    for (const auto& uu : u.val) {
      if (uu.rows() != Z || uu.cols() != Z)
        throw std::invalid_argument("model: u must be square over all channels");
      if (Z > 0 &&
          (uu.adjoint() * uu - Eigen::MatrixXcd::Identity(Z, Z)).cwiseAbs().maxCoeff() > herm_tol)
        throw std::invalid_argument("model: u is not unitary at a breakpoint");
    }
  }
  if (!v.empty()) {
    if (v.t.size() != v.val.size() || v.t.empty() || v.t[0] != 0.0)
      throw std::invalid_argument("model: v segments must start at t = 0");
    for (const auto& vv : v.val)
      if (vv.size() != Z)
        throw std::invalid_argument("model: v must have one amplitude per channel");
  }
  if (!S.empty()) {
    if (static_cast<int>(S.size()) != Z)
      throw std::invalid_argument("model: S must have one block row per channel");
    Eigen::MatrixXcd big(4 * Z, 4 * Z);
    for (int z = 0; z < Z; ++z) {
      if (static_cast<int>(S[z].size()) != Z)
        throw std::invalid_argument("model: S block rows must be square");
      for (int w = 0; w < Z; ++w) big.block<4, 4>(4 * z, 4 * w) = S[z][w];
    }
    if ((big.adjoint() * big - Eigen::MatrixXcd::Identity(4 * Z, 4 * Z))
            .cwiseAbs()
            .maxCoeff() > herm_tol)
      throw std::invalid_argument("model: S is not unitary");
  }
}

DerivedOperators detection_operators(const MonitoredModel& m, double t) {
  const int Z = m.n_channels();
  const Eigen::VectorXcd v = m.v_at(t);
  const Eigen::MatrixXcd u = m.u_at(t);
  if (Z > 0 &&
      (u.adjoint() * u - Eigen::MatrixXcd::Identity(Z, Z)).cwiseAbs().maxCoeff() > herm_tol)
    throw std::invalid_argument("detection_operators: u is not unitary");

  // G_z = L_z + sum_w S_zw v_w
  std::vector<Mat4> G(Z);
  for (int z = 0; z < Z; ++z) {
    G[z] = m.L[z];
    if (m.s_is_identity()) {
      G[z] += v(z) * id4();
    } else {
      for (int w = 0; w < Z; ++w) G[z] += m.S[z][w] * v(w);
    }
  }

  DerivedOperators out;
  out.H0 = m.H;
  for (int z = 0; z < Z; ++z) {
    for (int w = 0; w < Z; ++w) {
      Mat4 Swz = m.s_is_identity() ? Mat4((w == z) ? id4() : Mat4::Zero())
                                   : m.S[w][z];
      out.H0 += 0.5 * I *
                (std::conj(v(z)) * (Swz.adjoint() * m.L[w]) -
                 m.L[w].adjoint() * (Swz * v(z)));
    }
  }

  Mat4 quad = Mat4::Zero();
  std::vector<Mat4> R(Z);
  for (int j = 0; j < Z; ++j) {
    R[j] = Mat4::Zero();
    for (int z = 0; z < Z; ++z) R[j] += u(j, z) * G[z];
    quad += R[j].adjoint() * R[j];
  }
  out.K = -I * out.H0 - 0.5 * quad;
  out.R.assign(R.begin(), R.begin() + m.n_diffusive);
  out.J.assign(R.begin() + m.n_diffusive, R.end());
  return out;
}

Mat4 apply_liouvillian(const MonitoredModel& m, const Mat4& tau, double t) {
  const int Z = m.n_channels();
  const Eigen::VectorXcd v = m.v_at(t);

  Mat4 X = Mat4::Zero();  // H(t) = H + (i/2)(X - X^dag)
  for (int z = 0; z < Z; ++z) {
    for (int w = 0; w < Z; ++w) {
      Mat4 Swz = m.s_is_identity() ? Mat4((w == z) ? id4() : Mat4::Zero())
                                   : m.S[w][z];
      Mat4 Szw = m.s_is_identity() ? Mat4((z == w) ? id4() : Mat4::Zero())
                                   : m.S[z][w];
      Mat4 shift = Swz.adjoint();
      if (z == w) shift += id4();
      X += std::conj(v(z)) * (shift * m.L[w]) +
           std::conj(v(z)) * v(w) * Szw;
    }
  }
  Mat4 Ht = m.H + 0.5 * I * (X - X.adjoint());

  Mat4 out = -I * (Ht * tau - tau * Ht);
  for (int z = 0; z < Z; ++z) {
    Mat4 Lt = m.L[z];
    for (int w = 0; w < Z; ++w) {
      Mat4 delta = (z == w) ? Mat4(id4()) : Mat4(Mat4::Zero());
      Mat4 Szw = m.s_is_identity() ? delta : m.S[z][w];
      Lt += (Szw - delta) * v(w);
    }
    Mat4 LdL = Lt.adjoint() * Lt;
    out += Lt * tau * Lt.adjoint() - 0.5 * (LdL * tau + tau * LdL);
  }
  return out;
}

const char* to_string(Interaction c) {
  switch (c) {
    case Interaction::direct: return "direct";
    case Interaction::indirect_only: return "indirect-only";
    case Interaction::none: return "none";
  }
  return "?";
}

bool is_local_sum(const Mat4& m, double tol) {
  auto a = pauli_coeffs(m);
  double sum = 0.0;
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j) sum += std::norm(a[i][j]);
  return 2.0 * std::sqrt(sum) <= tol;
}

std::optional<std::pair<Mat2, Mat2>> split_local_sum(const Mat4& m, double tol) {
  if (!is_local_sum(m, tol)) return std::nullopt;
  auto a = pauli_coeffs(m);
  Mat2 A = a[0][0] * id2();
  Mat2 B = Mat2::Zero();
  for (int i = 1; i < 4; ++i) {
    A += a[i][0] * pauli(i);
    B += a[0][i] * pauli(i);
  }
  return std::make_pair(A, B);
}

int local_side(const Mat4& m, double tol) {
  auto a = pauli_coeffs(m);
  double coupling = 0.0, s1 = 0.0, s2 = 0.0;
  for (int i = 1; i < 4; ++i) {
    s1 += std::norm(a[i][0]);
    s2 += std::norm(a[0][i]);
    for (int j = 1; j < 4; ++j) coupling += std::norm(a[i][j]);
  }
  if (2.0 * std::sqrt(coupling + s1 + s2) <= tol) return 3;
  if (2.0 * std::sqrt(coupling + s2) <= tol) return 1;
  if (2.0 * std::sqrt(coupling + s1) <= tol) return 2;
  return 0;
}

Interaction classify_interaction(const MonitoredModel& m) {
  if (!m.s_is_identity())
    throw UnsupportedClassification(
        "classification is only defined for S = identity");
  if (!is_local_sum(m.H)) return Interaction::direct;
  bool partition = true;
  for (const auto& Lz : m.L) {
    int side = local_side(Lz);
    if (side == 0) {
      partition = false;
      if (!is_local_sum(Lz)) return Interaction::direct;
    }
  }
  return partition ? Interaction::none : Interaction::indirect_only;
}

PauliDecomposition pauli_decompose(const Mat2& a) {
  PauliDecomposition out;
  for (int i = 1; i <= 3; ++i) out.h[i - 1] = (pauli(i) * a).trace() / 2.0;
  out.r = a.trace() / 2.0;
  return out;
}

Mat4 JumpChannel::apply(const Mat4& sigma) const {
  Mat4 out = Mat4::Zero();
  for (const auto& k : kraus) out += k * sigma * k.adjoint();
  return out;
}

Mat4 JumpChannel::effect() const {
  Mat4 out = Mat4::Zero();
  for (const auto& k : kraus) out += k.adjoint() * k;
  return out;
}

LocalCoefficients local_coefficients(const MonitoredModel& m, double t) {
  if (!m.s_is_identity())
    throw std::invalid_argument("local_coefficients: requires S = identity");
  auto ops = detection_operators(m, t);
  std::vector<Mat4> all;
  all.insert(all.end(), ops.R.begin(), ops.R.end());
  all.insert(all.end(), ops.J.begin(), ops.J.end());

  LocalCoefficients out;
  const int Z = m.n_channels();
  out.ell.resize(Z);
  out.h_rot.resize(Z);
  out.side.resize(Z);
  out.c.resize(Z);
  for (int j = 0; j < Z; ++j) {
    int side = local_side(all[j]);
    if (side == 0) {
      std::ostringstream msg;
      msg << "local_coefficients: detection operator " << j
          << " is not local on a single qubit at t = " << t;
      throw std::invalid_argument(msg.str());
    }
    auto a = pauli_coeffs(all[j]);
    std::array<complexd, 3> h;
    for (int i = 1; i < 4; ++i) h[i - 1] = (side == 2) ? a[0][i] : a[i][0];
    out.h_rot[j] = h;
    out.ell[j] = 2.0 * a[0][0];
    out.side[j] = (side == 3) ? 1 : side;
  }
  out.d.resize(m.n_counting);
  for (int k = 0; k < m.n_counting; ++k) {
    int j = m.n_diffusive + k;
    complexd hh = 0.0;
    for (auto& hi : out.h_rot[j]) hh += hi * hi;
    out.d[k] = out.ell[j] * out.ell[j] / 4.0 - hh;
  }
  for (int j = 0; j < Z; ++j) {
    if (j < m.n_diffusive) {
      double s = 0.0;
      for (auto& hi : out.h_rot[j]) s += hi.real() * hi.real();
      out.c[j] = 2.0 * s;
    } else {
      double habs = 0.0;
      for (auto& hi : out.h_rot[j]) habs += std::norm(hi);
      out.c[j] = 0.25 * std::norm(out.ell[j]) -
                 std::abs(out.d[j - m.n_diffusive]) + habs;
    }
    out.c_total += out.c[j];
  }
  return out;
}

}  // namespace qmon
