#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "nlsgs/errors.hpp"
#include "nlsgs/linear_hamiltonian.hpp"
#include "nlsgs/nonlinearity.hpp"
#include "nlsgs/radial_grid.hpp"

namespace nlsgs {

struct BranchSolverOptions {
  double tolerance = 1e-13;     // relative update size for (h, E)
  int max_fixed_point = 200;
  int max_newton = 30;
  double max_contraction = 0.5; // above this the fixed point hands over to Newton
};

// Real branch at amplitude rho >= 0, all vectors in w-space.
struct RealBranchSolution {
  double rho = 0.0;
  double E = 0.0;
  Eigen::VectorXd h;
  Eigen::VectorXd psi;
  int iterations = 0;
  double contraction = 0.0;
  bool newton = false;
};

// Real branch data at rho with the radial derivative and, optionally, the
// even profile f(rho) = psi_r / rho with its first two rho-derivatives.
struct BranchJet {
  double rho = 0.0;
  double E = 0.0;
  double dE = 0.0;
  RealBranchSolution base;
  Eigen::VectorXd dpsi;
  Eigen::VectorXd f, fp, fpp;
  double richardson_gap = 0.0;  // |D(step) - D(2 step)| / |D|
};

struct BranchPoint {
  cplx a;
  double E = 0.0;
  RadialField h;
  RadialField psi_E;
  RadialField d_psi_da1;
  RadialField d_psi_da2;
  double dE_dabs = 0.0;
  double residual = 0.0;
  int iterations = 0;
  double contraction = 0.0;

  double dE_da1() const { return std::abs(a) > 0 ? dE_dabs * a.real() / std::abs(a) : 0.0; }
  double dE_da2() const { return std::abs(a) > 0 ? dE_dabs * a.imag() / std::abs(a) : 0.0; }
};

class BranchContext {
 public:
  BranchContext(SpectralPtr spectral, NonlinearitySpec spec, BranchSolverOptions opts = {})
      : s_(std::move(spectral)), spec_(spec), opts_(opts) {
    spec_.validate();
    q0_ = s_->ground_state.real_part();
    wq_ = 4.0 * kPi * s_->grid->spacing();
  }

  const SpectralData& spectral() const { return *s_; }
  const SpectralPtr& spectral_ptr() const { return s_; }
  const NonlinearitySpec& nonlinearity() const { return spec_; }
  const RadialGrid& grid() const { return *s_->grid; }
  const BranchSolverOptions& options() const { return opts_; }

  // Fixed point h = -(H-E)^{-1} P_c g(rho psi0 + h), E = E0 + <psi0, g>/rho,
  // with a bordered-Newton fallback when it stops contracting.
  RealBranchSolution solve_real(double rho, const RealBranchSolution* warm = nullptr) const {
    const Eigen::Index n = q0_.size();
    RealBranchSolution sol;
    sol.rho = rho;
    sol.E = s_->ground_energy;
    sol.h = Eigen::VectorXd::Zero(n);
    if (rho == 0.0) {
      sol.psi = Eigen::VectorXd::Zero(n);
      return sol;
    }
    if (warm && warm->rho > 0.0) {
      sol.h = warm->h * std::pow(rho / warm->rho, 2.0 + spec_.alpha1);
      sol.E = s_->ground_energy + (warm->E - s_->ground_energy) * std::pow(rho / warm->rho, 1.0 + spec_.alpha1);
    }
    double prev = kInf;
    bool converged = false;
    for (int it = 0; it < opts_.max_fixed_point; ++it) {
      const Eigen::VectorXd psi = rho * q0_ + sol.h;
      const Eigen::VectorXd gv = g_real(psi);
      const double e_new = s_->ground_energy + wq_ * q0_.dot(gv) / rho;
      Eigen::VectorXd h_new = -resolvent_real(gv, e_new);
      const double dh = (h_new - sol.h).norm();
      const double de = std::abs(e_new - sol.E);
      const double step = dh / (rho * q0_.norm()) + de / std::abs(s_->ground_energy);
      sol.contraction = std::isfinite(prev) && prev > 0 ? step / prev : 0.0;
      sol.h = std::move(h_new);
      sol.E = e_new;
      sol.iterations = it + 1;
      if (step <= opts_.tolerance || step == 0.0) {
        converged = true;
        break;
      }
      if (it >= 3 && sol.contraction > opts_.max_contraction) break;
      if (it >= 2 && step >= prev && step < 1e3 * opts_.tolerance) {  // roundoff floor
        converged = true;
        break;
      }
      prev = step;
    }
    if (!converged) newton_refine(sol);
    sol.psi = rho * q0_ + sol.h;
    return sol;
  }

  BranchJet jet(double rho, bool profile_derivatives = false, const RealBranchSolution* warm = nullptr) const {
    BranchJet j;
    j.rho = rho;
    j.base = solve_real(rho, warm);
    j.E = j.base.E;
    if (rho == 0.0) {
      j.dpsi = q0_;
      j.dE = 0.0;
      if (profile_derivatives) {
        j.f = q0_;
        j.fp = Eigen::VectorXd::Zero(q0_.size());
        j.fpp = j.fp;
      }
      return j;
    }
    const double step = std::max(1e-4 * rho, 1e-7);
    auto at = [&](double r) {
      // odd extension: psi(-r) = -psi(r), E(-r) = E(r)
      if (r == 0.0) return RealBranchSolution{0.0, s_->ground_energy, Eigen::VectorXd::Zero(q0_.size()), Eigen::VectorXd::Zero(q0_.size())};
      RealBranchSolution s = solve_real(std::abs(r), &j.base);
      if (r < 0) {
        s.psi = -s.psi;
        s.h = -s.h;
      }
      return s;
    };
    const auto plus = at(rho + step), minus = at(rho - step);
    const auto plus2 = at(rho + 2 * step), minus2 = at(rho - 2 * step);
    const Eigen::VectorXd d1 = (plus.psi - minus.psi) / (2 * step);
    const Eigen::VectorXd d2 = (plus2.psi - minus2.psi) / (4 * step);
    j.dpsi = (4.0 * d1 - d2) / 3.0;
    j.richardson_gap = (d1 - d2).norm() / std::max(d1.norm(), 1e-300);
    const double e1 = (plus.E - minus.E) / (2 * step), e2 = (plus2.E - minus2.E) / (4 * step);
    j.dE = (4.0 * e1 - e2) / 3.0;
    if (profile_derivatives) {
      auto fval = [](const RealBranchSolution& s, double r) { return Eigen::VectorXd(s.psi / r); };
      j.f = j.base.psi / rho;
      // minus is already oddly extended, so f stays even across rho = 0
      const Eigen::VectorXd fm = rho - step == 0.0 ? Eigen::VectorXd(q0_) : fval(minus, rho - step);
      const Eigen::VectorXd fpl = fval(plus, rho + step);
      j.fp = (fpl - fm) / (2 * step);
      j.fpp = (fpl - 2.0 * j.f + fm) / (step * step);
    }
    return j;
  }

  BranchPoint point_from_jet(const BranchJet& j, cplx a) const {
    const auto& grid = s_->grid;
    BranchPoint bp;
    bp.a = a;
    bp.E = j.E;
    bp.dE_dabs = j.dE;
    bp.iterations = j.base.iterations;
    bp.contraction = j.base.contraction;
    const double rho = std::abs(a);
    if (rho == 0.0) {
      bp.h = RadialField(grid);
      bp.psi_E = RadialField(grid);
      bp.d_psi_da1 = s_->ground_state;
      bp.d_psi_da2 = cplx(0, 1) * s_->ground_state;
      bp.residual = 0.0;
      return bp;
    }
    const cplx phase = a / rho;
    const double c = phase.real(), s = phase.imag();
    const Eigen::VectorXcd psi = phase * j.base.psi.cast<cplx>();
    const Eigen::VectorXcd dpsi = phase * j.dpsi.cast<cplx>();
    const cplx i(0, 1);
    bp.psi_E = RadialField(grid, psi);
    bp.h = RadialField(grid, Eigen::VectorXcd(phase * j.base.h.cast<cplx>()));
    bp.d_psi_da1 = RadialField(grid, Eigen::VectorXcd(c * dpsi - (s / rho) * i * psi));
    bp.d_psi_da2 = RadialField(grid, Eigen::VectorXcd(s * dpsi + (c / rho) * i * psi));
    bp.residual = residual(bp.psi_E, bp.E);
    return bp;
  }

  BranchPoint point(cplx a) const { return point_from_jet(jet(std::abs(a)), a); }

  // Profile-only branch point (no derivative solves).
  BranchPoint profile(cplx a, const RealBranchSolution* warm = nullptr) const {
    BranchJet j;
    j.rho = std::abs(a);
    j.base = solve_real(j.rho, warm);
    j.E = j.base.E;
    j.dpsi = Eigen::VectorXd::Zero(q0_.size());
    BranchPoint bp = point_from_jet(j, a);
    if (j.rho == 0.0) return bp;
    bp.d_psi_da1 = RadialField();
    bp.d_psi_da2 = RadialField();
    return bp;
  }

  // d^2 psi_E / (da_k da_l) for (k,l) = (1,1), (1,2), (2,2); needs a jet with
  // profile derivatives. psi_E(a) = a f(|a|).
  std::array<Eigen::VectorXcd, 3> second_derivatives(const BranchJet& j, cplx a) const {
    const Eigen::Index n = q0_.size();
    std::array<Eigen::VectorXcd, 3> out;
    const double rho = std::abs(a);
    if (rho == 0.0) {
      out.fill(Eigen::VectorXcd::Zero(n));
      return out;
    }
    const double r1 = a.real() / rho, r2 = a.imag() / rho;
    const cplx e1(1, 0), e2(0, 1);
    const Eigen::VectorXcd fp = j.fp.cast<cplx>(), fpp = j.fpp.cast<cplx>();
    const Eigen::VectorXcd fp_over = (j.fp / rho).cast<cplx>();
    auto d2 = [&](cplx ek, double rk, cplx el, double rl, double delta) {
      return Eigen::VectorXcd(el * rk * fp + ek * rl * fp + a * (rk * rl * fpp + (delta - rk * rl) * fp_over));
    };
    out[0] = d2(e1, r1, e1, r1, 1.0);
    out[1] = d2(e1, r1, e2, r2, 0.0);
    out[2] = d2(e2, r2, e2, r2, 1.0);
    return out;
  }

  // ||(H - E) psi + g(psi)|| / ||psi||
  double residual(const RadialField& psi, double e) const {
    const double scale = l2_norm(psi);
    if (scale == 0.0) return 0.0;
    const Eigen::VectorXcd r = s_->op.apply(psi.values()) - e * psi.values() + g_values(psi.values(), grid(), spec_);
    return std::sqrt(wq_) * r.norm() / scale;
  }

  // L_psi[w] = (H - E) w + F1(psi)[w]
  RadialField apply_linearized(const BranchPoint& bp, const RadialField& w) const {
    const auto pot = EffectivePotentials::at(bp.psi_E, spec_);
    Eigen::VectorXcd out = s_->op.apply(w.values()) - bp.E * w.values() + pot.apply(w.values());
    return {w.grid_ptr(), std::move(out)};
  }

 private:
  Eigen::VectorXd g_real(const Eigen::VectorXd& w) const {
    const auto& r = grid().nodes();
    Eigen::VectorXd out(w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) out[j] = spec_.ratio(std::abs(w[j]) / r[j]) * w[j];
    return out;
  }

  Eigen::VectorXd project(const Eigen::VectorXd& w) const { return w - q0_ * (wq_ * q0_.dot(w)); }

  Eigen::VectorXd resolvent_real(const Eigen::VectorXd& w, double e) const {
    if (!(e < s_->eigenvalues[1] - 1e-10)) throw BranchDiverged("branch energy reached the continuum");
    Eigen::MatrixXd b = project(w);
    if (s_->op.solve_shifted(e, b) != 0) throw BranchDiverged("singular resolvent in the branch iteration");
    return project(b.col(0));
  }

  // Newton on (H - E) psi + g(psi) = 0, <psi0, psi> = rho. The Jacobian is
  // tridiagonal plus one border row and column; eliminated with two solves.
  void newton_refine(RealBranchSolution& sol) const {
    const double rho = sol.rho;
    const auto& r = grid().nodes();
    Eigen::VectorXd psi = rho * q0_ + sol.h;
    double e = sol.E;
    for (int it = 0; it < opts_.max_newton; ++it) {
      const Eigen::VectorXd f = s_->op.apply(psi) - e * psi + g_real(psi);
      const double c = wq_ * q0_.dot(psi) - rho;
      Tridiagonal jac = s_->op;
      for (Eigen::Index j = 0; j < psi.size(); ++j) jac.diag[j] += spec_.dg(psi[j] / r[j]);
      Eigen::MatrixXd rhs(psi.size(), 2);
      rhs.col(0) = -f;
      rhs.col(1) = psi;
      if (jac.solve_shifted(e, rhs) != 0) break;
      const double denom = wq_ * q0_.dot(rhs.col(1));
      if (denom == 0.0) break;
      const double de = (-c - wq_ * q0_.dot(rhs.col(0))) / denom;
      const Eigen::VectorXd dpsi = rhs.col(0) + de * rhs.col(1);
      psi += dpsi;
      e += de;
      sol.iterations += 1;
      sol.newton = true;
      if (dpsi.norm() <= opts_.tolerance * psi.norm() && std::abs(de) <= opts_.tolerance * std::abs(s_->ground_energy)) {
        sol.h = project(psi);
        sol.E = e;
        return;
      }
    }
    throw BranchDiverged("branch solve did not converge at |a| = " + std::to_string(rho));
  }

  SpectralPtr s_;
  NonlinearitySpec spec_;
  BranchSolverOptions opts_;
  Eigen::VectorXd q0_;  // psi0 in w-space, unit L^2 norm
  double wq_ = 0.0;     // 4 pi dr
};

inline BranchPoint solve_branch_point(cplx a, const BranchContext& ctx) { return ctx.point(a); }

struct Branch {
  std::vector<double> amplitudes;
  std::vector<BranchPoint> points;
  double ground_energy = 0.0;
};

inline Branch sample_branch(const BranchContext& ctx, double a_min, double a_max, int count) {
  if (!(a_min > 0.0 && a_max > a_min && count >= 2)) throw ConfigInvalid("branch amplitude range is empty");
  Branch b;
  b.ground_energy = ctx.spectral().ground_energy;
  const RealBranchSolution* warm = nullptr;
  RealBranchSolution last;
  for (int k = 0; k < count; ++k) {
    const double a = a_min * std::pow(a_max / a_min, static_cast<double>(k) / (count - 1));
    BranchJet j = ctx.jet(a, false, warm);
    last = j.base;
    warm = &last;
    b.amplitudes.push_back(a);
    b.points.push_back(ctx.point_from_jet(j, a));
  }
  return b;
}

struct BranchScalings {
  double slope_E = 0.0;
  double slope_h = 0.0;
};

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Slopes of log|E - E0| and log||h|| against log|a|.
inline BranchScalings fit_branch_scalings(const std::vector<double>& abs_a, const std::vector<double>& energy_shift,
                                          const std::vector<double>& h_norm) {
  if (abs_a.size() < 6) throw InsufficientSamples("branch scaling fit needs at least 6 samples");
  const auto [lo, hi] = std::minmax_element(abs_a.begin(), abs_a.end());
  if (*hi < 10.0 * *lo * (1 - 1e-12)) throw InsufficientSamples("branch scaling fit needs one decade of |a|");
  std::vector<double> de(energy_shift.size());
  for (std::size_t i = 0; i < de.size(); ++i) de[i] = std::abs(energy_shift[i]);
  return {loglog_slope(abs_a, de), loglog_slope(abs_a, h_norm)};
}

inline BranchScalings fit_branch_scalings(const Branch& b) {
  std::vector<double> a, de, h;
  for (std::size_t i = 0; i < b.points.size(); ++i) {
    a.push_back(std::abs(b.points[i].a));
    de.push_back(b.points[i].E - b.ground_energy);
    h.push_back(l2_norm(b.points[i].h));
  }
  return fit_branch_scalings(a, de, h);
}

// Largest sampled |a| whose fixed point contracted with factor below 0.5.
inline double validity_radius(const Branch& b) {
  double r = 0.0;
  for (const auto& p : b.points) {
    if (p.contraction < 0.5) r = std::max(r, std::abs(p.a));
  }
  return r;
}

enum class EnvelopeKind { Upper, Lower, Gradient };

struct EnvelopeReport {
  EnvelopeKind kind = EnvelopeKind::Upper;
  double A = 0.0;
  double C = 0.0;
  double r_match = 0.0;
  double r_end = 0.0;
  double min_margin = kInf;  // min over nodes of log(C e / value) (upper) or log(value / C e) (lower)
  int violations = 0;
  std::vector<double> radii;
  std::vector<double> margins;
  bool holds() const { return violations == 0; }
};

inline const char* envelope_name(EnvelopeKind k) {
  switch (k) {
    case EnvelopeKind::Upper: return "upper";
    case EnvelopeKind::Lower: return "lower";
    case EnvelopeKind::Gradient: return "gradient";
  }
  return "";
}

// |d u / dr| with u = w / r, w' by centered differences
inline Eigen::VectorXd radial_gradient(const RadialField& f) {
  // centered differences of u = w/r, with the even extension through r = 0
  const Eigen::Index n = static_cast<Eigen::Index>(f.size());
  const double h = f.grid().spacing();
  Eigen::VectorXcd u(n + 2);
  for (Eigen::Index j = 0; j < n; ++j) u[j + 1] = f.u(static_cast<std::size_t>(j));
  u[0] = n > 1 ? (4.0 * u[1] - u[2]) / 3.0 : u[1];
  u[n + 1] = 0.0;
  Eigen::VectorXd out(n);
  for (Eigen::Index j = 0; j < n; ++j) out[j] = std::abs(u[j + 2] - u[j]) / (2.0 * h);
  return out;
}

// Match C at r_match, then compare value and C exp(-sqrt(A) r) on [r_match, end_fraction R].
inline EnvelopeReport check_envelopes(const BranchPoint& bp, double A, EnvelopeKind kind, double r_match, double end_fraction = 0.8) {
  const auto& grid = bp.psi_E.grid();
  const auto& r = grid.nodes();
  const Eigen::VectorXd value = kind == EnvelopeKind::Gradient ? radial_gradient(bp.psi_E)
                                                               : Eigen::VectorXd(bp.psi_E.values().cwiseAbs().cwiseQuotient(r));
  EnvelopeReport rep;
  rep.kind = kind;
  rep.A = A;
  rep.r_end = end_fraction * grid.radius();
  Eigen::Index j0 = 0;
  while (j0 < r.size() && r[j0] < r_match) ++j0;
  if (j0 >= r.size()) throw ConfigInvalid("envelope matching radius outside the grid");
  rep.r_match = r[j0];
  const double k = std::sqrt(A);
  const double logc = std::log(value[j0]) + k * r[j0];
  rep.C = std::exp(logc);
  for (Eigen::Index j = j0; j < r.size() && r[j] <= rep.r_end; ++j) {
    const double log_env = logc - k * r[j];
    const double log_val = std::log(value[j]);
    const double m = kind == EnvelopeKind::Lower ? log_val - log_env : log_env - log_val;
    rep.radii.push_back(r[j]);
    rep.margins.push_back(m);
    rep.min_margin = std::min(rep.min_margin, m);
    if (m < -1e-9) ++rep.violations;
  }
  return rep;
}

inline void write_branch_csv(std::ostream& out, const Branch& b, double r_match, const std::string& manifest_hash) {
  out << "# manifest " << manifest_hash << '\n';
  out << "abs_a,E,h_l2,h_linf,residual,margin_upper,margin_lower,margin_gradient\n";
  out.precision(17);
  for (const auto& p : b.points) {
    const double e = std::abs(p.E);
    const auto up = check_envelopes(p, 0.9 * e, EnvelopeKind::Upper, r_match);
    const auto lo = check_envelopes(p, 1.1 * e, EnvelopeKind::Lower, r_match);
    const auto gr = check_envelopes(p, 0.9 * e, EnvelopeKind::Gradient, r_match);
    out << std::abs(p.a) << ',' << p.E << ',' << l2_norm(p.h) << ',' << lp_norm(p.h, kInf) << ',' << p.residual << ','
        << up.min_margin << ',' << lo.min_margin << ',' << gr.min_margin << '\n';
  }
}

}  // namespace nlsgs
