#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nlsgs/modulation.hpp"

namespace nlsgs {

enum class Scheme { Kinetic, Spectral };

struct Absorber {
  bool enabled = false;
  double strength = 1.0;
  double onset_fraction = 0.75;  // r0 / R
};

struct EvolverConfig {
  double dt = 0.01;
  double t_final = 10.0;
  Absorber absorber;
  int record_stride = 10;
  bool decompose_each_record = false;
  Scheme scheme = Scheme::Kinetic;
  std::vector<double> snapshot_times;
  std::filesystem::path snapshot_dir;

  void validate(const RadialGrid& grid) const {
    if (!(dt > 0.0)) throw ConfigInvalid("dt must be positive");
    if (!(t_final >= 0.0)) throw ConfigInvalid("t_final must be non-negative");
    if (record_stride < 1) throw ConfigInvalid("record_stride must be at least 1");
    if (absorber.enabled && !(absorber.onset_fraction > 0.0 && absorber.onset_fraction < 1.0))
      throw ConfigInvalid("absorber onset radius must lie inside the domain");
    if (absorber.enabled && !(absorber.strength >= 0.0)) throw ConfigInvalid("absorber strength must be non-negative");
    (void)grid;
  }
};

// W(r) = strength ((r - r0)/(R - r0))^4 beyond r0
inline Eigen::VectorXd absorber_profile(const RadialGrid& grid, const Absorber& a) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  if (!a.enabled) return w;
  const double r0 = a.onset_fraction * grid.radius();
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double r = grid.nodes()[j];
    if (r > r0) w[j] = a.strength * std::pow((r - r0) / (grid.radius() - r0), 4);
  }
  return w;
}

// One Strang step of i u_t = (-Delta + V) u + g(u) - i W u.
class NlsStepper {
 public:
  NlsStepper(GridPtr grid, Eigen::VectorXd potential, NonlinearitySpec spec, const Absorber& absorber, Scheme scheme = Scheme::Kinetic,
             SpectralPtr spectral = nullptr)
      : grid_(std::move(grid)), v_(std::move(potential)), spec_(spec), w_(absorber_profile(*grid_, absorber)), scheme_(scheme),
        spectral_(std::move(spectral)), dst_(dst_diagonalize(*grid_)) {
    if (scheme_ == Scheme::Spectral && !spectral_) throw ConfigInvalid("spectral scheme needs an eigenbasis");
  }

  NlsStepper(const SpectralPtr& s, NonlinearitySpec spec, const Absorber& absorber = {}, Scheme scheme = Scheme::Kinetic)
      : NlsStepper(s->grid, s->potential_values, spec, absorber, scheme, s) {}

  // V = 0, no bound state needed
  static NlsStepper free(GridPtr grid, NonlinearitySpec spec, const Absorber& absorber = {}) {
    const auto n = static_cast<Eigen::Index>(grid->size());
    return NlsStepper(std::move(grid), Eigen::VectorXd::Zero(n), spec, absorber);
  }

  const RadialGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  const NonlinearitySpec& nonlinearity() const { return spec_; }

  // exact flow of the pointwise part over tau: potential (kinetic scheme), g-phase, absorber
  void pointwise(Eigen::VectorXcd& w, double tau) const {
    const auto& r = grid_->nodes();
    const bool with_v = scheme_ == Scheme::Kinetic;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double s0 = std::abs(w[j]) / r[j], damp = w_[j];
      double phase = with_v ? v_[j] * tau : 0.0;
      if (s0 > 0.0) {
        auto term = [&](double lambda, double alpha) {
          if (lambda == 0.0) return 0.0;
          const double rate = (1.0 + alpha) * damp;
          const double t_eff = rate > 0.0 ? -std::expm1(-rate * tau) / rate : tau;
          return lambda * std::pow(s0, 1.0 + alpha) * t_eff;
        };
        phase += term(spec_.lambda1, spec_.alpha1) + term(spec_.lambda2, spec_.alpha2);
      }
      w[j] *= std::polar(damp > 0.0 ? std::exp(-damp * tau) : 1.0, -phase);
    }
  }

  void linear(Eigen::VectorXcd& w, double tau) const {
    if (scheme_ == Scheme::Kinetic) {
      w = dst_->propagate(w, tau);
    } else {
      w = propagate_H(Eigen::MatrixXcd(w), tau, *spectral_).col(0);
    }
  }

  void step(Eigen::VectorXcd& w, double dt) const {
    pointwise(w, 0.5 * dt);
    linear(w, dt);
    pointwise(w, 0.5 * dt);
  }

  RadialField advance(const RadialField& u, double t, double dt) const {
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) / dt - 1e-9)));
    const double h = t / n;
    Eigen::VectorXcd w = u.values();
    for (int k = 0; k < n; ++k) step(w, h);
    return {u.grid_ptr(), std::move(w)};
  }

  double mass(const RadialField& u) const { return std::pow(l2_norm(u), 2); }

  // <u, (-Delta_h + V) u> + 4 pi int G(|u|) r^2 dr
  double energy(const RadialField& u) const {
    const double c = 4.0 * kPi * grid_->spacing();
    const Eigen::VectorXcd lap = dst_->laplacian(u.values());
    double e = c * (u.values().dot(lap)).real();
    const auto& r = grid_->nodes();
    for (Eigen::Index j = 0; j < r.size(); ++j) {
      const double a = std::abs(u.values()[j]);
      e += c * (v_[j] * a * a + r[j] * r[j] * spec_.potential_density(a / r[j]));
    }
    return e;
  }

 private:
  GridPtr grid_;
  Eigen::VectorXd v_;
  NonlinearitySpec spec_;
  Eigen::VectorXd w_;
  Scheme scheme_;
  SpectralPtr spectral_;
  std::shared_ptr<const SineTransform> dst_;
};

// Cumulative integral of samples on a nonuniform grid, piecewise quadratic.
inline std::vector<double> cumulative_integral(const std::vector<double>& t, const std::vector<double>& f) {
  const std::size_t n = t.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  if (n == 2) {
    out[1] = 0.5 * (t[1] - t[0]) * (f[0] + f[1]);
    return out;
  }
  for (std::size_t i = 1; i < n; ++i) {
    double piece;
    if (i == 1) {  // [t0, t1] from the quadratic through t0, t1, t2
      const double h0 = t[1] - t[0], h1 = t[2] - t[1];
      piece = f[0] * (h0 * h0 / 3 + h1 * h0 / 2) / (h0 + h1) + f[1] * (h0 * h0 / (6 * h1) + h0 / 2) - f[2] * h0 * h0 * h0 / (6 * h1 * (h0 + h1));
    } else {  // [t_{i-1}, t_i] from t_{i-2}, t_{i-1}, t_i
      const double h0 = t[i - 1] - t[i - 2], h1 = t[i] - t[i - 1];
      piece = -f[i - 2] * h1 * h1 * h1 / (6 * h0 * (h0 + h1)) + f[i - 1] * (h1 * h1 / (6 * h0) + h1 / 2) + f[i] * (h1 * h1 / 3 + h0 * h1 / 2) / (h0 + h1);
    }
    out[i] = out[i - 1] + piece;
  }
  return out;
}

// theta(t) = (1/t) int_0^t (E(s) - E_inf) ds, zero at t = 0
inline std::vector<double> theta_series(const std::vector<double>& t, const std::vector<double>& e, double e_inf) {
  std::vector<double> shifted(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) shifted[i] = e[i] - e_inf;
  auto integral = cumulative_integral(t, shifted);
  for (std::size_t i = 0; i < t.size(); ++i) integral[i] = t[i] > 0.0 ? integral[i] / t[i] : 0.0;
  return integral;
}

struct TrajectoryRecord {
  double p1 = 4.0, p2 = 4.0;
  std::vector<double> times;
  std::vector<cplx> a;
  std::vector<double> E;
  std::vector<double> eta_l2, eta_p1, eta_p2;
  std::vector<double> beta1, beta2;
  std::vector<double> pairing_defect;  // max |Re<pairing_j, eta>| / (max(||eta||, 1e-6 ||u||) ||dpsi||)
  std::vector<double> phase_integral;
  std::vector<double> theta;
  std::vector<double> mass, energy;
  std::vector<double> edge_fraction;  // mass share beyond 0.9 R
  std::vector<double> gaps;           // record times where decomposition failed
  std::optional<double> E_limit;
  bool absorber = false;
  RadialField final_field;

  std::size_t size() const { return times.size(); }
};

inline double edge_mass_fraction(const RadialField& u, double fraction = 0.9) {
  const auto& g = u.grid();
  double edge = 0.0, total = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double m = std::norm(u.values()[static_cast<Eigen::Index>(j)]);
    total += m;
    if (g.node(j) > fraction * g.radius()) edge += m;
  }
  return total > 0.0 ? edge / total : 0.0;
}

inline TrajectoryRecord evolve_nls(const RadialField& u0, const EvolverConfig& cfg, const NlsStepper& stepper,
                                   const BranchContext* branch = nullptr) {
  cfg.validate(u0.grid());
  if (cfg.decompose_each_record && !branch) throw ConfigInvalid("decomposition needs a branch context");
  const auto& spec = stepper.nonlinearity();
  TrajectoryRecord rec;
  rec.p1 = 3.0 + spec.alpha1;
  rec.p2 = 3.0 + spec.alpha2;
  rec.absorber = cfg.absorber.enabled;
  const int steps = static_cast<int>(std::llround(cfg.t_final / cfg.dt));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> snaps = cfg.snapshot_times;
  std::sort(snaps.begin(), snaps.end());
  std::size_t next_snap = 0;

  auto record = [&](const RadialField& u, double t) {
    rec.times.push_back(t);
    rec.mass.push_back(stepper.mass(u));
    rec.energy.push_back(stepper.energy(u));
    rec.edge_fraction.push_back(edge_mass_fraction(u));
    if (!cfg.decompose_each_record) return;
    try {
      const auto d = decompose(u, *branch);
      const auto rates = modulation_rhs(d.point, d.eta, spec);
      rec.a.push_back(d.a);
      rec.E.push_back(d.point.E);
      rec.eta_l2.push_back(l2_norm(d.eta));
      rec.eta_p1.push_back(lp_norm(d.eta, rec.p1));
      rec.eta_p2.push_back(lp_norm(d.eta, rec.p2));
      rec.beta1.push_back(rates.beta1);
      rec.beta2.push_back(rates.beta2);
      // a remainder below 1e-6 ||u|| is branch-solve noise; its direction carries no information
      const double en = std::max(l2_norm(d.eta), 1e-6 * l2_norm(u));
      rec.pairing_defect.push_back(std::max(std::abs(d.residuals[0]) / (en * l2_norm(d.point.d_psi_da2)),
                                            std::abs(d.residuals[1]) / (en * l2_norm(d.point.d_psi_da1))));
    } catch (const Error&) {
      rec.gaps.push_back(t);
      rec.a.push_back({nan, nan});
      for (auto* v : {&rec.E, &rec.eta_l2, &rec.eta_p1, &rec.eta_p2, &rec.beta1, &rec.beta2, &rec.pairing_defect}) v->push_back(nan);
    }
  };
  auto maybe_snapshot = [&](const RadialField& u, double t) {
    while (next_snap < snaps.size() && snaps[next_snap] <= t + 0.5 * cfg.dt) {
      if (!cfg.snapshot_dir.empty()) {
        std::filesystem::create_directories(cfg.snapshot_dir);
        char name[64];
        std::snprintf(name, sizeof name, "snapshot_t%010.4f", snaps[next_snap]);
        write_snapshot(cfg.snapshot_dir / name, u, t, {{"kind", "nls"}});
      }
      ++next_snap;
    }
  };

  Eigen::VectorXcd w = u0.values();
  record(u0, 0.0);
  maybe_snapshot(u0, 0.0);
  for (int k = 1; k <= steps; ++k) {
    stepper.step(w, cfg.dt);
    const double t = k * cfg.dt;
    if (k % cfg.record_stride == 0 || k == steps) {
      const RadialField u(u0.grid_ptr(), w);
      record(u, t);
    }
    if (next_snap < snaps.size()) maybe_snapshot(RadialField(u0.grid_ptr(), w), t);
  }
  rec.final_field = RadialField(u0.grid_ptr(), std::move(w));

  if (cfg.decompose_each_record) {
    // E is carried through gaps so the phase integral stays defined
    std::vector<double> e = rec.E;
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!std::isfinite(e[i])) e[i] = i > 0 ? e[i - 1] : branch->spectral().ground_energy;
    rec.phase_integral = cumulative_integral(rec.times, e);
  }
  return rec;
}

struct Asymptotics {
  double E_inf = 0.0;
  std::vector<double> theta;  // per record; NaN outside the clean window and at gaps
  bool converged = false;
  std::size_t window_end = 0;  // records [0, window_end) are boundary-clean
};

// Tail average of E over the final third of the clean window and the phase defect theta(t).
inline Asymptotics extract_asymptotics(const TrajectoryRecord& rec, double edge_tolerance = 1e-6) {
  if (rec.E.size() != rec.times.size()) throw WindowNotFound("trajectory has no decomposition records");
  std::size_t end = rec.times.size();
  if (!rec.absorber) {
    for (std::size_t i = 0; i < rec.edge_fraction.size(); ++i)
      if (rec.edge_fraction[i] > edge_tolerance) {
        end = i;
        break;
      }
  }
  std::vector<double> t, e;
  std::vector<std::size_t> at_record;
  for (std::size_t i = 0; i < end; ++i)
    if (std::isfinite(rec.E[i])) {
      t.push_back(rec.times[i]);
      e.push_back(rec.E[i]);
      at_record.push_back(i);
    }
  if (t.size() < 6) throw WindowNotFound("fewer than 6 clean decomposition records");
  Asymptotics out;
  out.window_end = end;
  const std::size_t start = 2 * t.size() / 3;
  double sum = 0.0;
  for (std::size_t i = start; i < t.size(); ++i) sum += e[i];
  out.E_inf = sum / static_cast<double>(t.size() - start);
  const auto theta = theta_series(t, e, out.E_inf);
  out.theta.assign(rec.times.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < t.size(); ++i) out.theta[at_record[i]] = theta[i];
  std::vector<double> tt, at;
  for (std::size_t i = start; i < t.size(); ++i) {
    tt.push_back(t[i]);
    at.push_back(std::abs(theta[i]));
  }
  double mt = 0, ma = 0;
  for (std::size_t i = 0; i < tt.size(); ++i) {
    mt += tt[i];
    ma += at[i];
  }
  mt /= tt.size();
  ma /= tt.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < tt.size(); ++i) {
    sxy += (tt[i] - mt) * (at[i] - ma);
    sxx += (tt[i] - mt) * (tt[i] - mt);
  }
  out.converged = sxx > 0 && sxy / sxx < 0.0;
  return out;
}

inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec, const std::vector<double>& theta, const std::string& hash) {
  os << "# manifest " << hash << "\n";
  os << "t,re_a,im_a,E,eta_l2,eta_p1,eta_p2,beta1,beta2,theta,mass,energy\n";
  os.precision(12);
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    const bool d = i < rec.a.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    os << rec.times[i] << ',' << (d ? rec.a[i].real() : nan) << ',' << (d ? rec.a[i].imag() : nan) << ',' << (d ? rec.E[i] : nan) << ','
       << (d ? rec.eta_l2[i] : nan) << ',' << (d ? rec.eta_p1[i] : nan) << ',' << (d ? rec.eta_p2[i] : nan) << ','
       << (d ? rec.beta1[i] : nan) << ',' << (d ? rec.beta2[i] : nan) << ',' << (i < theta.size() ? theta[i] : nan) << ','
       << rec.mass[i] << ',' << rec.energy[i] << '\n';
  }
}

// psi_E along a time-dependent branch path.
class BranchPath {
 public:
  enum class Kind { Frozen, Rotating, Recorded };

  static BranchPath frozen(const BranchPoint& bp) {
    BranchPath p;
    p.kind_ = Kind::Frozen;
    p.base_ = bp.psi_E;
    p.a0_ = bp.a;
    return p;
  }

  // exact periodic orbit a(t) = e^{-iE(t - t0)} a0
  static BranchPath rotating(const BranchPoint& bp, double t0 = 0.0) {
    BranchPath p = frozen(bp);
    p.kind_ = Kind::Rotating;
    p.E_ = bp.E;
    p.t0_ = t0;
    return p;
  }

  // a(t) from a trajectory; |a| and the unwrapped phase are interpolated linearly
  static BranchPath recorded(const BranchContext& ctx, const std::vector<double>& t, const std::vector<cplx>& a) {
    if (t.size() < 2 || t.size() != a.size()) throw ConfigInvalid("recorded path needs at least two samples");
    BranchPath p;
    p.kind_ = Kind::Recorded;
    p.times_ = t;
    double prev = std::arg(a[0]);
    RealBranchSolution warm;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double ph = std::arg(a[i]);
      if (i > 0) ph = prev + std::remainder(ph - prev, 2 * kPi);
      prev = ph;
      p.mod_.push_back(std::abs(a[i]));
      p.arg_.push_back(ph);
      const auto sol = ctx.solve_real(std::abs(a[i]), warm.rho > 0 ? &warm : nullptr);
      if (sol.rho > 0) warm = sol;
      p.profiles_.push_back(sol.psi);
    }
    p.grid_ = ctx.spectral().grid;
    return p;
  }

  Kind kind() const { return kind_; }

  cplx a_at(double t) const {
    switch (kind_) {
      case Kind::Frozen: return a0_;
      case Kind::Rotating: return std::polar(1.0, -E_ * (t - t0_)) * a0_;
      case Kind::Recorded: {
        const auto [i, w] = locate(t);
        return std::polar((1 - w) * mod_[i] + w * mod_[i + 1], (1 - w) * arg_[i] + w * arg_[i + 1]);
      }
    }
    return a0_;
  }

  RadialField psi_at(double t) const {
    switch (kind_) {
      case Kind::Frozen: return base_;
      case Kind::Rotating: return std::polar(1.0, -E_ * (t - t0_)) * base_;
      case Kind::Recorded: {
        const auto [i, w] = locate(t);
        const Eigen::VectorXd prof = (1 - w) * profiles_[i] + w * profiles_[i + 1];
        const cplx ph = std::polar(1.0, (1 - w) * arg_[i] + w * arg_[i + 1]);
        return {grid_, Eigen::VectorXcd(ph * prof.cast<cplx>())};
      }
    }
    return base_;
  }

 private:
  std::pair<std::size_t, double> locate(double t) const {
    if (t <= times_.front()) return {0, 0.0};
    if (t >= times_.back()) return {times_.size() - 2, 1.0};
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
    return {i, (t - times_[i]) / (times_[i + 1] - times_[i])};
  }

  Kind kind_ = Kind::Frozen;
  RadialField base_;
  cplx a0_;
  double E_ = 0.0, t0_ = 0.0;
  std::vector<double> times_, mod_, arg_;
  std::vector<Eigen::VectorXd> profiles_;
  GridPtr grid_;
};

// -i (H zeta + F1(psi(t)) zeta)
inline RadialField linearized_generator(const BranchPath& path, double t, const RadialField& zeta, const SpectralData& s,
                                        const NonlinearitySpec& spec) {
  const auto psi = path.psi_at(t);
  const Eigen::VectorXcd hz = s.op.apply(zeta.values()) + EffectivePotentials::at(psi, spec).apply(zeta.values());
  return {zeta.grid_ptr(), Eigen::VectorXcd(cplx(0, -1) * hz)};
}

// Exact flow of zeta' = -i F1(psi) zeta over tau per node, for each column.
inline void linearized_pointwise(Eigen::MatrixXcd& z, const RadialField& psi, const NonlinearitySpec& spec, double tau) {
  if (spec.vanishes()) return;
  const auto& r = psi.grid().nodes();
  for (Eigen::Index j = 0; j < z.rows(); ++j) {
    const cplx pw = psi.values()[j];
    const double rho = std::abs(pw) / r[j];
    if (rho == 0.0) continue;
    const double q = spec.ratio(rho), d = spec.dg(rho);
    const cplx ph = pw / std::abs(pw);
    // rotated coordinates (p, m): p' = q m, m' = -d p
    const double kappa = q * d;
    double c, sn;
    if (kappa > 0) {
      const double om = std::sqrt(kappa);
      c = std::cos(om * tau);
      sn = std::sin(om * tau) / om;
    } else if (kappa < 0) {
      const double om = std::sqrt(-kappa);
      c = std::cosh(om * tau);
      sn = std::sinh(om * tau) / om;
    } else {
      c = 1.0;
      sn = tau;
    }
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const cplx xi = std::conj(ph) * z(j, k);
      const double p = xi.real(), m = xi.imag();
      z(j, k) = ph * cplx(c * p + sn * q * m, c * m - sn * d * p);
    }
  }
}

// Omega(t, s) on a batch of w-space columns; Strang with exact e^{-iH h/2} halves.
inline Eigen::MatrixXcd evolve_linearized(const Eigen::MatrixXcd& v, double s, double t, const BranchPath& path, const SpectralData& sd,
                                          const NonlinearitySpec& spec, double dt) {
  if (t == s) return v;
  if (spec.vanishes()) return propagate_H(v, t - s, sd);
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t - s) / dt - 1e-9)));
  const double h = (t - s) / n;
  Eigen::MatrixXcd z = propagate_H(v, 0.5 * h, sd);
  for (int k = 0; k < n; ++k) {
    linearized_pointwise(z, path.psi_at(s + (k + 0.5) * h), spec, h);
    z = propagate_H(z, k + 1 < n ? h : 0.5 * h, sd);
  }
  return z;
}

inline RadialField evolve_linearized(const RadialField& v, double s, double t, const BranchPath& path, const SpectralData& sd,
                                     const NonlinearitySpec& spec, double dt) {
  return {v.grid_ptr(), evolve_linearized(Eigen::MatrixXcd(v.values()), s, t, path, sd, spec, dt).col(0)};
}

// T(t, s) v = P_c Omega(t, s) v - e^{-iH(t-s)} P_c v
inline RadialField apply_T(const RadialField& v, double s, double t, const BranchPath& path, const SpectralData& sd,
                           const NonlinearitySpec& spec, double dt) {
  if (t == s) return RadialField(v.grid_ptr());
  const auto omega = evolve_linearized(v, s, t, path, sd, spec, dt);
  return project_continuous(omega, sd) - propagate_H(project_continuous(v, sd), t - s, sd);
}

}  // namespace nlsgs
