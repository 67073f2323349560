#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlsgs/dynamics.hpp"
#include "nlsgs/modulation.hpp"

namespace nlsgs {

enum class DecayCase { I, II, III };

inline const char* case_name(DecayCase c) {
  switch (c) {
    case DecayCase::I: return "i";
    case DecayCase::II: return "ii";
    case DecayCase::III: return "iii";
  }
  return "?";
}

struct PredictedExponents {
  double p1 = 0.0, p2 = 0.0;
  double exp_p1 = 0.0, exp_p2 = 0.0;
  bool log_correction = false;
  DecayCase label = DecayCase::I;
};

inline double case_threshold(double alpha2) { return 2.0 * alpha2 / (3.0 * (3.0 + alpha2)); }

inline DecayCase decay_case(const NonlinearitySpec& spec) {
  const double th = case_threshold(spec.alpha2);
  if (std::abs(spec.alpha1 - th) <= 1e-12) return DecayCase::II;
  return spec.alpha1 < th ? DecayCase::III : DecayCase::I;
}

inline PredictedExponents predicted_exponents(const NonlinearitySpec& spec) {
  PredictedExponents p;
  p.p1 = 3.0 + spec.alpha1;
  p.p2 = 3.0 + spec.alpha2;
  p.exp_p1 = 3.0 * (0.5 - 1.0 / p.p1);
  p.label = decay_case(spec);
  p.log_correction = p.label == DecayCase::II;
  p.exp_p2 = p.label == DecayCase::III ? (1.0 + 3.0 * spec.alpha1) / 2.0 : 3.0 * (0.5 - 1.0 / p.p2);
  return p;
}

enum class DecayModel { Power, PowerLog };
enum class TimeAxis { OnePlusT, T };  // regress on log(1+t) or on log t

struct DecayFit {
  double t_lo = 0.0, t_hi = 0.0;
  double exponent = 0.0;  // value ~ C (1+t)^{-exponent}
  double prefactor = 0.0;
  bool log_correction = false;
  double r_squared = 0.0;
  bool accepted = false;  // r^2 >= 0.95
  int points = 0;
  double predicted = std::numeric_limits<double>::quiet_NaN();
  std::string case_label;
};

// The log model divides out log(2+t) with unit coefficient before the power fit.
inline DecayFit fit_decay_exponent(const std::vector<double>& t, const std::vector<double>& v, double t_lo, double t_hi,
                                   DecayModel model = DecayModel::Power, TimeAxis axis = TimeAxis::OnePlusT) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < t.size() && i < v.size(); ++i) {
    if (t[i] < t_lo || t[i] > t_hi || !(v[i] > 0.0) || !std::isfinite(v[i])) continue;
    const double tt = axis == TimeAxis::OnePlusT ? 1.0 + t[i] : t[i];
    if (!(tt > 0.0)) continue;
    double val = v[i];
    if (model == DecayModel::PowerLog) val /= std::log(2.0 + t[i]);
    x.push_back(std::log(tt));
    y.push_back(std::log(val));
  }
  if (x.size() < 10) throw InsufficientSamples("decay fit needs at least 10 points in the window");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  DecayFit f;
  f.t_lo = t_lo;
  f.t_hi = t_hi;
  f.points = static_cast<int>(x.size());
  f.log_correction = model == DecayModel::PowerLog;
  const double slope = sxy / sxx;
  f.exponent = -slope;
  f.prefactor = std::exp(my - slope * mx);
  f.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  f.accepted = f.r_squared >= 0.95;
  return f;
}

// [5, min(0.6 R / 2, t_final)]
inline std::pair<double, double> default_fit_window(double radius, double t_final) { return {5.0, std::min(0.3 * radius, t_final)}; }

inline nlohmann::ordered_json to_json(const DecayFit& f) {
  nlohmann::ordered_json j{{"window", {f.t_lo, f.t_hi}},     {"exponent", f.exponent}, {"prefactor", f.prefactor},
                           {"log_correction", f.log_correction}, {"r_squared", f.r_squared}, {"accepted", f.accepted},
                           {"points", f.points}};
  if (std::isfinite(f.predicted)) j["predicted"] = f.predicted;
  if (!f.case_label.empty()) j["case_label"] = f.case_label;
  return j;
}

// Gaussian times a random quadratic in r, random center and width; unit L^2 norm.
inline RadialField random_probe_field(const GridPtr& g, SplitMix64& rng, double max_center = 3.0) {
  const double c = rng.uniform(0.0, max_center), w = rng.uniform(0.7, 1.8);
  const cplx c0(rng.normal(), rng.normal()), c1(rng.normal(), rng.normal()), c2(rng.normal(), rng.normal());
  const auto f = RadialField::from_profile(g, [&](double r) {
    const double x = r / w;
    return (c0 + c1 * x + 0.5 * c2 * x * x) * std::exp(-(r - c) * (r - c) / (2 * w * w));
  });
  return (1.0 / l2_norm(f)) * f;
}

// Smoothed, continuous-spectrum probe vectors as columns.
inline Eigen::MatrixXcd probe_vectors(const SpectralData& s, int count, SplitMix64& rng, double smoothing = 1.0) {
  Eigen::MatrixXcd out(static_cast<Eigen::Index>(s.size()), count);
  for (int k = 0; k < count; ++k) {
    const auto v = heat_smooth(random_probe_field(s.grid, rng), smoothing, s);
    out.col(k) = ((1.0 / l2_norm(v)) * v).values();
  }
  return out;
}

enum class OmegaProbeKind { Weighted, LpLp, LqL2, L2, TL2 };

inline const char* probe_kind_name(OmegaProbeKind k) {
  switch (k) {
    case OmegaProbeKind::Weighted: return "weighted";
    case OmegaProbeKind::LpLp: return "lp_lp";
    case OmegaProbeKind::LqL2: return "lq_l2";
    case OmegaProbeKind::L2: return "l2";
    case OmegaProbeKind::TL2: return "t_l2";
  }
  return "?";
}

inline OmegaProbeKind parse_probe_kind(const std::string& s) {
  for (auto k : {OmegaProbeKind::Weighted, OmegaProbeKind::LpLp, OmegaProbeKind::LqL2, OmegaProbeKind::L2, OmegaProbeKind::TL2})
    if (s == probe_kind_name(k)) return k;
  throw ConfigInvalid("unknown probe kind '" + s + "'");
}

struct OmegaProbeOptions {
  OmegaProbeKind kind = OmegaProbeKind::Weighted;
  double p = 2.0;      // target exponent for lp_lp and lq_l2
  double sigma = 2.0;  // weight for the weighted kind
  double dt = 0.1;
  double start = 0.0;  // s
  std::vector<double> times;  // elapsed t - s, ascending
  std::pair<double, double> window{5.0, 36.0};
};

struct OmegaProbe {
  OmegaProbeOptions options;
  std::vector<double> elapsed;
  std::vector<double> ratio;  // max over vectors of target / source norm
  DecayFit fit;
  double slope = 0.0;  // d log ratio / d log t, for the boundedness kinds
  double predicted = std::numeric_limits<double>::quiet_NaN();
};

inline double probe_predicted(const OmegaProbeOptions& o) {
  switch (o.kind) {
    case OmegaProbeKind::Weighted: return 1.5;
    case OmegaProbeKind::LpLp: return 3.0 * (0.5 - 1.0 / o.p);
    default: return 0.0;
  }
}

// Omega(s + t_k, s) applied to a batch of w-space columns, one matrix per elapsed time.
inline std::vector<Eigen::MatrixXcd> omega_trajectory(const Eigen::MatrixXcd& vectors, const BranchPath& path, const SpectralData& sd,
                                                      const NonlinearitySpec& spec, const std::vector<double>& times, double dt,
                                                      double start = 0.0) {
  if (times.empty()) throw ConfigInvalid("probe needs at least one time");
  std::vector<Eigen::MatrixXcd> out;
  Eigen::MatrixXcd z = vectors;
  double now = 0.0;
  for (double t : times) {
    z = evolve_linearized(z, start + now, start + t, path, sd, spec, dt);
    now = t;
    out.push_back(z);
  }
  return out;
}

// Ratios are maxima over the batch; the caller puts the vectors in the
// invariant radiation subspace at a(s).
inline OmegaProbe omega_probe_from(const std::vector<Eigen::MatrixXcd>& trajectory, const Eigen::MatrixXcd& vectors, const SpectralData& sd,
                                   const OmegaProbeOptions& o) {
  if (trajectory.size() != o.times.size()) throw ConfigInvalid("probe times do not match the trajectory");
  OmegaProbe out;
  out.options = o;
  out.predicted = probe_predicted(o);
  const auto& grid = sd.grid;
  const double pp = o.p / (o.p - 1.0);  // dual exponent
  std::vector<double> source(static_cast<std::size_t>(vectors.cols()));
  std::vector<RadialField> projected;
  for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
    const RadialField v(grid, vectors.col(k));
    switch (o.kind) {
      case OmegaProbeKind::Weighted: source[k] = weighted_l2_norm(v, o.sigma); break;
      case OmegaProbeKind::LpLp:
      case OmegaProbeKind::LqL2: source[k] = lp_norm(v, pp); break;
      default: source[k] = l2_norm(v);
    }
    projected.push_back(project_continuous(v, sd));
  }
  const bool needs_bare = o.kind == OmegaProbeKind::LqL2 || o.kind == OmegaProbeKind::TL2;
  for (std::size_t i = 0; i < o.times.size(); ++i) {
    const double t = o.times[i];
    const auto& z = trajectory[i];
    Eigen::MatrixXcd bare;
    if (needs_bare) {
      Eigen::MatrixXcd pc(z.rows(), z.cols());
      for (Eigen::Index k = 0; k < z.cols(); ++k) pc.col(k) = projected[k].values();
      bare = propagate_H(pc, t, sd);
    }
    double worst = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const RadialField om(grid, z.col(k));
      double val = 0.0;
      switch (o.kind) {
        case OmegaProbeKind::Weighted: val = weighted_l2_norm(om, -o.sigma); break;
        case OmegaProbeKind::LpLp: val = lp_norm(om, o.p); break;
        case OmegaProbeKind::L2: val = l2_norm(om); break;
        case OmegaProbeKind::LqL2:
        case OmegaProbeKind::TL2: val = l2_norm(project_continuous(om, sd) - RadialField(grid, bare.col(k))); break;
      }
      worst = std::max(worst, val / source[k]);
    }
    out.elapsed.push_back(t);
    out.ratio.push_back(worst);
  }
  out.fit = fit_decay_exponent(out.elapsed, out.ratio, o.window.first, o.window.second, DecayModel::Power, TimeAxis::T);
  out.fit.predicted = out.predicted;
  out.slope = -out.fit.exponent;
  return out;
}

inline OmegaProbe omega_decay_probe(const Eigen::MatrixXcd& vectors, const BranchPath& path, const SpectralData& sd,
                                    const NonlinearitySpec& spec, const OmegaProbeOptions& o) {
  return omega_probe_from(omega_trajectory(vectors, path, sd, spec, o.times, o.dt, o.start), vectors, sd, o);
}

inline nlohmann::ordered_json to_json(const OmegaProbe& p) {
  nlohmann::ordered_json j;
  j["kind"] = probe_kind_name(p.options.kind);
  j["p"] = p.options.p;
  j["sigma"] = p.options.sigma;
  j["dt"] = p.options.dt;
  j["start"] = p.options.start;
  j["fit"] = to_json(p.fit);
  if (std::isfinite(p.predicted) && p.predicted > 0.0) {
    j["predicted_exponent"] = p.predicted;
  } else {
    j["slope"] = p.slope;
    j["max_ratio"] = *std::max_element(p.ratio.begin(), p.ratio.end());
  }
  return j;
}

// One-sided bound probe: every sampled ratio must stay below bound * (1 + tolerance).
struct ProbeReport {
  std::string kind;
  std::string bound_formula;
  nlohmann::ordered_json parameters;
  std::vector<double> t, p, ratio, bound;
  int violations = 0;
  int alternate_violations = -1;  // re-test under the other 2 pi placement; -1 when not needed
  double min_margin = kInf;       // min of bound / ratio
  double tolerance = 0.05;
  bool passed() const { return violations == 0 || alternate_violations == 0; }

  void add(double time, double exponent, double r, double b) {
    t.push_back(time);
    p.push_back(exponent);
    ratio.push_back(r);
    bound.push_back(b);
    if (r > b * (1.0 + tolerance)) ++violations;
    if (r > 0.0) min_margin = std::min(min_margin, b / r);
  }
};

inline nlohmann::ordered_json to_json(const ProbeReport& r) {
  double max_ratio = 0.0;
  for (double x : r.ratio) max_ratio = std::max(max_ratio, x);
  nlohmann::ordered_json j{{"kind", r.kind},
                           {"parameters", r.parameters},
                           {"bound", r.bound_formula},
                           {"samples", r.ratio.size()},
                           {"max_ratio", max_ratio},
                           {"violations", r.violations},
                           {"min_margin", std::isfinite(r.min_margin) ? nlohmann::json(r.min_margin) : nlohmann::json(nullptr)},
                           {"tolerance", r.tolerance}};
  if (r.alternate_violations >= 0) j["alternate_convention_violations"] = r.alternate_violations;
  j["passed"] = r.passed();
  return j;
}

// ||fhat||_1 of a real radial function given by its values u(r_j)
inline double fourier_l1_norm(const Eigen::VectorXd& u, const RadialGrid& grid, const SineTransform& dst) {
  return fourier_l1(radial_fourier(u, grid, dst));
}

// (2 pi)^{3/2} rescaling of ||fhat||_1 under the unitary transform convention
inline constexpr double kAlternateFourierFactor = 15.749609945722419;

struct JssOptions {
  double t_max = 1.0;
  std::vector<double> p{2.0, 4.0};
  int samples = 100;
  double tolerance = 0.05;
  std::vector<double> fixed_times;  // cycled instead of uniform draws when nonempty
};

// Samples ||U(t) W U(t)^* f||_p / ||f||_p against exp(2 ||Vhat||_1 t) ||What||_1,
// with U(t) = propagate(., t).
template <class Propagate>
ProbeReport jss_probe_with(Propagate&& propagate, double v_l1, const Eigen::VectorXd& multiplier, const GridPtr& grid,
                           const SineTransform& dst, const JssOptions& o, SplitMix64& rng) {
  const double w_l1 = fourier_l1_norm(multiplier, *grid, dst);
  ProbeReport rep;
  rep.kind = "jss";
  rep.tolerance = o.tolerance;
  rep.bound_formula = "exp(2 ||Vhat||_1 t) ||What||_1";
  rep.parameters = {{"t_max", o.t_max}, {"p", o.p}, {"samples", o.samples}, {"vhat_l1", v_l1}, {"what_l1", w_l1},
                    {"convention", kFourierConvention}};
  std::vector<double> raw;
  for (int i = 0; i < o.samples; ++i) {
    const auto f = random_probe_field(grid, rng);
    const double t = o.fixed_times.empty() ? rng.uniform(0.0, o.t_max) : o.fixed_times[static_cast<std::size_t>(i) % o.fixed_times.size()];
    Eigen::VectorXcd mw = propagate(f, -t).values();
    for (Eigen::Index j = 0; j < mw.size(); ++j) mw[j] *= multiplier[j];
    const RadialField g = propagate(RadialField(grid, std::move(mw)), t);
    for (double p : o.p) {
      const double r = lp_norm(g, p) / lp_norm(f, p);
      rep.add(t, p, r, std::exp(2.0 * v_l1 * t) * w_l1);
      raw.push_back(r);
    }
  }
  if (rep.violations > 0) {
    rep.alternate_violations = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double b = std::exp(2.0 * kAlternateFourierFactor * v_l1 * rep.t[i]) * kAlternateFourierFactor * w_l1;
      if (raw[i] > b * (1.0 + o.tolerance)) ++rep.alternate_violations;
    }
  }
  return rep;
}

inline ProbeReport jss_probe(const Eigen::VectorXd& multiplier, const SpectralData& sd, const JssOptions& o, SplitMix64& rng) {
  const double v_l1 = fourier_l1_norm(sd.potential_values, *sd.grid, *sd.sine);
  return jss_probe_with([&](const RadialField& f, double t) { return propagate_H(f, t, sd); }, v_l1, multiplier, sd.grid, *sd.sine, o, rng);
}

// g'(|psi|) as a multiplier in u-space
inline Eigen::VectorXd gprime_multiplier(const RadialField& psi, const NonlinearitySpec& spec) {
  const auto& r = psi.grid().nodes();
  Eigen::VectorXd w(r.size());
  for (Eigen::Index j = 0; j < r.size(); ++j) w[j] = spec.dg(std::abs(psi.values()[j]) / r[j]);
  return w;
}

struct WaveOperatorOptions {
  double t_max = 1.0;
  std::vector<double> p{2.0, 4.0};
  int samples = 30;
  double tolerance = 0.05;
  std::vector<double> fixed_times;
};

// ||e^{-iHt} e^{-i Delta t} f||_p / ||f||_p against exp(||Vhat||_1 |t|)
inline ProbeReport wave_operator_probe(const SpectralData& sd, const WaveOperatorOptions& o, SplitMix64& rng) {
  const auto& grid = *sd.grid;
  const double v_l1 = fourier_l1_norm(sd.potential_values, grid, *sd.sine);
  ProbeReport rep;
  rep.kind = "wave_operator";
  rep.tolerance = o.tolerance;
  rep.bound_formula = "exp(||Vhat||_1 |t|)";
  rep.parameters = {{"t_max", o.t_max}, {"p", o.p}, {"samples", o.samples}, {"vhat_l1", v_l1}};
  for (int i = 0; i < o.samples; ++i) {
    const auto f = random_probe_field(sd.grid, rng);
    const double t = o.fixed_times.empty() ? rng.uniform(0.0, o.t_max) : o.fixed_times[static_cast<std::size_t>(i) % o.fixed_times.size()];
    const RadialField q = propagate_H(propagate_free(f, -t, *sd.sine), t, sd);
    for (double p : o.p) rep.add(t, p, lp_norm(q, p) / lp_norm(f, p), std::exp(v_l1 * std::abs(t)));
  }
  return rep;
}

}  // namespace nlsgs
