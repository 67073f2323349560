#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <string>

#include "json.hpp"
#include "nlsgs/errors.hpp"
#include "nlsgs/radial_grid.hpp"

namespace nlsgs {

// g(s) = lambda1 |s|^{1+alpha1} s + lambda2 |s|^{1+alpha2} s, extended to
// complex arguments by g(e^{i theta} s) = e^{i theta} g(s).
struct NonlinearitySpec {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 0.0;

  void validate() const {
    if (!(alpha1 > 0.0 && alpha1 <= alpha2 && alpha2 < 3.0)) {
      throw InvalidExponent("nonlinearity exponents must satisfy 0 < alpha1 <= alpha2 < 3");
    }
  }

  bool vanishes() const { return lambda1 == 0.0 && lambda2 == 0.0; }

  // g(s)/s for s >= 0, evaluated without division
  double ratio(double s) const { return lambda1 * std::pow(s, 1.0 + alpha1) + lambda2 * std::pow(s, 1.0 + alpha2); }

  double g(double s) const { return ratio(std::abs(s)) * s; }

  double dg(double s) const {
    const double a = std::abs(s);
    return (2.0 + alpha1) * lambda1 * std::pow(a, 1.0 + alpha1) + (2.0 + alpha2) * lambda2 * std::pow(a, 1.0 + alpha2);
  }

  double d2g(double s) const {
    const double a = std::abs(s);
    const double v = (2.0 + alpha1) * (1.0 + alpha1) * lambda1 * std::pow(a, alpha1) +
                     (2.0 + alpha2) * (1.0 + alpha2) * lambda2 * std::pow(a, alpha2);
    return s < 0 ? -v : v;
  }

  // s > 0
  double d3g(double s) const {
    return (2.0 + alpha1) * (1.0 + alpha1) * alpha1 * lambda1 * std::pow(s, alpha1 - 1.0) +
           (2.0 + alpha2) * (1.0 + alpha2) * alpha2 * lambda2 * std::pow(s, alpha2 - 1.0);
  }

  // G with dG/d(conj u) = g(u): 2 lambda |u|^{3+alpha} / (3+alpha) per term
  double potential_density(double s) const {
    return 2.0 * lambda1 * std::pow(s, 3.0 + alpha1) / (3.0 + alpha1) + 2.0 * lambda2 * std::pow(s, 3.0 + alpha2) / (3.0 + alpha2);
  }
};

inline cplx evaluate_g(cplx z, const NonlinearitySpec& spec) { return spec.ratio(std::abs(z)) * z; }

inline nlohmann::ordered_json nonlinearity_manifest(const NonlinearitySpec& s) {
  return {{"alpha1", s.alpha1}, {"alpha2", s.alpha2}, {"lambda1", s.lambda1}, {"lambda2", s.lambda2}};
}

// g(u) as a w-space field: r g(w/r) = ratio(|w|/r) w
inline Eigen::VectorXcd g_values(const Eigen::VectorXcd& w, const RadialGrid& grid, const NonlinearitySpec& spec) {
  Eigen::VectorXcd out(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) out[j] = spec.ratio(std::abs(w[j]) / grid.nodes()[j]) * w[j];
  return out;
}

inline RadialField apply_g(const RadialField& f, const NonlinearitySpec& spec) {
  return {f.grid_ptr(), g_values(f.values(), f.grid(), spec)};
}

// F1(psi)[zeta] = g_u zeta + g_ubar conj(zeta), tabulated per node.
struct EffectivePotentials {
  Eigen::VectorXcd g_u;
  Eigen::VectorXcd g_ubar;

  static EffectivePotentials at(const Eigen::VectorXcd& psi_w, const RadialGrid& grid, const NonlinearitySpec& spec) {
    EffectivePotentials p;
    p.g_u.resize(psi_w.size());
    p.g_ubar.resize(psi_w.size());
    for (Eigen::Index j = 0; j < psi_w.size(); ++j) {
      const double rho = std::abs(psi_w[j]) / grid.nodes()[j];
      const double d = spec.dg(rho), q = spec.ratio(rho);
      const cplx phase = rho > 0.0 ? psi_w[j] / std::abs(psi_w[j]) : cplx(1.0);
      p.g_u[j] = 0.5 * (d + q);
      p.g_ubar[j] = 0.5 * (d - q) * phase * phase;
    }
    return p;
  }
  static EffectivePotentials at(const RadialField& psi, const NonlinearitySpec& spec) {
    return at(psi.values(), psi.grid(), spec);
  }

  Eigen::VectorXcd apply(const Eigen::VectorXcd& zeta_w) const {
    return g_u.cwiseProduct(zeta_w) + g_ubar.cwiseProduct(zeta_w.conjugate());
  }
};

inline RadialField apply_F1(const RadialField& psi, const RadialField& zeta, const NonlinearitySpec& spec) {
  return {psi.grid_ptr(), EffectivePotentials::at(psi, spec).apply(zeta.values())};
}

inline RadialField apply_F2(const RadialField& psi, const RadialField& eta, const NonlinearitySpec& spec) {
  const auto& grid = psi.grid();
  const Eigen::VectorXcd sum = psi.values() + eta.values();
  Eigen::VectorXcd out = g_values(sum, grid, spec) - g_values(psi.values(), grid, spec) -
                         EffectivePotentials::at(psi, spec).apply(eta.values());
  return {psi.grid_ptr(), std::move(out)};
}

// Radial 3D Fourier transform fhat(k) = (4 pi / k) int sin(kr) f(r) r dr on
// k_m = pi m / R, m = 1..N. Computed as one DST of the node samples r f(r).
struct RadialSpectrum {
  Eigen::VectorXd k;
  Eigen::VectorXd fhat;
  Eigen::VectorXd noise_floor;  // roundoff scale of each coefficient
};

inline RadialSpectrum radial_fourier(const Eigen::VectorXd& u_phys, const RadialGrid& grid, const SineTransform& dst) {
  const Eigen::Index n = u_phys.size();
  const double dr = grid.spacing();
  const Eigen::VectorXd rf = u_phys.cwiseProduct(grid.nodes());
  const Eigen::VectorXd y = dst.apply(rf) * std::sqrt(2.0 * static_cast<double>(n + 1)) * 0.5;  // sum_j sin(k r_j) r_j f_j
  const double mass = rf.cwiseAbs().sum();
  RadialSpectrum s;
  s.k.resize(n);
  s.fhat.resize(n);
  s.noise_floor.resize(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const double k = kPi * static_cast<double>(m + 1) / grid.radius();
    s.k[m] = k;
    s.fhat[m] = 4.0 * kPi / k * dr * y[m];
    s.noise_floor[m] = 4.0 * kPi / k * dr * mass * 1e-14;
  }
  return s;
}

// (2 pi)^{-3} int |fhat| d^3k = (1 / (2 pi^2)) int |fhat(k)| k^2 dk
inline double fourier_l1(const RadialSpectrum& s) {
  const double dk = s.k.size() > 1 ? s.k[1] - s.k[0] : 0.0;
  double sum = 0.0;
  for (Eigen::Index m = 0; m < s.k.size(); ++m) sum += std::abs(s.fhat[m]) * s.k[m] * s.k[m];
  return sum * dk / (2.0 * kPi * kPi);
}

inline constexpr const char* kFourierConvention =
    "fhat(k) = int f(x) e^{-ikx} d^3x; ||fhat||_1 = (2 pi)^{-3} int |fhat| d^3k, so ||fhat||_1 >= ||f||_inf";

struct TailFit {
  double slope = 0.0;       // d log(|fhat| k^2) / d log k on the resolved tail
  double k_resolved = 0.0;  // largest k above the roundoff floor
  bool integrable = false;
};

// Fit the last resolved decade of |fhat| k^2; integrable in k^2 dk iff the
// fitted power is below -1.
inline TailFit fit_fourier_tail(const RadialSpectrum& s) {
  TailFit t;
  Eigen::Index last = -1;
  for (Eigen::Index m = 0; m < s.k.size(); ++m) {
    if (std::abs(s.fhat[m]) > 1e3 * s.noise_floor[m]) last = m;
  }
  if (last < 0) {
    t.integrable = true;  // indistinguishable from zero
    t.slope = -kInf;
    return t;
  }
  t.k_resolved = s.k[last];
  const double klo = t.k_resolved / 10.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (Eigen::Index m = 0; m <= last; ++m) {
    if (s.k[m] < klo || std::abs(s.fhat[m]) <= s.noise_floor[m]) continue;
    const double x = std::log(s.k[m]), y = std::log(std::abs(s.fhat[m]) * s.k[m] * s.k[m]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
    ++n;
  }
  if (n < 3) {
    t.slope = -kInf;
    t.integrable = true;
    return t;
  }
  t.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  t.integrable = t.slope < -1.0;
  return t;
}

struct H2Report {
  double l1_norm_gprime_hat = 0.0;
  double l1_norm_gratio_hat = 0.0;
  TailFit gprime_tail;
  TailFit gratio_tail;
  bool finite_gprime = false;
  bool finite_gratio = false;
  bool finite() const { return finite_gprime && finite_gratio; }
};

inline H2Report check_H2(const RadialField& psi_e, const NonlinearitySpec& spec, const SineTransform& dst) {
  const auto& grid = psi_e.grid();
  const Eigen::Index n = static_cast<Eigen::Index>(grid.size());
  const double scale = psi_e.values().cwiseAbs().maxCoeff();
  Eigen::VectorXd gp(n), gr(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const cplx w = psi_e.values()[j];
    if (!(w.real() > 0.0) || std::abs(w.imag()) > 1e-12 * scale) {
      throw InvalidProfile("H2 check needs a strictly positive real profile");
    }
    const double u = w.real() / grid.nodes()[j];
    gp[j] = spec.dg(u);
    gr[j] = spec.ratio(u);
  }
  H2Report r;
  const auto sp = radial_fourier(gp, grid, dst);
  const auto sr = radial_fourier(gr, grid, dst);
  r.l1_norm_gprime_hat = fourier_l1(sp);
  r.l1_norm_gratio_hat = fourier_l1(sr);
  r.gprime_tail = fit_fourier_tail(sp);
  r.gratio_tail = fit_fourier_tail(sr);
  r.finite_gprime = r.gprime_tail.integrable && std::isfinite(r.l1_norm_gprime_hat);
  r.finite_gratio = r.gratio_tail.integrable && std::isfinite(r.l1_norm_gratio_hat);
  return r;
}

inline nlohmann::ordered_json to_json(const H2Report& r) {
  auto tail = [](const TailFit& t) {
    return nlohmann::ordered_json{{"slope", std::isfinite(t.slope) ? nlohmann::json(t.slope) : nlohmann::json("-inf")},
                                  {"k_resolved", t.k_resolved},
                                  {"integrable", t.integrable}};
  };
  return {{"l1_norm_gprime_hat", r.l1_norm_gprime_hat}, {"l1_norm_gratio_hat", r.l1_norm_gratio_hat},
          {"gprime_tail", tail(r.gprime_tail)},        {"gratio_tail", tail(r.gratio_tail)},
          {"finite_gprime", r.finite_gprime},          {"finite_gratio", r.finite_gratio},
          {"convention", kFourierConvention}};
}

struct BoundSample {
  double max_ratio = 0.0;  // max |lhs| / rhs over the samples
  bool holds() const { return max_ratio <= 1.0; }
};

// |g''(s)| <= C (s^a1 + s^a2), C = (2+a2)(1+a2)(|l1|+|l2|)
inline BoundSample sample_g2_bound(const NonlinearitySpec& spec, double smax, int samples = 1000) {
  const double c = (2.0 + spec.alpha2) * (1.0 + spec.alpha2) * (std::abs(spec.lambda1) + std::abs(spec.lambda2));
  BoundSample b;
  for (int i = 1; i <= samples; ++i) {
    const double s = smax * i / samples;
    const double rhs = c * (std::pow(s, spec.alpha1) + std::pow(s, spec.alpha2));
    b.max_ratio = std::max(b.max_ratio, std::abs(spec.d2g(s)) / rhs);
  }
  return b;
}

// |g'''(s)| <= C (s^{a1-1} + s^{a2-1}) on (0, smax], C = (2+a2)(1+a2) a2 (|l1|+|l2|)
inline BoundSample sample_g3_bound(const NonlinearitySpec& spec, double smax, int samples = 1000) {
  const double c = (2.0 + spec.alpha2) * (1.0 + spec.alpha2) * spec.alpha2 * (std::abs(spec.lambda1) + std::abs(spec.lambda2));
  BoundSample b;
  for (int i = 1; i <= samples; ++i) {
    const double s = smax * i / samples;
    const double rhs = c * (std::pow(s, spec.alpha1 - 1.0) + std::pow(s, spec.alpha2 - 1.0));
    b.max_ratio = std::max(b.max_ratio, std::abs(spec.d3g(s)) / rhs);
  }
  return b;
}

}  // namespace nlsgs
