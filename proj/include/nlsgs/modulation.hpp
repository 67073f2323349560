#pragma once

#include <array>
#include <vector>

#include "nlsgs/center_manifold.hpp"
#include "nlsgs/rng.hpp"

namespace nlsgs {

// Pairing vectors whose real orthogonality defines the radiation subspace at a:
// first = -i dpsi/da2, second = i dpsi/da1.
inline std::array<RadialField, 2> pairing_vectors(const BranchPoint& bp) {
  const cplx i(0, 1);
  return {(-i) * bp.d_psi_da2, i * bp.d_psi_da1};
}

// Re<-i d2, d1>, which equals Re<i d1, d2>; 1 at a = 0.
inline double jacobi_pairing(const BranchPoint& bp) { return real_inner(cplx(0, -1) * bp.d_psi_da2, bp.d_psi_da1); }

struct Decomposition {
  cplx a;
  RadialField eta;
  std::array<double, 2> residuals{};  // Re<pairing_j, eta>
  int newton_iterations = 0;
  BranchPoint point;
};

struct DecomposeOptions {
  int max_iterations = 50;
  double tolerance = 1e-13;  // on |delta a| / max(|a|, ||phi||)
  double det_floor = 1e-8;
};

// Newton on the two pairing conditions, started from <psi0, phi>.
inline Decomposition decompose(const RadialField& phi, const BranchContext& ctx, const DecomposeOptions& opts = {}) {
  const auto& s = ctx.spectral();
  const double scale = l2_norm(phi);
  Decomposition out;
  cplx a = inner(s.ground_state, phi);
  if (scale == 0.0) {
    out.a = 0.0;
    out.point = ctx.point(0.0);
    out.eta = RadialField(phi.grid_ptr());
    return out;
  }
  RealBranchSolution warm;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const BranchJet jet = ctx.jet(std::abs(a), true, warm.rho > 0.0 ? &warm : nullptr);
    if (jet.rho > 0.0) warm = jet.base;
    const BranchPoint bp = ctx.point_from_jet(jet, a);
    const auto p = pairing_vectors(bp);
    const RadialField r = phi - bp.psi_E;
    const std::array<double, 2> f{real_inner(p[0], r), real_inner(p[1], r)};

    // J_jk = Re<d_k p_j, r> - Re<p_j, d_k psi>
    const auto dd = ctx.second_derivatives(jet, a);
    const cplx i(0, 1);
    const auto grid = phi.grid_ptr();
    const RadialField d1p1(grid, Eigen::VectorXcd(-i * dd[1])), d2p1(grid, Eigen::VectorXcd(-i * dd[2]));
    const RadialField d1p2(grid, Eigen::VectorXcd(i * dd[0])), d2p2(grid, Eigen::VectorXcd(i * dd[1]));
    const double j11 = real_inner(d1p1, r) - real_inner(p[0], bp.d_psi_da1);
    const double j12 = real_inner(d2p1, r) - real_inner(p[0], bp.d_psi_da2);
    const double j21 = real_inner(d1p2, r) - real_inner(p[1], bp.d_psi_da1);
    const double j22 = real_inner(d2p2, r) - real_inner(p[1], bp.d_psi_da2);
    const double det = j11 * j22 - j12 * j21;
    if (std::abs(det) < opts.det_floor) throw DecompositionFailed("decomposition Jacobian is singular");
    const double da1 = -(j22 * f[0] - j12 * f[1]) / det;
    const double da2 = -(-j21 * f[0] + j11 * f[1]) / det;
    a += cplx(da1, da2);
    if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) break;
    if (std::hypot(da1, da2) <= opts.tolerance * std::max(std::abs(a), scale)) {
      out.a = a;
      out.newton_iterations = it;
      out.point = ctx.point_from_jet(ctx.jet(std::abs(a), false, warm.rho > 0.0 ? &warm : nullptr), a);
      out.eta = phi - out.point.psi_E;
      const auto q = pairing_vectors(out.point);
      out.residuals = {real_inner(q[0], out.eta), real_inner(q[1], out.eta)};
      return out;
    }
  }
  throw DecompositionFailed("decomposition Newton did not converge; the field is too large for the small-data regime");
}

inline RadialField reconstruct(const Decomposition& d) { return d.point.psi_E + d.eta; }

// 2x2 system for z in R_a zeta = zeta + z psi0.
inline std::array<double, 4> ra_matrix(const BranchPoint& bp, const RadialField& psi0) {
  const auto p = pairing_vectors(bp);
  const cplx c1 = inner(p[0], psi0), c2 = inner(p[1], psi0);
  return {c1.real(), -c1.imag(), c2.real(), -c2.imag()};
}

inline double ra_determinant(const BranchPoint& bp, const RadialField& psi0) {
  const auto m = ra_matrix(bp, psi0);
  return m[0] * m[3] - m[1] * m[2];
}

// Inverse of P_c restricted to the radiation subspace at bp.a.
inline RadialField apply_Ra(const RadialField& zeta, const BranchPoint& bp, const RadialField& psi0) {
  if (std::abs(inner(psi0, zeta)) > 1e-10 * std::max(l2_norm(zeta), 1e-300))
    throw InvalidProfile("R_a acts on fields orthogonal to the ground state");
  const auto m = ra_matrix(bp, psi0);
  const double det = m[0] * m[3] - m[1] * m[2];
  if (std::abs(det) < 1e-8) throw Psi0InHa("ground state lies in the radiation subspace; |a| is too large");
  const auto p = pairing_vectors(bp);
  const double b1 = -real_inner(p[0], zeta), b2 = -real_inner(p[1], zeta);
  const cplx z((m[3] * b1 - m[1] * b2) / det, (-m[2] * b1 + m[0] * b2) / det);
  return zeta + z * psi0;
}

inline RadialField apply_Ra(const RadialField& zeta, cplx a, const BranchContext& ctx) {
  return apply_Ra(zeta, ctx.point(a), ctx.spectral().ground_state);
}

struct ModulationRates {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double b = 0.0;  // |a' + i E a|
};

inline ModulationRates modulation_rhs(const BranchPoint& bp, const RadialField& eta, const NonlinearitySpec& spec) {
  const double den = jacobi_pairing(bp);
  if (den < 0.25) throw JacobiDegenerate("tangent pairing fell below 1/4");
  const auto p = pairing_vectors(bp);
  const RadialField f = cplx(0, -1) * apply_F2(bp.psi_E, eta, spec);
  ModulationRates m;
  m.beta1 = real_inner(p[0], f) / den;
  m.beta2 = real_inner(p[1], f) / den;
  m.b = std::hypot(m.beta1, m.beta2);
  return m;
}

// Random smooth field with ground-state and radiation parts, scaled to the given L2 norm.
inline RadialField random_small_field(const GridPtr& g, const RadialField& psi0, SplitMix64& rng, double norm) {
  const double c = rng.uniform(0.0, 4.0), w = rng.uniform(0.8, 2.5);
  const cplx amp(rng.normal(), rng.normal()), slope(rng.normal(), rng.normal());
  RadialField f = RadialField::from_profile(g, [&](double r) { return (amp + slope * r) * std::exp(-(r - c) * (r - c) / (2 * w * w)); });
  f = f + cplx(rng.normal(), rng.normal()) * (l2_norm(f) / l2_norm(psi0)) * psi0;
  return (norm / l2_norm(f)) * f;
}

struct CalibrationResult {
  double delta1 = 0.0;  // largest tested ||phi|| with every trial converging and |a| <= 2 ||phi||
  double delta2 = 0.0;  // largest tested |a| with |det| of the R_a system >= 1/2
  std::vector<double> tested;
  std::vector<double> success_rate;
};

inline CalibrationResult calibrate_small_data(const BranchContext& ctx, const std::vector<double>& norms, int trials, SplitMix64& rng) {
  CalibrationResult out;
  const auto& s = ctx.spectral();
  for (double n : norms) {
    int ok = 0;
    for (int t = 0; t < trials; ++t) {
      const auto phi = random_small_field(s.grid, s.ground_state, rng, n);
      try {
        const auto d = decompose(phi, ctx);
        if (std::abs(d.a) <= 2.0 * n) ++ok;
      } catch (const DecompositionFailed&) {
      } catch (const BranchDiverged&) {
      }
    }
    out.tested.push_back(n);
    out.success_rate.push_back(static_cast<double>(ok) / trials);
    if (ok == trials) out.delta1 = std::max(out.delta1, n);
    // R_a solvability along the same amplitudes
    try {
      if (std::abs(ra_determinant(ctx.point(n), s.ground_state)) >= 0.5) out.delta2 = std::max(out.delta2, n);
    } catch (const BranchDiverged&) {
    }
  }
  return out;
}

}  // namespace nlsgs
