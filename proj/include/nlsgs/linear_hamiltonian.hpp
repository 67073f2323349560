#pragma once

#include <lapacke.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlsgs/errors.hpp"
#include "nlsgs/radial_grid.hpp"

namespace nlsgs {

enum class PotentialShape { GaussianWell, ExponentialWell };

// V(r) = -depth * exp(-(r/width)^2)   or   -depth * exp(-rate * r)
struct PotentialSpec {
  PotentialShape shape = PotentialShape::GaussianWell;
  double depth = 0.0;
  double scale = 1.0;  // width for the Gaussian, rate for the exponential

  static PotentialSpec gaussian_well(double depth, double width) { return {PotentialShape::GaussianWell, depth, width}; }
  static PotentialSpec exponential_well(double depth, double rate) { return {PotentialShape::ExponentialWell, depth, rate}; }

  PotentialSpec with_depth(double d) const { return {shape, d, scale}; }

  double operator()(double r) const {
    switch (shape) {
      case PotentialShape::GaussianWell: return -depth * std::exp(-(r / scale) * (r / scale));
      case PotentialShape::ExponentialWell: return -depth * std::exp(-scale * r);
    }
    return 0.0;
  }

  Eigen::VectorXd values(const RadialGrid& g) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
    for (std::size_t j = 0; j < g.size(); ++j) v[static_cast<Eigen::Index>(j)] = (*this)(g.node(j));
    return v;
  }

  std::string shape_name() const {
    return shape == PotentialShape::GaussianWell ? "gaussian_well" : "exponential_well";
  }
};

// Decay exponent rho in |V| <= C <r>^-rho, fitted on [R/8, R/2] over the
// nodes where |V| is still representable.
inline double potential_tail_exponent(const PotentialSpec& v, const RadialGrid& g) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double r = g.node(j);
    if (r < g.radius() / 8 || r > g.radius() / 2) continue;
    const double a = std::abs(v(r));
    if (!(a > 1e-280)) continue;
    const double x = 0.5 * std::log1p(r * r), y = std::log(a);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
    ++n;
  }
  if (n < 2) return kInf;  // underflows before the window: faster than any power
  return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Symmetric tridiagonal -d^2/dr^2 + V on w-space.
struct Tridiagonal {
  Eigen::VectorXd diag;
  double off = 0.0;

  static Tridiagonal hamiltonian(const RadialGrid& g, const Eigen::VectorXd& v) {
    const double h2 = g.spacing() * g.spacing();
    return {(v.array() + 2.0 / h2).matrix(), -1.0 / h2};
  }

  template <class Vec>
  Vec apply(const Vec& x) const {
    const Eigen::Index n = x.size();
    Vec y(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      auto s = diag[j] * x[j];
      if (j > 0) s += off * x[j - 1];
      if (j + 1 < n) s += off * x[j + 1];
      y[j] = s;
    }
    return y;
  }

  // number of eigenvalues strictly below mu (Sturm count via LDL^T pivots)
  int count_below(double mu) const {
    int count = 0;
    double d = 1.0;
    const double tiny = 1e-300;
    for (Eigen::Index j = 0; j < diag.size(); ++j) {
      d = diag[j] - mu - (j > 0 ? off * off / d : 0.0);
      if (d == 0.0) d = -tiny;
      if (d < 0.0) ++count;
    }
    return count;
  }

  // Solve (T - shift) X = B in place; returns LAPACK info.
  int solve_shifted(double shift, Eigen::MatrixXd& b) const {
    const lapack_int n = static_cast<lapack_int>(diag.size());
    std::vector<double> dl(static_cast<std::size_t>(n - 1), off), du(static_cast<std::size_t>(n - 1), off), d(static_cast<std::size_t>(n));
    for (lapack_int j = 0; j < n; ++j) d[static_cast<std::size_t>(j)] = diag[j] - shift;
    return LAPACKE_dgtsv(LAPACK_COL_MAJOR, n, static_cast<lapack_int>(b.cols()), dl.data(), d.data(), du.data(), b.data(), n);
  }
};

class SpectralData {
 public:
  GridPtr grid;
  PotentialSpec potential;
  Eigen::VectorXd potential_values;
  Tridiagonal op;
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // Euclidean-orthonormal columns in w-space
  double ground_energy = 0.0;
  RadialField ground_state;      // real, positive, unit L^2 norm
  std::vector<std::string> warnings;
  std::shared_ptr<const SineTransform> sine;

  const RadialGrid& g() const { return *grid; }
  std::size_t size() const { return grid->size(); }

  // w-space vector of psi0 with unit Euclidean norm
  Eigen::VectorXd ground_unit() const { return eigenvectors.col(0); }

  RadialField apply_H(const RadialField& f) const { return {grid, op.apply(f.values())}; }
};

using SpectralPtr = std::shared_ptr<const SpectralData>;

namespace detail {

inline void tridiagonal_eigensystem(const Tridiagonal& t, Eigen::VectorXd& evals, Eigen::MatrixXd& evecs) {
  const lapack_int n = static_cast<lapack_int>(t.diag.size());
  std::vector<double> d(t.diag.data(), t.diag.data() + n);
  std::vector<double> e(static_cast<std::size_t>(n), t.off);
  evals.resize(n);
  evecs.resize(n, n);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
  lapack_int m = 0;
  lapack_logical tryrac = 1;
  const lapack_int info = LAPACKE_dstemr(LAPACK_COL_MAJOR, 'V', 'A', n, d.data(), e.data(), 0.0, 0.0, 0, 0, &m, evals.data(),
                                         evecs.data(), n, n, isuppz.data(), &tryrac);
  if (info != 0 || m != n) throw Error("tridiagonal eigensolver failed (info " + std::to_string(info) + ")");
}

}  // namespace detail

inline SpectralPtr build_spectral(const PotentialSpec& v, GridPtr grid) {
  auto s = std::make_shared<SpectralData>();
  s->grid = grid;
  s->potential = v;
  s->potential_values = v.values(*grid);
  s->op = Tridiagonal::hamiltonian(*grid, s->potential_values);
  const int negatives = s->op.count_below(0.0);
  if (negatives != 1) {
    throw OneBoundStateRequired("discretized H has " + std::to_string(negatives) + " negative eigenvalues; exactly one is required");
  }
  detail::tridiagonal_eigensystem(s->op, s->eigenvalues, s->eigenvectors);

  // Inverse iteration just below E0 gives the ground state with full
  // relative accuracy in the exponentially small tail.
  const double e0 = s->eigenvalues[0];
  const double shift = e0 - 1e-9 * std::max(1.0, std::abs(e0));
  Eigen::MatrixXd q = s->eigenvectors.col(0);
  for (int it = 0; it < 3; ++it) {
    if (s->op.solve_shifted(shift, q) != 0) throw Error("inverse iteration for the ground state failed");
    q /= q.norm();
  }
  if (q.sum() < 0) q = -q;
  if ((q.array() <= 0.0).any()) throw InvalidProfile("ground state is not strictly positive on the grid");
  s->eigenvectors.col(0) = q.col(0);
  const Eigen::VectorXd tq = s->op.apply(Eigen::VectorXd(q.col(0)));
  s->ground_energy = q.col(0).dot(tq);
  s->eigenvalues[0] = s->ground_energy;
  s->ground_state = RadialField::from_real(grid, q.col(0) / std::sqrt(4.0 * kPi * grid->spacing()));

  // Zero-energy resonance diagnostic: a box of radius R puts the lowest
  // scattering state near (pi/R)^2, a resonance pulls it toward (pi/2R)^2.
  const double box = (kPi / grid->radius()) * (kPi / grid->radius());
  if (s->eigenvalues[1] < 0.5 * box) {
    s->warnings.push_back("lowest non-negative eigenvalue " + std::to_string(s->eigenvalues[1]) +
                          " is small relative to (pi/R)^2; 0 may be close to a resonance");
  }
  s->sine = dst_diagonalize(*grid);
  return s;
}

// Bisection on the bound-state count. Returns the geometric mean of the
// depths at which the first and the second bound state appear.
inline double tune_well_depth(PotentialSpec v, const RadialGrid& g, double rel_tol = 1e-10) {
  auto count = [&](double depth) {
    v.depth = depth;
    return Tridiagonal::hamiltonian(g, v.values(g)).count_below(0.0);
  };
  auto threshold = [&](int k) {
    double lo = 0.0, hi = 1.0;
    while (count(hi) < k) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e8) throw Error("well depth bisection did not bracket a bound state");
    }
    while (hi - lo > rel_tol * hi) {
      const double mid = 0.5 * (lo + hi);
      (count(mid) >= k ? hi : lo) = mid;
    }
    return hi;
  };
  return std::sqrt(threshold(1) * threshold(2));
}

inline RadialField project_continuous(const RadialField& f, const SpectralData& s) {
  return f - inner(s.ground_state, f) * s.ground_state;
}

inline Eigen::VectorXcd project_continuous(const Eigen::VectorXcd& w, const SpectralData& s) {
  const Eigen::VectorXd q = s.ground_unit();
  return w - q.cast<cplx>() * q.cast<cplx>().dot(w);
}

// (H - E)^{-1} P_c f. Solved as a tridiagonal system, which keeps relative
// accuracy in the far tail, then re-projected.
inline Eigen::VectorXcd apply_resolvent(const Eigen::VectorXcd& w, double e, const SpectralData& s) {
  const auto& lam = s.eigenvalues;
  double gap = kInf;
  for (Eigen::Index k = 1; k < lam.size(); ++k) gap = std::min(gap, std::abs(lam[k] - e));
  if (gap < 1e-10) throw NearSingularResolvent("resolvent energy within 1e-10 of a continuum eigenvalue");
  const Eigen::VectorXcd pf = project_continuous(w, s);
  Eigen::MatrixXd b(pf.size(), 2);
  b.col(0) = pf.real();
  b.col(1) = pf.imag();
  if (s.op.solve_shifted(e, b) != 0) {
    // exactly singular pivot (E on the ground energy): divide in the eigenbasis
    Eigen::MatrixXd c = s.eigenvectors.transpose() * Eigen::MatrixXd((Eigen::MatrixXd(pf.size(), 2) << pf.real(), pf.imag()).finished());
    c.row(0).setZero();
    for (Eigen::Index k = 1; k < c.rows(); ++k) c.row(k) /= (lam[k] - e);
    b = s.eigenvectors * c;
  }
  Eigen::VectorXcd x(pf.size());
  x.real() = b.col(0);
  x.imag() = b.col(1);
  return project_continuous(x, s);
}

inline RadialField apply_resolvent(const RadialField& f, double e, const SpectralData& s) {
  return {f.grid_ptr(), apply_resolvent(f.values(), e, s)};
}

// e^{-iHt} on a batch of w-space columns.
inline Eigen::MatrixXcd propagate_H(const Eigen::MatrixXcd& w, double t, const SpectralData& s) {
  if (t == 0.0) return w;
  const Eigen::Index n = w.rows(), m = w.cols();
  Eigen::MatrixXd parts(n, 2 * m);
  parts.leftCols(m) = w.real();
  parts.rightCols(m) = w.imag();
  Eigen::MatrixXd c = s.eigenvectors.transpose() * parts;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double cs = std::cos(s.eigenvalues[k] * t), sn = -std::sin(s.eigenvalues[k] * t);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double re = c(k, j), im = c(k, j + m);
      c(k, j) = cs * re - sn * im;
      c(k, j + m) = sn * re + cs * im;
    }
  }
  parts.noalias() = s.eigenvectors * c;
  Eigen::MatrixXcd out(n, m);
  out.real() = parts.leftCols(m);
  out.imag() = parts.rightCols(m);
  return out;
}

inline RadialField propagate_H(const RadialField& f, double t, const SpectralData& s) {
  return {f.grid_ptr(), propagate_H(Eigen::MatrixXcd(f.values()), t, s).col(0)};
}

// e^{-beta H} P_c f. Damps the high-energy content that a box of radius R
// reflects back to the origin by t ~ R/k; probes use it to stay boundary-clean.
inline RadialField heat_smooth(const RadialField& f, double beta, const SpectralData& s) {
  const Eigen::VectorXcd w = f.values();
  Eigen::MatrixXd parts(w.size(), 2);
  parts.col(0) = w.real();
  parts.col(1) = w.imag();
  Eigen::MatrixXd c = s.eigenvectors.transpose() * parts;
  c.row(0).setZero();
  for (Eigen::Index k = 1; k < c.rows(); ++k) c.row(k) *= std::exp(-beta * s.eigenvalues[k]);
  parts.noalias() = s.eigenvectors * c;
  Eigen::VectorXcd out(w.size());
  out.real() = parts.col(0);
  out.imag() = parts.col(1);
  return {f.grid_ptr(), out};
}

// e^{i Delta t}
inline RadialField propagate_free(const RadialField& f, double t, const SineTransform& dst) {
  if (t == 0.0) return f;
  return {f.grid_ptr(), dst.propagate(f.values(), t)};
}

inline RadialField propagate_free(const RadialField& f, double t) {
  return propagate_free(f, t, SineTransform(f.grid()));
}

inline nlohmann::ordered_json potential_manifest(const SpectralData& s) {
  nlohmann::ordered_json j;
  j["shape"] = s.potential.shape_name();
  j["depth"] = s.potential.depth;
  j[s.potential.shape == PotentialShape::GaussianWell ? "width" : "rate"] = s.potential.scale;
  j["ground_energy"] = s.ground_energy;
  j["first_continuum_eigenvalue"] = s.eigenvalues[1];
  j["warnings"] = s.warnings;
  return j;
}

}  // namespace nlsgs
