#include <gtest/gtest.h>

#include <sstream>

#include "nlsgs/dynamics.hpp"

using namespace nlsgs;

namespace {

const SpectralPtr& spectral() {
  static const SpectralPtr s = [] {
    auto g = make_grid(1024, 60.0);
    const auto shape = PotentialSpec::gaussian_well(1.0, 1.0);
    return build_spectral(shape.with_depth(tune_well_depth(shape, *g)), g);
  }();
  return s;
}

RadialField bump(const GridPtr& g, double c, double w, cplx amp) {
  return RadialField::from_profile(g, [=](double r) { return amp * std::exp(-(r - c) * (r - c) / (2 * w * w)); });
}

double slope(const std::vector<double>& x, const std::vector<double>& y) { return loglog_slope(x, y); }

}  // namespace

TEST(Dynamics, ConfigValidation) {
  const auto& g = spectral()->g();
  EvolverConfig c;
  EXPECT_NO_THROW(c.validate(g));
  c.dt = 0.0;
  EXPECT_THROW(c.validate(g), ConfigInvalid);
  c = {};
  c.absorber.enabled = true;
  c.absorber.onset_fraction = 1.0;
  EXPECT_THROW(c.validate(g), ConfigInvalid);
}

TEST(Dynamics, GroundStateOrbit) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.profile(0.05);
  const auto& r = spectral()->g().nodes();
  const Eigen::VectorXd mod0 = bp.psi_E.values().cwiseAbs().cwiseQuotient(r);
  // the kinetic scheme splits off V, so its orbit error is O(dt^2); the eigenbasis scheme is slower per step
  struct Run {
    Scheme scheme;
    double dt, t;
  };
  for (const Run run : {Run{Scheme::Kinetic, 0.002, 50.0}, Run{Scheme::Spectral, 0.01, 10.0}}) {
    NlsStepper st(spectral(), spec, {}, run.scheme);
    Eigen::VectorXcd w = bp.psi_E.values();
    double worst = 0.0;
    const int n = static_cast<int>(std::lround(run.t / run.dt));
    for (int k = 1; k <= n; ++k) {
      st.step(w, run.dt);
      if (k % 50 == 0) worst = std::max(worst, (w.cwiseAbs().cwiseQuotient(r) - mod0).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-6) << static_cast<int>(run.scheme);
  }
}

TEST(Dynamics, FreeGaussianClosedForm) {
  auto g = make_grid(65535, 200.0);
  const auto st = NlsStepper::free(g, {1, 1, 0, 0});
  const auto u0 = RadialField::from_profile(g, [](double r) { return std::exp(-r * r / 2); });
  const double t = 3.0;
  const auto u = st.advance(u0, t, 0.05);
  const cplx z(1.0, 2.0 * t);
  const auto exact = RadialField::from_profile(g, [&](double r) { return std::pow(z, -1.5) * std::exp(-r * r / (2.0 * z)); });
  EXPECT_LT(lp_norm(u - exact, kInf), 1e-6);
}

TEST(Dynamics, MassEnergyAndGauge) {
  const NonlinearitySpec spec{0.5, 1.5, 1, -0.3};
  BranchContext ctx(spectral(), spec);
  const auto u0 = ctx.profile(0.05).psi_E + bump(spectral()->grid, 2.0, 1.0, cplx(0.01, 0.02));
  NlsStepper st(spectral(), spec);
  EvolverConfig cfg;
  cfg.dt = 0.01;
  cfg.t_final = 10.0;
  cfg.record_stride = 50;
  const auto rec = evolve_nls(u0, cfg, st);
  for (double m : rec.mass) EXPECT_NEAR(m / rec.mass.front(), 1.0, 1e-8);
  // Strang keeps the energy within O(dt^2)
  auto drift = [](const TrajectoryRecord& tr) {
    double d = 0.0;
    for (double e : tr.energy) d = std::max(d, std::abs(e - tr.energy.front()));
    return d;
  };
  cfg.dt = 0.005;
  cfg.record_stride = 100;
  const double d1 = drift(rec), d2 = drift(evolve_nls(u0, cfg, st));
  EXPECT_LT(d1, 1e-3 * std::abs(rec.energy.front()));
  EXPECT_NEAR(d1 / d2, 4.0, 0.5);

  const cplx ph = std::polar(1.0, 1.3);
  const auto a = st.advance(u0, 2.0, 0.01), b = st.advance(ph * u0, 2.0, 0.01);
  EXPECT_LT(lp_norm(b - ph * a, kInf), 1e-10 * lp_norm(a, kInf));
}

TEST(Dynamics, StrangOrderTwo) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto u0 = ctx.profile(0.2).psi_E + bump(spectral()->grid, 1.0, 1.0, cplx(0.1, 0.05));
  NlsStepper st(spectral(), spec);
  const double t = 2.0, dt = 0.04;
  const auto ref = st.advance(u0, t, dt / 8);
  const double e1 = l2_norm(st.advance(u0, t, dt) - ref), e2 = l2_norm(st.advance(u0, t, dt / 2) - ref);
  // the reference carries its own dt^2/64 error, which shifts the ratio by a known factor
  const double order = std::log2(e1 / e2);
  EXPECT_NEAR(order, 2.0, 0.2);
}

TEST(Dynamics, AbsorberRemovesMass) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  NlsStepper st(spectral(), spec, Absorber{true, 2.0, 0.75});
  const auto u0 = project_continuous(bump(spectral()->grid, 5.0, 1.0, 0.1), *spectral());
  EvolverConfig cfg;
  cfg.dt = 0.02;
  cfg.t_final = 60.0;
  cfg.record_stride = 25;
  cfg.absorber = {true, 2.0, 0.75};
  const auto rec = evolve_nls(u0, cfg, st);
  for (std::size_t i = 1; i < rec.mass.size(); ++i) EXPECT_LE(rec.mass[i], rec.mass[i - 1] * (1 + 1e-12));
  EXPECT_LT(rec.mass.back(), 0.5 * rec.mass.front());
}

TEST(Dynamics, RecordedDecomposition) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.profile(0.1);
  const auto u0 = bp.psi_E + project_continuous(bump(spectral()->grid, 2.0, 1.0, 0.02), *spectral());
  // eigenbasis scheme: the V splitting error of the kinetic scheme would swamp the quadratic rates
  NlsStepper st(spectral(), spec, Absorber{true, 2.0, 0.75}, Scheme::Spectral);
  EvolverConfig cfg;
  cfg.dt = 0.005;
  cfg.t_final = 3.0;
  cfg.record_stride = 10;
  cfg.decompose_each_record = true;
  cfg.absorber = {true, 2.0, 0.75};
  const auto rec = evolve_nls(u0, cfg, st, &ctx);
  EXPECT_TRUE(rec.gaps.empty());
  for (double d : rec.pairing_defect) EXPECT_LE(d, 1e-8);

  // |d/dt (a e^{i int E})| = sqrt(beta1^2 + beta2^2), checked on the interior records
  std::vector<cplx> slow(rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i) slow[i] = rec.a[i] * std::polar(1.0, rec.phase_integral[i]);
  double worst = 0.0;
  for (std::size_t i = 2; i + 2 < rec.size(); ++i) {
    const double h = rec.times[i + 1] - rec.times[i];
    const cplx d = (8.0 * (slow[i + 1] - slow[i - 1]) - (slow[i + 2] - slow[i - 2])) / (12.0 * h);
    const double b = std::hypot(rec.beta1[i], rec.beta2[i]);
    worst = std::max(worst, std::abs(std::abs(d) - b) / b);
  }
  EXPECT_LT(worst, 0.01);

  std::ostringstream os;
  const auto as = extract_asymptotics(rec);
  write_trajectory_csv(os, rec, as.theta, "abc");
  EXPECT_EQ(os.str().rfind("# manifest abc\n", 0), 0u);
}

TEST(Dynamics, ExactOrbitAsymptotics) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.profile(0.03);
  NlsStepper st(spectral(), spec);
  EvolverConfig cfg;
  cfg.dt = 0.002;
  cfg.t_final = 4.0;
  cfg.record_stride = 100;
  cfg.decompose_each_record = true;
  const auto rec = evolve_nls(bp.psi_E, cfg, st, &ctx);
  for (double n : rec.eta_l2) EXPECT_LE(n, 1e-6);
  const auto as = extract_asymptotics(rec);
  EXPECT_NEAR(as.E_inf, bp.E, 1e-8);
  for (double th : as.theta) EXPECT_LE(std::abs(th), 1e-8);
}

TEST(Dynamics, ThetaClosedForm) {
  std::vector<double> t, e;
  const double einf = -1.1;
  for (int i = 0; i <= 20000; ++i) {
    t.push_back(i * 1e-3);
    e.push_back(einf + 1.0 / std::sqrt(1.0 + t.back()));
  }
  const auto th = theta_series(t, e, einf);
  for (std::size_t i = 1000; i < t.size(); i += 1000) EXPECT_NEAR(th[i], 2.0 * (std::sqrt(1.0 + t[i]) - 1.0) / t[i], 1e-8);
}

TEST(Dynamics, WindowNotFound) {
  TrajectoryRecord rec;
  for (int i = 0; i < 10; ++i) {
    rec.times.push_back(i);
    rec.E.push_back(-1.0);
    rec.edge_fraction.push_back(i < 3 ? 0.0 : 1e-3);
  }
  EXPECT_THROW(extract_asymptotics(rec), WindowNotFound);
  rec.absorber = true;
  EXPECT_NO_THROW(extract_asymptotics(rec));
}

TEST(Dynamics, LinearizedReducesToBareFlow) {
  const auto& s = *spectral();
  const NonlinearitySpec off{1, 1, 0, 0};
  BranchContext ctx(spectral(), {1, 1, 1, 0});
  const auto path = BranchPath::rotating(ctx.profile(0.05));
  const auto v = bump(s.grid, 1.0, 1.0, cplx(0.3, 0.2));
  EXPECT_EQ(l2_norm(evolve_linearized(v, 0.0, 3.0, path, s, off, 0.05) - propagate_H(v, 3.0, s)), 0.0);
  EXPECT_LT(l2_norm(apply_T(v, 0.0, 3.0, path, s, off, 0.05)), 1e-13 * l2_norm(v));
  EXPECT_EQ(l2_norm(apply_T(v, 1.0, 1.0, path, s, {1, 1, 1, 0}, 0.05)), 0.0);
}

TEST(Dynamics, ZeroModeOfGenerator) {
  const auto& s = *spectral();
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.point(0.05);
  const auto path = BranchPath::frozen(bp);
  const cplx i(0, 1);
  const auto defect = linearized_generator(path, 0.0, i * bp.psi_E, s, spec) - (-i * bp.E) * (i * bp.psi_E);
  EXPECT_LE(l2_norm(defect), 1e-8 * l2_norm(bp.psi_E));

  // along the exact orbit the gauge direction is carried rigidly
  const auto rot = BranchPath::rotating(bp);
  const double t = 5.0;
  const auto z = evolve_linearized(i * bp.psi_E, 0.0, t, rot, s, spec, 0.01);
  EXPECT_LE(l2_norm(z - std::polar(1.0, -bp.E * t) * (i * bp.psi_E)), 1e-6 * l2_norm(bp.psi_E));
}

TEST(Dynamics, LinearizedRealLinearity) {
  const auto& s = *spectral();
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto path = BranchPath::rotating(ctx.profile(0.2));
  const auto v1 = bump(s.grid, 1.0, 1.0, cplx(0.3, 0.2)), v2 = bump(s.grid, 3.0, 0.7, cplx(-0.1, 0.4));
  auto om = [&](const RadialField& v) { return evolve_linearized(v, 0.0, 2.0, path, s, spec, 0.02); };
  const auto lhs = om(0.7 * v1 + (-1.3) * v2), rhs = 0.7 * om(v1) + (-1.3) * om(v2);
  EXPECT_LT(l2_norm(lhs - rhs), 1e-10 * l2_norm(rhs));
  const cplx i(0, 1);
  EXPECT_GT(l2_norm(om(i * v1) - i * om(v1)), 1e-6 * l2_norm(om(v1)));
}

TEST(Dynamics, LinearizationOfFullFlow) {
  const auto& s = *spectral();
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.profile(0.2);
  const auto path = BranchPath::rotating(bp);
  NlsStepper st(spectral(), spec, {}, Scheme::Spectral);
  const auto v = project_continuous(bump(s.grid, 1.0, 1.0, cplx(0.3, 0.2)), s);
  const double t = 2.0, dt = 0.005;
  const auto base = st.advance(bp.psi_E, t, dt);
  const auto lin = evolve_linearized(v, 0.0, t, path, s, spec, dt);
  double gap[2];
  int k = 0;
  for (double eps : {1e-3, 1e-4}) gap[k++] = l2_norm((1.0 / eps) * (st.advance(bp.psi_E + eps * v, t, dt) - base) - lin);
  EXPECT_GT(gap[0] / gap[1], 5.0);
}

TEST(Dynamics, TBoundedInL2) {
  const auto& s = *spectral();
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto path = BranchPath::rotating(ctx.profile(0.05));
  const auto v = heat_smooth(bump(s.grid, 1.0, 1.0, cplx(0.3, 0.2)), 0.5, s);
  Eigen::MatrixXcd z = v.values();
  std::vector<double> ts, norms;
  double t = 0.0;
  // t <= 20: on this box the first wall echo reaches the well near t = 25
  for (int k = 0; k < 8; ++k) {
    z = evolve_linearized(z, t, t + 2.5, path, s, spec, 0.05);
    t += 2.5;
    const RadialField om(s.grid, z.col(0));
    const auto tv = project_continuous(om, s) - propagate_H(project_continuous(v, s), t, s);
    ts.push_back(t);
    norms.push_back(l2_norm(tv) / l2_norm(v));
  }
  EXPECT_LT(std::abs(slope(ts, norms)), 0.1);
  EXPECT_LT(*std::max_element(norms.begin(), norms.end()), 1.0);
}

TEST(Dynamics, RecordedPathMatchesRotating) {
  const NonlinearitySpec spec{1, 1, 1, 0};
  BranchContext ctx(spectral(), spec);
  const auto bp = ctx.profile(0.05);
  const auto rot = BranchPath::rotating(bp);
  std::vector<double> t;
  std::vector<cplx> a;
  for (int k = 0; k <= 40; ++k) {
    t.push_back(0.25 * k);
    a.push_back(rot.a_at(t.back()));
  }
  const auto rec = BranchPath::recorded(ctx, t, a);
  for (double s : {0.0, 1.1, 3.3, 9.9}) {
    EXPECT_LT(std::abs(rec.a_at(s) - rot.a_at(s)), 1e-12);
    EXPECT_LT(l2_norm(rec.psi_at(s) - rot.psi_at(s)), 1e-10 * l2_norm(bp.psi_E));
  }
}
