#include <gtest/gtest.h>

#include <filesystem>

#include "nlsgs/radial_grid.hpp"
#include "nlsgs/rng.hpp"

using namespace nlsgs;

namespace {

// composite Simpson, independent of the grid rule
template <class F>
double simpson(F&& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

RadialField gaussian(const GridPtr& g) {
  return RadialField::from_profile(g, [](double r) { return std::exp(-r * r / 2); });
}

RadialField random_smooth(const GridPtr& g, SplitMix64& rng) {
  const double c = rng.uniform(0.0, 4.0), w = rng.uniform(0.7, 2.0);
  const cplx a(rng.normal(), rng.normal()), b(rng.normal(), rng.normal());
  return RadialField::from_profile(g, [&](double r) { return (a + b * r) * std::exp(-(r - c) * (r - c) / (2 * w * w)); });
}

}  // namespace

TEST(RadialGrid, NodesAndConstantQuadrature) {
  const RadialGrid g(2048, 120.0);
  EXPECT_DOUBLE_EQ(g.node(0), g.spacing());
  EXPECT_NEAR(g.node(g.size() - 1), 120.0 - g.spacing(), 1e-12);
  for (std::size_t j = 1; j < g.size(); ++j) ASSERT_GT(g.node(j), g.node(j - 1));
  const double exact = 4.0 * kPi * std::pow(120.0, 3) / 3.0;
  EXPECT_NEAR(g.integrate([](double) { return 1.0; }) / exact, 1.0, 1e-8);
}

TEST(RadialGrid, QuadratureExactForLowDegree) {
  const RadialGrid g(301, 7.5);
  const double R = 7.5;
  // f r^2 up to cubic is integrated exactly by the corrected rule
  EXPECT_NEAR(g.integrate([](double r) { return r; }), kPi * std::pow(R, 4), 1e-10 * kPi * std::pow(R, 4));
  EXPECT_NEAR(g.integrate([](double r) { return 2.0 - 3.0 * r; }),
              4 * kPi * (2.0 * std::pow(R, 3) / 3 - 3.0 * std::pow(R, 4) / 4), 1e-10 * kPi * std::pow(R, 4));
}

TEST(RadialGrid, GaussianNorms) {
  auto g = make_grid(2048, 120.0);
  const auto f = gaussian(g);
  EXPECT_NEAR(lp_norm(f, 2), std::pow(kPi, 0.75), 1e-10);
  EXPECT_NEAR(lp_norm(f, 4), std::pow(kPi / 2, 3.0 / 8.0), 1e-10);
  // the first node sits at dr, so the nodal max is exp(-dr^2/2)
  EXPECT_NEAR(lp_norm(f, kInf), 1.0, g->spacing() * g->spacing());
  EXPECT_THROW(lp_norm(f, 0.5), InvalidExponent);
}

TEST(RadialGrid, WeightedNorm) {
  auto g = make_grid(2048, 120.0);
  const auto f = gaussian(g);
  EXPECT_DOUBLE_EQ(weighted_l2_norm(f, 0.0), lp_norm(f, 2));
  const double oracle = std::sqrt(4 * kPi * simpson([](double r) { return (1 + r * r) * std::exp(-r * r) * r * r; }, 0.0, 12.0, 20000));
  EXPECT_NEAR(oracle, std::sqrt(2.5) * std::pow(kPi, 0.75), 1e-10);
  EXPECT_NEAR(weighted_l2_norm(f, 1.0), oracle, 1e-8);

  const auto edge = RadialField::from_profile(g, [](double r) { return r > 100.0 && r < 110.0 ? 1.0 : 0.0; });
  EXPECT_LT(weighted_l2_norm(edge, -1.0), lp_norm(edge, 2));
}

TEST(RadialGrid, SineTransformModesAndRoundTrip) {
  auto g = make_grid(255, 30.0);
  SineTransform dst(*g);
  const int n = static_cast<int>(g->size());
  for (int k : {1, 7, 128, 255}) {
    Eigen::VectorXd mode(n);
    for (int j = 0; j < n; ++j) mode[j] = std::sqrt(2.0 / (n + 1)) * std::sin(kPi * (j + 1) * k / (n + 1));
    const Eigen::VectorXd c = dst.forward(mode);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[k - 1] = 1.0;
    EXPECT_LT((c - e).norm(), 1e-12);
  }
  SplitMix64 rng(7);
  Eigen::VectorXcd x(n);
  for (int j = 0; j < n; ++j) x[j] = {rng.normal(), rng.normal()};
  EXPECT_LT((dst.inverse(dst.forward(x)) - x).norm() / x.norm(), 1e-12);
}

TEST(RadialGrid, SineLaplacianMatchesDenseStencil) {
  auto g = make_grid(400, 50.0);
  SineTransform dst(*g);
  const int n = static_cast<int>(g->size());
  const double h = g->spacing();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    k(j, j) = 2 / (h * h);
    if (j > 0) k(j, j - 1) = -1 / (h * h);
    if (j + 1 < n) k(j, j + 1) = -1 / (h * h);
  }
  const auto f = RadialField::from_profile(g, [&](double r) { return std::sin(kPi * r / 50.0) / r; });
  const Eigen::VectorXcd dense = k.cast<cplx>() * f.values();
  EXPECT_LT((dst.laplacian(f.values()) - dense).norm() / dense.norm(), 1e-10);
}

TEST(RadialGrid, RefinementAndInterpolation) {
  const auto coarse = gaussian(make_grid(1024, 40.0));
  const auto fine = gaussian(make_grid(2048, 40.0));
  for (double p : {2.0, 4.0, 6.0}) EXPECT_LT(std::abs(lp_norm(coarse, p) / lp_norm(fine, p) - 1.0), 1e-6);

  auto g = make_grid(512, 40.0);
  SplitMix64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_smooth(g, rng);
    const double q = rng.uniform(2.5, 10.0), theta = rng.uniform(0.05, 0.95);
    const double p = 1.0 / ((1 - theta) / 2 + theta / q);
    EXPECT_LE(lp_norm(f, p), std::pow(lp_norm(f, 2), 1 - theta) * std::pow(lp_norm(f, q), theta) * (1 + 1e-12));
  }
}

TEST(RadialGrid, SnapshotRoundTrip) {
  auto g = make_grid(64, 10.0);
  SplitMix64 rng(3);
  const auto f = random_smooth(g, rng);
  const auto dir = std::filesystem::temp_directory_path() / "nlsgs_snapshot_test";
  std::filesystem::create_directories(dir);
  write_snapshot(dir / "field", f, 2.5, {{"kind", "test"}});
  const auto s = read_snapshot(dir / "field");
  EXPECT_EQ(s.field.size(), f.size());
  EXPECT_DOUBLE_EQ(s.time, 2.5);
  EXPECT_EQ(s.labels.at("kind"), "test");
  EXPECT_EQ((s.field.values() - f.values()).norm(), 0.0);
  std::filesystem::remove_all(dir);
}
