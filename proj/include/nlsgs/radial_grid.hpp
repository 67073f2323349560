#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlsgs/errors.hpp"

namespace nlsgs {

using cplx = std::complex<double>;
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Half-line grid r_j = j*dr, j = 1..N, dr = R/(N+1). Dirichlet at 0 and R.
class RadialGrid {
 public:
  RadialGrid(std::size_t node_count, double radius_max)
      : n_(node_count), radius_(radius_max), dr_(radius_max / static_cast<double>(node_count + 1)) {
    if (node_count < 4) throw ConfigInvalid("radial grid needs at least 4 nodes");
    if (!(radius_max > 0.0)) throw ConfigInvalid("radial grid radius must be positive");
    nodes_.resize(n_);
    weights_.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      const double r = static_cast<double>(j + 1) * dr_;
      nodes_[j] = r;
      weights_[j] = 4.0 * kPi * dr_ * r * r;
    }
  }

  std::size_t size() const { return n_; }
  double radius() const { return radius_; }
  double spacing() const { return dr_; }
  double node(std::size_t j) const { return nodes_[j]; }
  const Eigen::VectorXd& nodes() const { return nodes_; }

  // Node weights for fields vanishing at both ends: 4*pi*dr*r_j^2.
  const Eigen::VectorXd& quadrature_weights() const { return weights_; }

  // 4*pi * int_0^R f(r) r^2 dr for a general profile, evaluated on 0..N+1
  // including the endpoint R. Gregory end corrections, exact for cubic f r^2.
  template <class F>
  double integrate(F&& f) const {
    const std::size_t m = n_ + 1;
    static constexpr double end[3] = {3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0};
    double sum = 0.0;
    for (std::size_t j = 0; j <= m; ++j) {
      const double r = static_cast<double>(j) * dr_;
      double wgt = 1.0;
      if (j < 3) wgt = end[j];
      else if (m - j < 3) wgt = end[m - j];
      sum += wgt * f(r) * r * r;
    }
    return 4.0 * kPi * dr_ * sum;
  }

  bool operator==(const RadialGrid& o) const { return n_ == o.n_ && radius_ == o.radius_; }

 private:
  std::size_t n_;
  double radius_;
  double dr_;
  Eigen::VectorXd nodes_;
  Eigen::VectorXd weights_;
};

using GridPtr = std::shared_ptr<const RadialGrid>;

inline GridPtr make_grid(std::size_t n, double radius) { return std::make_shared<const RadialGrid>(n, radius); }

// Complex radial profile stored as w = r*u on the interior nodes.
class RadialField {
 public:
  using Values = Eigen::VectorXcd;

  RadialField() = default;
  explicit RadialField(GridPtr grid) : grid_(std::move(grid)), w_(Values::Zero(grid_->size())) {}
  RadialField(GridPtr grid, Values w) : grid_(std::move(grid)), w_(std::move(w)) {
    if (static_cast<std::size_t>(w_.size()) != grid_->size()) throw Error("field size does not match grid");
  }

  template <class F>
  static RadialField from_profile(GridPtr grid, F&& u) {
    Values w(grid->size());
    for (std::size_t j = 0; j < grid->size(); ++j) {
      const double r = grid->node(j);
      w[j] = r * cplx(u(r));
    }
    return RadialField(std::move(grid), std::move(w));
  }

  static RadialField from_real(GridPtr grid, const Eigen::VectorXd& w) {
    return RadialField(std::move(grid), w.cast<cplx>());
  }

  const RadialGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::size_t size() const { return static_cast<std::size_t>(w_.size()); }
  bool empty() const { return w_.size() == 0; }

  const Values& values() const { return w_; }
  Values& values() { return w_; }

  // physical value u(r_j) = w_j / r_j
  cplx u(std::size_t j) const { return w_[j] / grid_->node(j); }
  Values physical() const { return w_.cwiseQuotient(grid_->nodes().cast<cplx>()); }

  RadialField conj() const { return {grid_, w_.conjugate()}; }
  Eigen::VectorXd real_part() const { return w_.real(); }
  Eigen::VectorXd imag_part() const { return w_.imag(); }

  RadialField& operator+=(const RadialField& o) { w_ += o.w_; return *this; }
  RadialField& operator-=(const RadialField& o) { w_ -= o.w_; return *this; }
  RadialField& operator*=(cplx c) { w_ *= c; return *this; }

  friend RadialField operator+(RadialField a, const RadialField& b) { return a += b; }
  friend RadialField operator-(RadialField a, const RadialField& b) { return a -= b; }
  friend RadialField operator*(cplx c, RadialField a) { return a *= c; }
  friend RadialField operator*(RadialField a, cplx c) { return a *= c; }
  friend RadialField operator-(RadialField a) { a.w_ = -a.w_; return a; }

 private:
  GridPtr grid_;
  Values w_;
};

struct NormParams {
  double p = 2.0;
  double sigma = 0.0;
};

// <f, g> = int conj(f) g d^3x
inline cplx inner(const RadialField& f, const RadialField& g) {
  return 4.0 * kPi * f.grid().spacing() * f.values().dot(g.values());
}

inline double real_inner(const RadialField& f, const RadialField& g) { return inner(f, g).real(); }

inline double lp_norm(const RadialField& f, double p) {
  if (!(p >= 1.0)) throw InvalidExponent("L^p norm requires p >= 1");
  const auto& r = f.grid().nodes();
  if (std::isinf(p)) {
    double m = 0.0;
    for (Eigen::Index j = 0; j < r.size(); ++j) m = std::max(m, std::abs(f.values()[j]) / r[j]);
    return m;
  }
  const auto& wt = f.grid().quadrature_weights();
  if (p == 2.0) {
    return std::sqrt(4.0 * kPi * f.grid().spacing() * f.values().squaredNorm());
  }
  // scale by the max to keep large p finite
  double m = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) m = std::max(m, std::abs(f.values()[j]) / r[j]);
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) s += wt[j] * std::pow(std::abs(f.values()[j]) / (r[j] * m), p);
  return m * std::pow(s, 1.0 / p);
}

inline double l2_norm(const RadialField& f) { return lp_norm(f, 2.0); }

inline double weighted_l2_norm(const RadialField& f, double sigma) {
  const auto& r = f.grid().nodes();
  double s = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) s += std::pow(1.0 + r[j] * r[j], sigma) * std::norm(f.values()[j]);
  return std::sqrt(4.0 * kPi * f.grid().spacing() * s);
}

inline double norm(const RadialField& f, const NormParams& np) {
  return np.sigma == 0.0 ? lp_norm(f, np.p) : weighted_l2_norm(f, np.sigma);
}

// Orthonormal DST-I on the interior nodes. Diagonalizes the second-order
// finite-difference -d^2/dr^2 with Dirichlet ends; symbol 4/dr^2 sin^2(pi k/(2(N+1))).
class SineTransform {
 public:
  explicit SineTransform(const RadialGrid& grid) : n_(grid.size()), scale_(1.0 / std::sqrt(2.0 * static_cast<double>(n_ + 1))) {
    symbol_.resize(static_cast<Eigen::Index>(n_));
    const double dr = grid.spacing();
    for (std::size_t k = 1; k <= n_; ++k) {
      const double s = std::sin(kPi * static_cast<double>(k) / (2.0 * static_cast<double>(n_ + 1)));
      symbol_[static_cast<Eigen::Index>(k - 1)] = 4.0 / (dr * dr) * s * s;
    }
    std::lock_guard lock(planner_mutex());
    double* in = fftw_alloc_real(n_);
    double* out = fftw_alloc_real(n_);
    // ESTIMATE keeps the algorithm choice, and so the rounding, reproducible
    plan_ = fftw_plan_r2r_1d(static_cast<int>(n_), in, out, FFTW_RODFT00, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  SineTransform(const SineTransform&) = delete;
  SineTransform& operator=(const SineTransform&) = delete;
  ~SineTransform() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  std::size_t size() const { return n_; }
  const Eigen::VectorXd& symbol() const { return symbol_; }

  // The orthonormal DST-I is an involution, so forward and inverse coincide.
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const { return apply(x); }
  Eigen::VectorXd inverse(const Eigen::VectorXd& c) const { return apply(c); }
  Eigen::VectorXcd forward(const Eigen::VectorXcd& x) const { return apply(x); }
  Eigen::VectorXcd inverse(const Eigen::VectorXcd& c) const { return apply(c); }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    Buffers b(n_);
    std::memcpy(b.in, x.data(), n_ * sizeof(double));
    fftw_execute_r2r(plan_, b.in, b.out);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(b.out, static_cast<Eigen::Index>(n_)) * scale_;
    return y;
  }

  Eigen::VectorXcd apply(const Eigen::VectorXcd& x) const {
    Buffers b(n_);
    Eigen::VectorXcd y(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) b.in[j] = x[j].real();
    fftw_execute_r2r(plan_, b.in, b.out);
    for (Eigen::Index j = 0; j < x.size(); ++j) y[j].real(b.out[j] * scale_);
    for (Eigen::Index j = 0; j < x.size(); ++j) b.in[j] = x[j].imag();
    fftw_execute_r2r(plan_, b.in, b.out);
    for (Eigen::Index j = 0; j < x.size(); ++j) y[j].imag(b.out[j] * scale_);
    return y;
  }

  // exp(-i * symbol * t) in the sine basis, i.e. exp(i t d^2/dr^2)
  Eigen::VectorXcd propagate(const Eigen::VectorXcd& w, double t) const {
    Eigen::VectorXcd c = apply(w);
    for (Eigen::Index k = 0; k < c.size(); ++k) c[k] *= std::polar(1.0, -symbol_[k] * t);
    return apply(c);
  }

  // -d^2/dr^2 w
  Eigen::VectorXcd laplacian(const Eigen::VectorXcd& w) const {
    Eigen::VectorXcd c = apply(w);
    c.array() *= symbol_.array().cast<cplx>();
    return apply(c);
  }

 private:
  struct Buffers {
    explicit Buffers(std::size_t n) : in(fftw_alloc_real(n)), out(fftw_alloc_real(n)) {}
    ~Buffers() { fftw_free(in); fftw_free(out); }
    Buffers(const Buffers&) = delete;
    Buffers& operator=(const Buffers&) = delete;
    double* in;
    double* out;
  };

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t n_;
  double scale_;
  Eigen::VectorXd symbol_;
  fftw_plan plan_ = nullptr;
};

inline std::shared_ptr<const SineTransform> dst_diagonalize(const RadialGrid& grid) {
  return std::make_shared<const SineTransform>(grid);
}

// Snapshot: <stem>.json sidecar + <stem>.bin of little-endian (re, im) doubles.
struct Snapshot {
  RadialField field;
  double time = 0.0;
  std::map<std::string, std::string> labels;
};

inline void write_snapshot(const std::filesystem::path& stem, const RadialField& f, double time,
                           const std::map<std::string, std::string>& labels = {}) {
  static_assert(std::endian::native == std::endian::little, "snapshot writer assumes a little-endian host");
  const auto bin = std::filesystem::path(stem).replace_extension(".bin");
  const auto side = std::filesystem::path(stem).replace_extension(".json");
  nlohmann::ordered_json j;
  j["node_count"] = f.grid().size();
  j["radius_max"] = f.grid().radius();
  j["time"] = time;
  j["storage"] = "w = r*u, little-endian float64 (re, im) per node";
  j["data"] = bin.filename().string();
  j["labels"] = labels;
  std::ofstream(side) << j.dump(2) << '\n';
  std::ofstream out(bin, std::ios::binary);
  for (Eigen::Index k = 0; k < f.values().size(); ++k) {
    const double re = f.values()[k].real(), im = f.values()[k].imag();
    out.write(reinterpret_cast<const char*>(&re), sizeof re);
    out.write(reinterpret_cast<const char*>(&im), sizeof im);
  }
}

inline Snapshot read_snapshot(const std::filesystem::path& stem) {
  const auto side = std::filesystem::path(stem).replace_extension(".json");
  std::ifstream in(side);
  if (!in) throw Error("cannot open snapshot sidecar " + side.string());
  const auto j = nlohmann::json::parse(in);
  auto grid = make_grid(j.at("node_count").get<std::size_t>(), j.at("radius_max").get<double>());
  const auto bin = side.parent_path() / j.at("data").get<std::string>();
  std::ifstream data(bin, std::ios::binary);
  if (!data) throw Error("cannot open snapshot data " + bin.string());
  RadialField f(grid);
  for (Eigen::Index k = 0; k < f.values().size(); ++k) {
    double re = 0, im = 0;
    data.read(reinterpret_cast<char*>(&re), sizeof re);
    data.read(reinterpret_cast<char*>(&im), sizeof im);
    f.values()[k] = {re, im};
  }
  if (!data) throw Error("truncated snapshot data " + bin.string());
  Snapshot s{std::move(f), j.at("time").get<double>(), {}};
  if (j.contains("labels")) s.labels = j["labels"].get<std::map<std::string, std::string>>();
  return s;
}

}  // namespace nlsgs
