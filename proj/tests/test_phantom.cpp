#include <doctest.h>

#include "fodnet/phantom.hpp"
#include "sphere_oracles.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace fodnet;

namespace {

// Directions of local amplitude maxima on a dense grid, one per antipodal pair.
std::vector<Eigen::Vector3d> dense_peaks(const Eigen::VectorXd& coeffs, int lmax, double rel_threshold = 0.3) {
  static const auto grid = oracle::fibonacci_sphere(4000);
  const Eigen::VectorXd amp = sh_basis<double>(grid, lmax) * coeffs;
  const double cos_nb = std::cos(12.0 * std::numbers::pi / 180.0);
  std::vector<Eigen::Vector3d> peaks;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    if (amp[i] < rel_threshold * amp.maxCoeff()) continue;
    bool is_max = true;
    for (Eigen::Index j = 0; j < grid.rows() && is_max; ++j)
      if (j != i && std::abs(grid.row(i).dot(grid.row(j))) > cos_nb && amp[j] > amp[i]) is_max = false;
    if (!is_max) continue;
    const Eigen::Vector3d d = grid.row(i).transpose();
    bool dup = false;
    for (const auto& p : peaks) dup = dup || std::abs(p.dot(d)) > cos_nb;
    if (!dup) peaks.push_back(d);
  }
  return peaks;
}

PhantomSpec small_spec() {
  PhantomSpec s;
  s.name = "small";
  s.dims = Dims{20, 20, 16};
  s.brain.radii = Eigen::Vector3d(9, 9, 7);
  s.scheme = make_scheme(3, {{1000, 30}, {2500, 30}});
  s.protocol = "custom";
  const Eigen::Vector3d c(9.5, 9.5, 7.5);
  s.bundles = {Bundle{{c - Eigen::Vector3d(9, 0, 0), c + Eigen::Vector3d(9, 0, 0)}, 3, 0.5},
               Bundle{{c - Eigen::Vector3d(0, 9, 0), c + Eigen::Vector3d(0, 9, 0)}, 3, 0.5}};
  s.seed = 77;
  return s;
}

}  // namespace

TEST_CASE("FOD template matches numerical projection and is non-negative") {
  const auto q = oracle::product_quadrature(20);
  for (int lmax : {2, 4, 8}) {
    CAPTURE(lmax);
    const Eigen::MatrixXd y = sh_basis<double>(q.dirs, lmax);
    Eigen::VectorXd f(q.dirs.rows());
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = std::pow(q.dirs(i, 2), lmax);
    Eigen::VectorXd proj = y.transpose() * q.weights.cwiseProduct(f);
    proj *= (1.0 / std::sqrt(4 * std::numbers::pi)) / proj[0];
    const auto& t = fod_template(lmax);
    for (int l = 0; l <= lmax; l += 2) CHECK(t[l / 2] == doctest::Approx(proj[sh_index(l, 0)]).epsilon(1e-12));
  }
  const auto grid = oracle::fibonacci_sphere(10000);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const auto c = single_fiber_fod(UnitDirection::from(oracle::random_unit(rng)), 4);
    CHECK((sh_basis<double>(grid, 4) * c.values()).minCoeff() >= -1e-9);
  }
}

TEST_CASE("single_fiber_fod symmetry and peak direction") {
  const auto z = single_fiber_fod(UnitDirection(0, 0, 1), 4);
  for (int l = 0; l <= 4; l += 2)
    for (int m = -l; m <= l; ++m)
      if (m != 0) CHECK(z[sh_index(l, m)] == 0.0);
  CHECK(z[0] == doctest::Approx(1.0 / std::sqrt(4 * std::numbers::pi)));

  const auto grid = oracle::fibonacci_sphere(10000);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto u = UnitDirection::from(oracle::random_unit(rng));
    const auto c = single_fiber_fod(u, 4);
    CHECK((single_fiber_fod(-u, 4).values() - c.values()).norm() < 1e-14);
    Eigen::Index best = 0;
    (sh_basis<double>(grid, 4) * c.values()).maxCoeff(&best);
    const Eigen::Vector3d peak = grid.row(best).transpose();
    CHECK(oracle::sym_angle(peak, u.vec()) * 180.0 / std::numbers::pi < 3.0);
  }
}

TEST_CASE("generate: determinism, masks, labels and thread independence") {
  const auto spec = small_spec();
  const auto a = generate(spec, 1);
  const auto b = generate(spec, 3);
  CHECK(a.dwi.signals.data() == b.dwi.signals.data());
  CHECK(a.truth.coeffs.data() == b.truth.coeffs.data());
  CHECK(a.dwi.signals.channels() == 63);
  CHECK(a.truth.wm.subset_of(a.truth.brain));
  CHECK(a.truth.wm.count() > 0);
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < spec.dims.voxels(); ++i) {
    const int l = a.truth.regions[i];
    if (l == 0) continue;
    ++labeled;
    CHECK(a.truth.wm[i]);
    CHECK(l <= kRegionCount);
  }
  CHECK(labeled == a.truth.wm.count());
  CHECK_NOTHROW(a.dwi.validate());

  auto other = spec;
  other.seed = 78;
  CHECK(generate(other).dwi.signals.data() != a.dwi.signals.data());
}

TEST_CASE("generate: tissue fractions sum to one inside the brain") {
  const auto p = generate(small_spec());
  const double norm = std::sqrt(4 * std::numbers::pi);
  for (auto idx : p.truth.brain.indices()) {
    const auto v = p.truth.coeffs.voxel(idx);
    const double total = (double(v[0]) + v[15] + v[16]) * norm;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(v[15] >= 0.0f);
    CHECK(v[16] >= 0.0f);
  }
}

TEST_CASE("generate: overlap voxels have two peaks") {
  const auto spec = small_spec();
  const auto p = generate(spec);
  const std::size_t center = spec.dims.index(10, 10, 8);
  const Eigen::VectorXd wm = p.truth.coeffs.voxel_vec(center).head(15).cast<double>();
  const auto peaks = dense_peaks(wm, 4);
  CHECK(peaks.size() == 2);
  const std::size_t single = spec.dims.index(3, 10, 8);
  CHECK(dense_peaks(p.truth.coeffs.voxel_vec(single).head(15).cast<double>(), 4).size() == 1);
}

TEST_CASE("generate: noise statistics") {
  auto spec = small_spec();
  spec.snr = 20;
  const auto p = generate(spec);
  CHECK(p.sigma > 0.0);
  double sum2 = 0.0;
  std::size_t n = 0;
  for (auto idx : p.truth.brain.indices()) {
    const auto clean = p.truth.noiseless.voxel(idx);
    const auto noisy = p.dwi.signals.voxel(idx);
    for (std::size_t c = 0; c < clean.size(); ++c) {
      if (clean[c] < 5 * p.sigma) continue;
      const double e = double(noisy[c]) - double(clean[c]);
      sum2 += e * e;
      ++n;
    }
  }
  REQUIRE(n > 1000);
  CHECK(std::sqrt(sum2 / double(n)) == doctest::Approx(p.sigma).epsilon(0.05));
  for (float s : p.dwi.signals.data()) CHECK_FALSE(s < 0.0f);
}

TEST_CASE("generate: over-full bundles are rejected with the voxel named") {
  auto spec = small_spec();
  spec.bundles[0].fraction = 0.7;
  CHECK_THROWS_WITH_AS(generate(spec), doctest::Contains("voxel ("), std::invalid_argument);
}

TEST_CASE("standard scenes and protocols") {
  const auto scenes = standard_scenes("B");
  REQUIRE(scenes.size() >= 3);
  std::vector<std::string> names;
  for (const auto& s : scenes) names.push_back(s.name);
  for (const char* required : {"crossing-X", "kissing-C", "three-way"})
    CHECK(std::find(names.begin(), names.end(), required) != names.end());

  CHECK(protocol_scheme("B").size() == 276);
  const auto a = protocol_scheme("A");
  CHECK(a.size() == 102);
  CHECK(extract_single_shell(a, 2500).size() == 6 + 64);
  CHECK(extract_single_shell(a, 700).size() == 6 + 32);
  CHECK_THROWS_AS(standard_scene("nope"), std::invalid_argument);

  for (auto s : scenes) {
    CAPTURE(s.name);
    s.snr = std::numeric_limits<double>::infinity();
    CHECK(s.dims == Dims{48, 48, 48});
    const auto p = generate(s);
    CHECK(double(p.truth.wm.count()) > 0.05 * double(s.dims.voxels()));
    CHECK(p.dwi.signals.channels() == 276);
    std::vector<std::size_t> per_label(kRegionCount + 1, 0);
    for (std::size_t i = 0; i < s.dims.voxels(); ++i) per_label[std::size_t(p.truth.regions[i])]++;
    std::size_t sum = 0;
    for (int l = 1; l <= kRegionCount; ++l) sum += per_label[std::size_t(l)];
    CHECK(sum == p.truth.wm.count());
    // Non-negative WM truth on a dense grid for a sample of voxels.
    const auto grid = oracle::fibonacci_sphere(2000);
    const Eigen::MatrixXd y = sh_basis<double>(grid, 4);
    const auto wm_idx = p.truth.wm.indices();
    for (std::size_t k = 0; k < wm_idx.size(); k += 97)
      CHECK((y * p.truth.coeffs.voxel_vec(wm_idx[k]).head(15).cast<double>()).minCoeff() >= -1e-6);
  }
}

TEST_CASE("scene config round trip") {
  for (const auto& s : {standard_scene("kissing-C"), small_spec()}) {
    const std::string text = spec_to_config(s);
    const auto back = spec_from_config(Config::parse(text, "scene.cfg"));
    CHECK(back.name == s.name);
    CHECK(back.dims == s.dims);
    CHECK(back.seed == s.seed);
    CHECK(back.scheme.size() == s.scheme.size());
    REQUIRE(back.bundles.size() == s.bundles.size());
    for (std::size_t b = 0; b < s.bundles.size(); ++b) {
      REQUIRE(back.bundles[b].points.size() == s.bundles[b].points.size());
      for (std::size_t k = 0; k < s.bundles[b].points.size(); ++k)
        CHECK(back.bundles[b].points[k] == s.bundles[b].points[k]);
      CHECK(back.bundles[b].radius == s.bundles[b].radius);
      CHECK(back.bundles[b].fraction == s.bundles[b].fraction);
    }
    CHECK(spec_to_config(back) == text);
  }
  const auto small = small_spec();
  const auto again = spec_from_config(Config::parse(spec_to_config(small)));
  CHECK(generate(again).dwi.signals.data() == generate(small).dwi.signals.data());
  CHECK_THROWS_AS(spec_from_config(Config::parse("[bundle.0]\npoints = 1 2\n")), ConfigError);
}

TEST_CASE("noiseless round trip through the multi-shell fit") {
  auto spec = standard_scene("crossing-X", "B");
  spec.snr = std::numeric_limits<double>::infinity();
  const auto p = generate(spec);
  FitOptions opt;
  opt.mask = &p.truth.wm;
  FitReport report;
  const auto fit = fit_mcsd(p.dwi, spec.responses(), 4, opt, &report);
  CHECK(report.failed == 0);
  double acc_sum = 0.0;
  double peak = 0.0;
  const auto idx = p.truth.wm.indices();
  for (auto v : idx) {
    acc_sum += acc(fit.voxel_vec(v).head(15).cast<double>(), p.truth.coeffs.voxel_vec(v).head(15).cast<double>());
    peak = std::max(peak, double(p.truth.coeffs.voxel_vec(v).head(15).cwiseAbs().maxCoeff()));
  }
  CHECK(acc_sum / double(idx.size()) >= 0.99);
  CHECK(mae(fit, p.truth.coeffs, p.truth.wm, 0, 15) <= 1e-3 * peak);
}
