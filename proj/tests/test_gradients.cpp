#include <doctest.h>

#include "fodnet/gradients.hpp"
#include "sphere_oracles.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <fstream>
#include <random>

using namespace fodnet;

namespace {

GradientScheme from_bvals(const std::vector<double>& bvals) {
  GradientScheme g;
  std::mt19937_64 rng(11);
  for (double b : bvals) g.entries.push_back({b, b > 70 ? oracle::random_unit(rng) : Eigen::Vector3d::Zero()});
  return g;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("detect_shells: simple clustering") {
  auto shells = detect_shells(from_bvals({0, 0, 700, 700, 2500}));
  REQUIRE(shells.size() == 3);
  CHECK(shells[0].nominal_b == 0);
  CHECK(shells[0].members == std::vector<std::size_t>{0, 1});
  CHECK(shells[1].nominal_b == 700);
  CHECK(shells[1].members == std::vector<std::size_t>{2, 3});
  CHECK(shells[2].members == std::vector<std::size_t>{4});

  auto g = from_bvals({0, 995, 1005});
  g.shell_tolerance = 50;
  shells = detect_shells(g);
  REQUIRE(shells.size() == 2);
  CHECK(shells[1].nominal_b == doctest::Approx(1000));
  CHECK(shells[1].members.size() == 2);
}

TEST_CASE("detect_shells: HCP-like scheme partitions the entries") {
  const GradientScheme g = make_scheme(18, {{1000, 90}, {2000, 90}, {3000, 90}});
  const auto shells = detect_shells(g);
  REQUIRE(shells.size() == 4);
  CHECK(shells[0].members.size() == 18);
  for (int s = 1; s < 4; ++s) CHECK(shells[s].members.size() == 90);
  std::vector<std::size_t> all;
  for (const auto& s : shells) all.insert(all.end(), s.members.begin(), s.members.end());
  std::vector<std::size_t> expect(g.size());
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted(all) == expect);
}

TEST_CASE("extract_single_shell") {
  const GradientScheme qs = make_scheme(11, {{300, 8}, {700, 32}, {2500, 64}});
  const GradientScheme ss = extract_single_shell(qs, 700);
  CHECK(ss.size() == 43);
  CHECK(ss.b0_count() == 11);

  const GradientScheme hcp = make_scheme(18, {{1000, 90}, {2000, 90}, {3000, 90}});
  CHECK(extract_single_shell(hcp, 2000).size() == 108);

  const GradientScheme one = make_scheme(5, {{1000, 30}});
  const GradientScheme same = extract_single_shell(one, 1000);
  REQUIRE(same.size() == one.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(same.entries[i].dir == one.entries[i].dir);

  CHECK_THROWS_AS(extract_single_shell(qs, 1500), std::invalid_argument);
}

TEST_CASE("half-sphere directions are well spread") {
  const auto d = half_sphere_directions(64);
  for (int i = 0; i < 64; ++i) CHECK(d.row(i).norm() == doctest::Approx(1.0));
  // A uniform 64-point half-sphere set has nearest neighbours around 14-17 degrees.
  CHECK(min_symmetric_angle(d) > 10.0 * std::numbers::pi / 180.0);
}

TEST_CASE("reorder_halfsphere: permutation, b0 first") {
  const GradientScheme g = make_scheme(6, {{1000, 30}});
  const auto perm = reorder_halfsphere_indices(g);
  std::vector<std::size_t> expect(g.size());
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted(perm) == expect);
  for (int i = 0; i < 6; ++i) CHECK(g.is_b0(perm[i]));

  GradientScheme two;
  two.entries = {{1000, {0, 0, 1}}, {1000, {0, 0, -1}}};
  CHECK(sorted(reorder_halfsphere_indices(two)) == std::vector<std::size_t>{0, 1});

  CHECK_THROWS(reorder_halfsphere(make_scheme(1, {{1000, 10}, {2000, 10}})));
}

TEST_CASE("reorder_halfsphere: octahedron picks an orthogonal triple first") {
  GradientScheme g;
  for (Eigen::Vector3d v : {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-1, 0, 0), Eigen::Vector3d(0, 1, 0),
                            Eigen::Vector3d(0, -1, 0), Eigen::Vector3d(0, 0, 1), Eigen::Vector3d(0, 0, -1)})
    g.entries.push_back({1000, v});
  const auto perm = reorder_halfsphere_indices(g);

  // Brute force: best achievable min symmetric angle over all 3-subsets that
  // contain the starting direction.
  double best = 0.0;
  for (int a = 1; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b) {
      const std::vector<std::size_t> s{0, std::size_t(a), std::size_t(b)};
      best = std::max(best, min_symmetric_angle(g.directions(s)));
    }
  const double got = min_symmetric_angle(g.directions({perm[0], perm[1], perm[2]}));
  CHECK(got == doctest::Approx(best));
  CHECK(got == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("reorder_halfsphere: prefixes beat random subsets") {
  // Shuffle a well-spread 64-direction shell so the input order carries no structure.
  GradientScheme g = make_scheme(0, {{2500, 64}});
  std::mt19937_64 rng(12);
  std::shuffle(g.entries.begin(), g.entries.end(), rng);
  const GradientScheme r = reorder_halfsphere(g);
  for (int k : {16, 32, 48}) {
    std::vector<std::size_t> prefix(k);
    std::iota(prefix.begin(), prefix.end(), 0);
    const double ours = min_symmetric_angle(r.directions(prefix));
    std::vector<double> random_angles;
    std::vector<std::size_t> all(64);
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < 1000; ++t) {
      std::shuffle(all.begin(), all.end(), rng);
      random_angles.push_back(min_symmetric_angle(g.directions({all.begin(), all.begin() + k})));
    }
    std::nth_element(random_angles.begin(), random_angles.begin() + 500, random_angles.end());
    CHECK(ours >= random_angles[500]);
  }
}

TEST_CASE("subsample") {
  const GradientScheme g = reorder_halfsphere(make_scheme(11, {{2500, 64}}));
  const GradientScheme half = subsample(g, 0.5);
  CHECK(half.b0_count() == 6);
  CHECK(half.size() - half.b0_count() == 32);

  const GradientScheme full = subsample(g, 1.0);
  REQUIRE(full.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(full.entries[i].dir == g.entries[i].dir);

  const GradientScheme g90 = make_scheme(6, {{1000, 90}});
  const GradientScheme quarter = subsample(g90, 0.25);
  CHECK(quarter.size() - quarter.b0_count() == 23);
  CHECK(quarter.b0_count() == 2);

  // Prefix monotone.
  const auto q = subsample_indices(g, 0.25);
  const auto h = subsample_indices(g, 0.5);
  CHECK(std::includes(h.begin(), h.end(), q.begin(), q.end()));

  CHECK_THROWS(subsample(g, 0.0));
  CHECK_THROWS(subsample(make_scheme(4, {}), 0.5));
}

TEST_CASE("FSL text round trip and parse errors") {
  const auto dir = std::filesystem::temp_directory_path() / "fodnet_grad_test";
  std::filesystem::create_directories(dir);
  const GradientScheme g = make_scheme(3, {{1000, 12}, {2000, 12}});
  write_fsl(g, dir / "bvecs", dir / "bvals");
  const GradientScheme back = read_fsl(dir / "bvecs", dir / "bvals");
  REQUIRE(back.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(back.entries[i].b == g.entries[i].b);
    CHECK((back.entries[i].dir - g.entries[i].dir).norm() < 1e-15);
  }
  {
    std::ofstream bad(dir / "bvals_bad");
    bad << "0 1000 x1000\n";
  }
  try {
    read_fsl(dir / "bvecs", dir / "bvals_bad");
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);
  }
}
