#include "fodnet/gradients.hpp"

#include "fodnet/shmath.hpp"
#include "fodnet/volume.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace fodnet {

std::size_t GradientScheme::b0_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += is_b0(i) ? 1 : 0;
  return n;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> GradientScheme::directions(const std::vector<std::size_t>& idx) const {
  Eigen::Matrix<double, Eigen::Dynamic, 3> d(Eigen::Index(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) d.row(Eigen::Index(k)) = entries.at(idx[k]).dir.transpose();
  return d;
}

GradientScheme GradientScheme::select(const std::vector<std::size_t>& idx) const {
  GradientScheme out;
  out.shell_tolerance = shell_tolerance;
  out.entries.reserve(idx.size());
  for (std::size_t i : idx) out.entries.push_back(entries.at(i));
  return out;
}

void GradientScheme::validate() const {
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& e = entries[i];
    if (!(e.b >= 0) || !std::isfinite(e.b)) throw std::invalid_argument("gradient entry " + std::to_string(i) + ": invalid b-value");
    if (!is_b0(i) && std::abs(e.dir.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("gradient entry " + std::to_string(i) + ": direction is not unit norm");
  }
}

std::vector<Shell> detect_shells(const GradientScheme& g) {
  std::vector<std::size_t> order(g.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return g.entries[a].b < g.entries[b].b; });

  std::vector<Shell> shells;
  double sum = 0.0;
  for (std::size_t i : order) {
    const double b = g.entries[i].b;
    if (shells.empty() || b - shells.back().nominal_b > g.shell_tolerance) {
      shells.push_back(Shell{b, {}});
      sum = 0.0;
    }
    Shell& s = shells.back();
    s.members.push_back(i);
    sum += b;
    s.nominal_b = sum / double(s.members.size());
  }
  for (auto& s : shells) std::sort(s.members.begin(), s.members.end());
  return shells;
}

std::vector<std::size_t> single_shell_indices(const GradientScheme& g, double b) {
  const auto shells = detect_shells(g);
  const Shell* chosen = nullptr;
  for (const auto& s : shells)
    if (!s.is_b0(g.shell_tolerance) && std::abs(s.nominal_b - b) <= g.shell_tolerance) chosen = &s;
  if (!chosen) throw std::invalid_argument("no shell at b=" + std::to_string(b) + " in gradient scheme");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.is_b0(i) || std::binary_search(chosen->members.begin(), chosen->members.end(), i)) out.push_back(i);
  return out;
}

GradientScheme extract_single_shell(const GradientScheme& g, double b) { return g.select(single_shell_indices(g, b)); }

std::vector<std::size_t> reorder_halfsphere_indices(const GradientScheme& g) {
  int nonzero_shells = 0;
  for (const auto& s : detect_shells(g)) nonzero_shells += s.is_b0(g.shell_tolerance) ? 0 : 1;
  if (nonzero_shells > 1) throw std::invalid_argument("reorder_halfsphere: scheme has more than one diffusion shell");

  std::vector<std::size_t> out;
  std::vector<std::size_t> dw;
  for (std::size_t i = 0; i < g.size(); ++i) (g.is_b0(i) ? out : dw).push_back(i);
  if (dw.empty()) return out;

  // max_cos[k]: largest |cos| from candidate k to any chosen direction.
  std::vector<double> max_cos(dw.size(), -1.0);
  std::vector<bool> used(dw.size(), false);
  std::size_t current = 0;
  for (std::size_t step = 0; step < dw.size(); ++step) {
    used[current] = true;
    out.push_back(dw[current]);
    const Eigen::Vector3d& c = g.entries[dw[current]].dir;
    std::size_t best = dw.size();
    double best_cos = 2.0;
    for (std::size_t k = 0; k < dw.size(); ++k) {
      if (used[k]) continue;
      max_cos[k] = std::max(max_cos[k], std::abs(c.dot(g.entries[dw[k]].dir)));
      // Largest minimum angle == smallest maximum |cos|; ties go to the lower index.
      if (max_cos[k] < best_cos) {
        best_cos = max_cos[k];
        best = k;
      }
    }
    current = best;
  }
  return out;
}

GradientScheme reorder_halfsphere(const GradientScheme& g) { return g.select(reorder_halfsphere_indices(g)); }

std::vector<std::size_t> subsample_indices(const GradientScheme& g, double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw std::invalid_argument("subsample: fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  constexpr double standard[] = {0.25, 0.5, 0.75, 1.0};
  if (std::none_of(std::begin(standard), std::end(standard), [&](double f) { return std::abs(f - keep_fraction) < 1e-12; }))
    std::cerr << "warning: subsample fraction " << keep_fraction << " is not one of 0.25, 0.5, 0.75, 1.0\n";

  const std::size_t n_b0 = g.b0_count();
  const std::size_t n_dw = g.size() - n_b0;
  auto keep = [&](std::size_t n) { return std::size_t(std::ceil(keep_fraction * double(n) - 1e-9)); };
  const std::size_t keep_b0 = n_b0 == 0 ? 0 : std::max<std::size_t>(1, keep(n_b0));
  const std::size_t keep_dw = keep(n_dw);
  if (keep_dw == 0) throw std::invalid_argument("subsample: no diffusion directions would remain");

  std::vector<std::size_t> out;
  std::size_t b0_seen = 0, dw_seen = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.is_b0(i)) {
      if (b0_seen++ < keep_b0) out.push_back(i);
    } else if (dw_seen++ < keep_dw) {
      out.push_back(i);
    }
  }
  return out;
}

GradientScheme subsample(const GradientScheme& g, double keep_fraction) {
  return g.select(subsample_indices(g, keep_fraction));
}

double min_symmetric_angle(const Eigen::Matrix<double, Eigen::Dynamic, 3>& dirs) {
  double max_cos = 0.0;
  for (Eigen::Index i = 0; i < dirs.rows(); ++i)
    for (Eigen::Index j = i + 1; j < dirs.rows(); ++j) max_cos = std::max(max_cos, std::abs(dirs.row(i).dot(dirs.row(j))));
  return std::acos(std::min(1.0, max_cos));
}

Eigen::Matrix<double, Eigen::Dynamic, 3> half_sphere_directions(int n) {
  if (n <= 0) throw std::invalid_argument("half_sphere_directions: n must be positive");
  Eigen::Matrix<double, Eigen::Dynamic, 3> d(n, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (i + 0.5) / n;
    const double r = std::sqrt(1.0 - z * z);
    d.row(i) << r * std::cos(golden * i), r * std::sin(golden * i), z;
  }
  Eigen::Matrix<double, Eigen::Dynamic, 3> f(n, 3);
  for (int it = 0; it < 300; ++it) {
    f.setZero();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        for (double s : {1.0, -1.0}) {
          const Eigen::RowVector3d r = d.row(i) - s * d.row(j);
          const double len = r.norm();
          f.row(i) += r / (len * len * len);
        }
      }
    }
    const double step = 0.5 / (n * n);
    for (int i = 0; i < n; ++i) {
      Eigen::RowVector3d p = d.row(i) + step * f.row(i);
      d.row(i) = p.normalized();
    }
  }
  for (int i = 0; i < n; ++i)
    if (d(i, 2) < 0) d.row(i) *= -1.0;
  return d;
}

namespace {

std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

GradientScheme read_fsl(const std::filesystem::path& bvecs, const std::filesystem::path& bvals) {
  const auto vec_rows = read_rows(bvecs);
  const auto val_rows = read_rows(bvals);
  if (vec_rows.size() != 3) throw FormatError(bvecs.string() + ": expected 3 rows, found " + std::to_string(vec_rows.size()));
  if (val_rows.size() != 1) throw FormatError(bvals.string() + ": expected 1 row, found " + std::to_string(val_rows.size()));
  const std::size_t n = val_rows[0].size();
  for (int r = 0; r < 3; ++r)
    if (vec_rows[r].size() != n)
      throw FormatError(bvecs.string() + ":" + std::to_string(r + 1) + ": expected " + std::to_string(n) + " columns");
  GradientScheme g;
  for (std::size_t i = 0; i < n; ++i) {
    GradientEntry e;
    e.b = val_rows[0][i];
    e.dir = {vec_rows[0][i], vec_rows[1][i], vec_rows[2][i]};
    const double len = e.dir.norm();
    if (e.b > g.shell_tolerance) {
      if (std::abs(len - 1.0) > 1e-3)
        throw FormatError(bvecs.string() + ": column " + std::to_string(i + 1) + " is not a unit vector");
      e.dir /= len;
    }
    g.entries.push_back(e);
  }
  g.validate();
  return g;
}

void write_fsl(const GradientScheme& g, const std::filesystem::path& bvecs, const std::filesystem::path& bvals) {
  std::ofstream vec(bvecs), val(bvals);
  if (!vec || !val) throw std::runtime_error("cannot write gradient table");
  vec.precision(17);
  val.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < g.size(); ++i) vec << (i ? " " : "") << g.entries[i].dir[r];
    vec << '\n';
  }
  for (std::size_t i = 0; i < g.size(); ++i) val << (i ? " " : "") << g.entries[i].b;
  val << '\n';
}

GradientScheme make_scheme(int n_b0, const std::vector<std::pair<double, int>>& shells) {
  GradientScheme g;
  for (int i = 0; i < n_b0; ++i) g.entries.push_back({0.0, {0, 0, 0}});
  int k = 0;
  for (const auto& [b, n] : shells) {
    // Each shell gets its own fixed rotation so shells do not share directions.
    const Eigen::Matrix3d rot = RotationSpec{0.37 * k, 0.23 * k, -0.11 * k}.matrix();
    const auto dirs = half_sphere_directions(n);
    for (int i = 0; i < n; ++i) g.entries.push_back({b, rot * dirs.row(i).transpose()});
    ++k;
  }
  return g;
}

}  // namespace fodnet
