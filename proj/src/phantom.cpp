#include "fodnet/phantom.hpp"

#include "fodnet/parallel.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fodnet {

namespace {

constexpr double kPi = std::numbers::pi;

// integral over [-1, 1] of t^p P_l(t), for p - l even and non-negative.
double power_legendre_integral(int p, int l) {
  if (l > p || (p - l) % 2 != 0) return 0.0;
  const double log_value = (l + 1) * std::log(2.0) + std::lgamma(p + 1.0) + std::lgamma((p + l) / 2 + 1.0) -
                           std::lgamma((p - l) / 2 + 1.0) - std::lgamma(p + l + 2.0);
  return std::exp(log_value);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct TubeHit {
  bool inside = false;
  Eigen::Vector3d tangent;
};

TubeHit locate(const Bundle& b, const Eigen::Vector3d& p) {
  TubeHit hit;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s + 1 < b.points.size(); ++s) {
    const Eigen::Vector3d a = b.points[s];
    const Eigen::Vector3d d = b.points[s + 1] - a;
    const double len2 = d.squaredNorm();
    if (len2 == 0.0) continue;
    const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
    const double dist = (a + t * d - p).norm();
    if (dist < best) {
      best = dist;
      hit.tangent = d.normalized();
    }
  }
  hit.inside = best <= b.radius;
  return hit;
}

std::string format_double(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::vector<Eigen::Vector3d> parse_points(const std::string& text, const Config& cfg, const std::string& key) {
  std::vector<Eigen::Vector3d> pts;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    std::replace(item.begin(), item.end(), ',', ' ');
    std::istringstream in(item);
    Eigen::Vector3d p;
    if (!(in >> p.x() >> p.y() >> p.z())) {
      throw ConfigError(cfg.source() + ": key '" + key + "': expected 'x y z; x y z; ...', got '" + text + "'");
    }
    std::string extra;
    if (in >> extra) throw ConfigError(cfg.source() + ": key '" + key + "': too many numbers in point '" + item + "'");
    pts.push_back(p);
  }
  if (pts.size() < 2) throw ConfigError(cfg.source() + ": key '" + key + "': a bundle needs at least two points");
  return pts;
}

Eigen::Vector3d center_of(const Dims& d) { return {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0}; }

Bundle straight(const Eigen::Vector3d& c, Eigen::Vector3d dir, double half_length, double radius, double fraction) {
  dir.normalize();
  return Bundle{{c - half_length * dir, c + half_length * dir}, radius, fraction};
}

// Arc of a circle in the plane spanned by unit vectors e1, e2 about `center`,
// from angle a0 to a1 (radians).
std::vector<Eigen::Vector3d> arc(const Eigen::Vector3d& center, const Eigen::Vector3d& e1, const Eigen::Vector3d& e2,
                                 double r, double a0, double a1, int segments) {
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i <= segments; ++i) {
    const double a = a0 + (a1 - a0) * i / segments;
    pts.push_back(center + r * (std::cos(a) * e1 + std::sin(a) * e2));
  }
  return pts;
}

}  // namespace

const Eigen::VectorXd& fod_template(int lmax) {
  require_even_lmax(lmax);
  static std::mutex mutex;
  static std::map<int, Eigen::VectorXd> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(lmax);
  if (it != cache.end()) return it->second;
  // c_l0 = 2 pi sqrt((2l+1)/4pi) * integral t^lmax P_l(t) dt, then unit integral (c00 = 1/sqrt(4pi)).
  Eigen::VectorXd c(lmax / 2 + 1);
  for (int l = 0; l <= lmax; l += 2)
    c[l / 2] = 2.0 * kPi * std::sqrt((2.0 * l + 1.0) / (4.0 * kPi)) * power_legendre_integral(lmax, l);
  c *= (1.0 / std::sqrt(4.0 * kPi)) / c[0];
  return cache.emplace(lmax, c).first->second;
}

SHCoeffs single_fiber_fod(const UnitDirection& u, int lmax) {
  const Eigen::VectorXd& t = fod_template(lmax);
  Eigen::VectorXd y(n_coeffs(lmax));
  sh_basis_row(u.x(), u.y(), u.z(), lmax, y);
  Eigen::VectorXd c(n_coeffs(lmax));
  for (int l = 0; l <= lmax; l += 2) {
    const double k = t[l / 2] * std::sqrt(4.0 * kPi / (2.0 * l + 1.0));
    for (int m = -l; m <= l; ++m) c[sh_index(l, m)] = k * y[sh_index(l, m)];
  }
  return SHCoeffs(lmax, c);
}

ResponseSet PhantomSpec::responses() const {
  std::vector<double> bvals;
  for (const auto& s : detect_shells(scheme)) bvals.push_back(s.is_b0(scheme.shell_tolerance) ? 0.0 : s.nominal_b);
  return model_responses(bvals, lmax, tissues, true);
}

std::string region_name(int label) {
  static const char* names[] = {"none", "anterior-left", "anterior-right", "posterior-left", "posterior-right",
                                "midline"};
  if (label < 0 || label > kRegionCount) throw std::out_of_range("unknown region label " + std::to_string(label));
  return names[label];
}

Phantom generate(const PhantomSpec& spec, int threads) {
  require_even_lmax(spec.lmax);
  spec.scheme.validate();
  if (spec.scheme.b0_count() == 0) throw std::invalid_argument("phantom gradient scheme has no b=0 entries");
  for (std::size_t b = 0; b < spec.bundles.size(); ++b) {
    const auto& bundle = spec.bundles[b];
    if (bundle.points.size() < 2 || !(bundle.radius > 0) || !(bundle.fraction > 0) || bundle.fraction > 1)
      throw std::invalid_argument("bundle " + std::to_string(b) + " needs >= 2 points, radius > 0, fraction in (0, 1]");
  }
  const Dims dims = spec.dims;
  const TissueLayout layout{spec.lmax, true, true};
  const ResponseSet resp = spec.responses();
  const Eigen::MatrixXd conv = build_convolution(spec.scheme, resp, layout).matrix;
  const int nwm = layout.wm_count();
  const int nch = int(spec.scheme.size());
  const double iso_norm = 1.0 / std::sqrt(4.0 * kPi);
  const Eigen::Vector3d center = center_of(dims);
  const double min_radius = spec.brain.radii.minCoeff();

  Phantom out;
  out.truth.coeffs = CoeffVolume(dims, layout);
  out.truth.brain = Mask(dims);
  out.truth.wm = Mask(dims);
  out.truth.regions = LabelVolume(dims);
  out.truth.noiseless = Volume(dims, nch);
  std::vector<char> overfull(dims.voxels(), 0);

  parallel_for(dims.voxels(), resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd x(layout.channels());
    for (std::size_t idx = begin; idx < end; ++idx) {
      const Eigen::Vector3d p = dims.coords(idx).cast<double>();
      const Eigen::Vector3d rel = p - center;
      const double rn = rel.cwiseQuotient(spec.brain.radii).norm();
      if (rn > 1.0) continue;
      x.setZero();
      double wm = 0.0;
      for (const auto& b : spec.bundles) {
        const TubeHit hit = locate(b, p);
        if (!hit.inside) continue;
        wm += b.fraction;
        x.head(nwm) += b.fraction * single_fiber_fod(UnitDirection::from(hit.tangent), spec.lmax).values();
      }
      if (wm > 1.0 + 1e-9) {
        overfull[idx] = 1;
        continue;
      }
      const double depth = (1.0 - rn) * min_radius;
      const double csf_share = depth < spec.brain.rim ? spec.brain.rim_csf : spec.brain.interior_csf;
      const double rest = std::max(0.0, 1.0 - wm);
      x[layout.gm_channel()] = rest * (1.0 - csf_share) * iso_norm;
      x[layout.csf_channel()] = rest * csf_share * iso_norm;
      out.truth.coeffs.voxel_vec(idx) = x.cast<float>();
      out.truth.noiseless.voxel_vec(idx) = (conv * x).cast<float>();
      out.truth.brain.set(idx, true);
      if (wm >= kWmMaskThreshold) {
        out.truth.wm.set(idx, true);
        int label;
        if (std::abs(rel.x()) < 3.0)
          label = 5;
        else
          label = 1 + (rel.x() >= 0 ? 1 : 0) + (rel.y() >= 0 ? 2 : 0);
        out.truth.regions.set(idx, label);
      }
    }
  });
  for (std::size_t idx = 0; idx < overfull.size(); ++idx)
    if (overfull[idx]) {
      const auto c = dims.coords(idx);
      throw std::invalid_argument("bundle fractions exceed 1 at voxel (" + std::to_string(c.x()) + ", " +
                                  std::to_string(c.y()) + ", " + std::to_string(c.z()) + ")");
    }

  // Noise level from the mean b0 signal over the brain.
  std::vector<int> b0;
  for (std::size_t i = 0; i < spec.scheme.size(); ++i)
    if (spec.scheme.is_b0(i)) b0.push_back(int(i));
  double b0_sum = 0.0;
  std::size_t b0_count = 0;
  for (std::size_t idx = 0; idx < dims.voxels(); ++idx) {
    if (!out.truth.brain[idx]) continue;
    for (int c : b0) b0_sum += out.truth.noiseless.at(idx, c);
    b0_count += b0.size();
  }
  const double b0_mean = b0_count ? b0_sum / double(b0_count) : 0.0;
  out.sigma = spec.noiseless() ? 0.0 : b0_mean / spec.snr;

  out.dwi.scheme = spec.scheme;
  out.dwi.signals = out.truth.noiseless;
  if (out.sigma > 0.0) {
    const std::uint64_t seed_mix = splitmix64(spec.seed);
    parallel_for(dims.voxels(), resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
      for (std::size_t idx = begin; idx < end; ++idx) {
        std::mt19937_64 rng(splitmix64(seed_mix ^ splitmix64(idx)));
        std::normal_distribution<double> noise(0.0, out.sigma);
        for (auto& s : out.dwi.signals.voxel(idx)) s = float(std::max(0.0, double(s) + noise(rng)));
      }
    });
  }
  return out;
}

GradientScheme protocol_scheme(const std::string& name) {
  if (name == "A") return make_scheme(6, {{700, 32}, {2500, 64}});
  if (name == "B") return make_scheme(6, {{1000, 90}, {2000, 90}, {3000, 90}});
  throw std::invalid_argument("unknown protocol '" + name + "' (expected A or B)");
}

double single_shell_b(const std::string& protocol) {
  if (protocol == "A") return 2500;
  if (protocol == "B") return 2000;
  throw std::invalid_argument("unknown protocol '" + protocol + "' (expected A or B)");
}

PhantomSpec standard_scene(const std::string& name, const std::string& protocol) {
  PhantomSpec s;
  s.name = name;
  s.protocol = protocol;
  s.scheme = protocol_scheme(protocol);
  const Eigen::Vector3d c = center_of(s.dims);
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  if (name == "crossing-X") {
    s.seed = 11;
    s.bundles = {straight(c, ex, 22, 7, 0.5), straight(c, ey, 22, 7, 0.5)};
  } else if (name == "kissing-C") {
    // Two semicircular arcs touching tangentially at the center.
    s.seed = 12;
    s.bundles = {Bundle{arc(c - 12 * ey, ex, ey, 12, 0.0, kPi, 32), 6, 0.5},
                 Bundle{arc(c + 12 * ey, ex, ey, 12, kPi, 2 * kPi, 32), 6, 0.5}};
  } else if (name == "three-way") {
    s.seed = 13;
    for (int k = 0; k < 3; ++k) {
      const double a = k * kPi / 3.0;
      s.bundles.push_back(straight(c, std::cos(a) * ex + std::sin(a) * ey, 22, 6, 1.0 / 3.0));
    }
  } else if (name == "crossing-oblique") {
    s.seed = 14;
    s.bundles = {straight(c, Eigen::Vector3d(1.0, 0.2, 0.5), 22, 6, 0.5),
                 straight(c, Eigen::Vector3d(1.0, 1.2, -0.3), 22, 6, 0.5)};
  } else if (name == "arc-U") {
    // U-shaped bundle in the x-z plane crossed at its bottom by a straight bundle along y.
    s.seed = 15;
    const Eigen::Vector3d uc = c + 4 * ez;
    std::vector<Eigen::Vector3d> u{uc - 12 * ex + 14 * ez};
    for (const auto& p : arc(uc, ex, ez, 12, kPi, 2 * kPi, 32)) u.push_back(p);
    u.push_back(uc + 12 * ex + 14 * ez);
    s.bundles = {Bundle{u, 5, 0.5}, straight(c - 8 * ez, ey, 22, 5, 0.5)};
  } else {
    throw std::invalid_argument("unknown scene '" + name +
                                "' (known: crossing-X, kissing-C, three-way, crossing-oblique, arc-U)");
  }
  return s;
}

std::vector<PhantomSpec> standard_scenes(const std::string& protocol) {
  std::vector<PhantomSpec> out;
  for (const char* n : {"crossing-X", "kissing-C", "three-way", "crossing-oblique", "arc-U"})
    out.push_back(standard_scene(n, protocol));
  return out;
}

PhantomSpec spec_from_config(const Config& cfg) {
  PhantomSpec s;
  s.name = cfg.get("scene.name", s.name);
  if (cfg.has("scene.dims")) {
    const Eigen::Vector3d d = cfg.get_vec3("scene.dims");
    s.dims = Dims{int(d.x()), int(d.y()), int(d.z())};
    if (s.dims.min() < 1) throw ConfigError(cfg.source() + ": scene.dims must be positive");
  }
  s.lmax = int(cfg.get_int("scene.lmax", s.lmax));
  const std::string snr = cfg.get("scene.snr", "30");
  s.snr = (snr == "inf" || snr == "none") ? std::numeric_limits<double>::infinity() : cfg.get_double("scene.snr");
  s.seed = std::uint64_t(cfg.get_int("scene.seed", 1));
  s.protocol = cfg.get("scene.protocol", "B");
  if (s.protocol == "custom") {
    std::vector<std::pair<double, int>> shells;
    for (const auto& item : cfg.get_list("scene.shells")) {
      const auto colon = item.find(':');
      try {
        if (colon == std::string::npos) throw std::invalid_argument(item);
        shells.emplace_back(std::stod(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
      } catch (const std::exception&) {
        throw ConfigError(cfg.source() + ": scene.shells entries must look like 'b:count', got '" + item + "'");
      }
    }
    s.scheme = make_scheme(int(cfg.get_int("scene.b0", 6)), shells);
  } else {
    try {
      s.scheme = protocol_scheme(s.protocol);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(cfg.source() + ": scene.protocol: " + e.what());
    }
  }
  if (cfg.has("brain.radii")) s.brain.radii = cfg.get_vec3("brain.radii");
  s.brain.rim = cfg.get_double("brain.rim", s.brain.rim);
  s.brain.interior_csf = cfg.get_double("brain.interior_csf", s.brain.interior_csf);
  s.brain.rim_csf = cfg.get_double("brain.rim_csf", s.brain.rim_csf);
  auto tissue = [&](const std::string& name, TissueModel& m) {
    const std::string p = "tissue." + name + ".";
    m.s0 = cfg.get_double(p + "s0", m.s0);
    m.d_par = cfg.get_double(p + "d_par", m.d_par);
    m.d_perp = cfg.get_double(p + "d_perp", m.d_perp);
  };
  tissue("wm", s.tissues.wm);
  tissue("gm", s.tissues.gm);
  tissue("csf", s.tissues.csf);
  auto names = cfg.sections("bundle");
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  for (const auto& n : names) {
    const std::string p = "bundle." + n + ".";
    Bundle b;
    b.points = parse_points(cfg.get(p + "points"), cfg, p + "points");
    b.radius = cfg.get_double(p + "radius", b.radius);
    b.fraction = cfg.get_double(p + "fraction", b.fraction);
    s.bundles.push_back(b);
  }
  return s;
}

std::string spec_to_config(const PhantomSpec& s) {
  std::ostringstream out;
  out << "[scene]\n";
  out << "name = " << s.name << "\n";
  out << "dims = " << s.dims.x << ", " << s.dims.y << ", " << s.dims.z << "\n";
  out << "lmax = " << s.lmax << "\n";
  out << "snr = " << (s.noiseless() ? std::string("inf") : format_double(s.snr)) << "\n";
  out << "seed = " << s.seed << "\n";
  const bool named = s.protocol == "A" || s.protocol == "B";
  out << "protocol = " << (named ? s.protocol : std::string("custom")) << "\n";
  if (!named) {
    const auto shells = detect_shells(s.scheme);
    out << "b0 = " << s.scheme.b0_count() << "\nshells = ";
    bool first = true;
    for (const auto& sh : shells) {
      if (sh.is_b0(s.scheme.shell_tolerance)) continue;
      out << (first ? "" : ", ") << format_double(sh.nominal_b) << ":" << sh.members.size();
      first = false;
    }
    out << "\n";
  }
  out << "\n[brain]\n";
  out << "radii = " << format_double(s.brain.radii.x()) << ", " << format_double(s.brain.radii.y()) << ", "
      << format_double(s.brain.radii.z()) << "\n";
  out << "rim = " << format_double(s.brain.rim) << "\n";
  out << "interior_csf = " << format_double(s.brain.interior_csf) << "\n";
  out << "rim_csf = " << format_double(s.brain.rim_csf) << "\n";
  auto tissue = [&](const char* name, const TissueModel& m) {
    out << "\n[tissue." << name << "]\n";
    out << "s0 = " << format_double(m.s0) << "\nd_par = " << format_double(m.d_par)
        << "\nd_perp = " << format_double(m.d_perp) << "\n";
  };
  tissue("wm", s.tissues.wm);
  tissue("gm", s.tissues.gm);
  tissue("csf", s.tissues.csf);
  for (std::size_t b = 0; b < s.bundles.size(); ++b) {
    const auto& bundle = s.bundles[b];
    out << "\n[bundle." << b << "]\npoints = ";
    for (std::size_t k = 0; k < bundle.points.size(); ++k) {
      const auto& p = bundle.points[k];
      out << (k ? "; " : "") << format_double(p.x()) << " " << format_double(p.y()) << " " << format_double(p.z());
    }
    out << "\nradius = " << format_double(bundle.radius) << "\nfraction = " << format_double(bundle.fraction) << "\n";
  }
  return out.str();
}

}  // namespace fodnet
