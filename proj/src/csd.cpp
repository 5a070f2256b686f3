#include "fodnet/csd.hpp"

#include "fodnet/parallel.hpp"
#include "fodnet/shmath.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fodnet {

namespace {

const double kY00 = 0.5 / std::sqrt(std::numbers::pi);

// Nodes and weights on [-1, 1] by Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(std::size_t(n), 0.0);
  w.assign(std::size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double step = p1 / dp;
      t -= step;
      if (std::abs(step) < 1e-15) break;
    }
    x[std::size_t(i)] = t;
    w[std::size_t(i)] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(mid));
  return 0.5 * (lower + upper);
}

CoeffVolume fit_volume(const DwiVolume& dwi, const CsdModel& model,
                       const std::function<void(std::size_t, Eigen::VectorXd&)>& load, const FitOptions& opt,
                       FitReport* report) {
  const Dims dims = dwi.dims();
  CoeffVolume out(dims, model.layout());
  out.voxel_size_mm = dwi.signals.voxel_size_mm;
  std::vector<std::size_t> voxels;
  if (opt.mask) {
    if (!(opt.mask->dims() == dims)) throw std::invalid_argument("mask dimensions differ from the DWI");
    voxels = opt.mask->indices();
  } else {
    voxels.resize(dims.voxels());
    for (std::size_t i = 0; i < voxels.size(); ++i) voxels[i] = i;
  }
  std::vector<char> failed(voxels.size(), 0);
  std::vector<int> iterations(voxels.size(), 0);
  parallel_for(voxels.size(), resolve_threads(opt.threads), [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd d;
    for (std::size_t k = begin; k < end; ++k) {
      load(voxels[k], d);
      auto dst = out.voxel_vec(voxels[k]);
      if (!d.allFinite()) {
        failed[k] = 1;
        continue;
      }
      const QpResult r = model.fit(d);
      iterations[k] = r.iterations;
      if (!r.converged || !r.x.allFinite()) {
        failed[k] = 1;
        continue;
      }
      dst = r.x.cast<float>();
    }
  });
  if (report) {
    report->fitted = voxels.size();
    report->failed = std::size_t(std::count(failed.begin(), failed.end(), 1));
    report->max_iterations = iterations.empty() ? 0 : *std::max_element(iterations.begin(), iterations.end());
  }
  return out;
}

ResponseSet responses_for(const ResponseSet& resp, int lmax) {
  require_even_lmax(lmax);
  resp.validate();
  if (resp.lmax() < lmax)
    throw std::invalid_argument("responses only cover lmax " + std::to_string(resp.lmax()) + " but lmax " +
                                std::to_string(lmax) + " was requested");
  return resp.truncated(lmax);
}

}  // namespace

int ResponseSet::shell_for(double b, double tolerance) const {
  int best = -1;
  double best_gap = tolerance;
  for (std::size_t s = 0; s < bvals.size(); ++s) {
    const double gap = std::abs(bvals[s] - b);
    if (gap <= best_gap) {
      best_gap = gap;
      best = int(s);
    }
  }
  return best;
}

ResponseSet ResponseSet::truncated(int l) const {
  if (l > lmax()) throw std::invalid_argument("cannot extend responses beyond their lmax");
  ResponseSet r = *this;
  r.wm = wm.leftCols(l / 2 + 1);
  return r;
}

void ResponseSet::validate() const {
  const Eigen::Index n = Eigen::Index(bvals.size());
  if (n == 0) throw std::invalid_argument("response set has no shells");
  if (wm.rows() != n || wm.cols() < 1) throw std::invalid_argument("WM response must have one row per shell");
  if (csf.size() != n) throw std::invalid_argument("CSF response must have one value per shell");
  if (has_gm() && gm.size() != n) throw std::invalid_argument("GM response must have one value per shell");
  for (Eigen::Index s = 0; s < n; ++s) {
    const std::string shell = "shell b=" + std::to_string(int(std::lround(bvals[std::size_t(s)])));
    if (s > 0 && bvals[std::size_t(s)] <= bvals[std::size_t(s - 1)])
      throw std::invalid_argument("response b-values must ascend (" + shell + ")");
    if (!(wm(s, 0) > 0)) throw std::invalid_argument("WM response l=0 factor must be positive at " + shell);
    if (!(csf[s] > 0)) throw std::invalid_argument("CSF response must be positive at " + shell);
    if (has_gm() && !(gm[s] > 0)) throw std::invalid_argument("GM response must be positive at " + shell);
    for (Eigen::Index k = 1; k < wm.cols(); ++k)
      if (std::abs(wm(s, k)) > std::abs(wm(s, k - 1)) * (1.0 + 1e-9) + 1e-12)
        throw std::invalid_argument("WM response magnitude increases with degree at " + shell + " (l=" +
                                    std::to_string(2 * k) + ")");
  }
}

ResponseSet parse_responses(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  std::vector<double> b_wm, b_gm, b_csf;
  std::vector<std::vector<double>> rows_wm;
  std::vector<double> v_gm, v_csf;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw FormatError(where + "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "wm" && section != "gm" && section != "csf")
        throw FormatError(where + "unknown tissue section '" + section + "' (expected wm, gm or csf)");
      continue;
    }
    if (section.empty()) throw FormatError(where + "value row before any tissue section");
    std::istringstream row(t);
    std::vector<double> values;
    std::string tok;
    while (row >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError(where + "not a number: '" + tok + "'");
      }
    }
    if (values.size() < 2) throw FormatError(where + "expected a b-value followed by at least one factor");
    if (section == "wm") {
      b_wm.push_back(values[0]);
      rows_wm.emplace_back(values.begin() + 1, values.end());
      if (rows_wm.back().size() != rows_wm.front().size())
        throw FormatError(where + "WM rows must all have the same number of factors");
    } else {
      if (values.size() != 2) throw FormatError(where + "isotropic tissues take exactly one factor per shell");
      (section == "gm" ? b_gm : b_csf).push_back(values[0]);
      (section == "gm" ? v_gm : v_csf).push_back(values[1]);
    }
  }
  if (b_wm.empty()) throw FormatError(source + ": missing [wm] section");
  if (b_csf.empty()) throw FormatError(source + ": missing [csf] section");
  if (b_csf != b_wm || (!b_gm.empty() && b_gm != b_wm))
    throw FormatError(source + ": tissue sections list different b-values");
  ResponseSet r;
  r.bvals = b_wm;
  r.wm.resize(Eigen::Index(rows_wm.size()), Eigen::Index(rows_wm.front().size()));
  for (std::size_t s = 0; s < rows_wm.size(); ++s)
    for (std::size_t k = 0; k < rows_wm[s].size(); ++k) r.wm(Eigen::Index(s), Eigen::Index(k)) = rows_wm[s][k];
  r.csf = Eigen::Map<Eigen::VectorXd>(v_csf.data(), Eigen::Index(v_csf.size()));
  if (!v_gm.empty()) r.gm = Eigen::Map<Eigen::VectorXd>(v_gm.data(), Eigen::Index(v_gm.size()));
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(source + ": " + e.what());
  }
  return r;
}

ResponseSet read_responses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open response file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_responses(ss.str(), path.string());
}

std::string format_responses(const ResponseSet& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# b-value, then zonal factors for l = 0, 2, ...\n[wm]\n";
  for (std::size_t s = 0; s < r.shells(); ++s) {
    out << r.bvals[s];
    for (Eigen::Index k = 0; k < r.wm.cols(); ++k) out << ' ' << r.wm(Eigen::Index(s), k);
    out << '\n';
  }
  auto iso = [&](const char* name, const Eigen::VectorXd& v) {
    out << '[' << name << "]\n";
    for (std::size_t s = 0; s < r.shells(); ++s) out << r.bvals[s] << ' ' << v[Eigen::Index(s)] << '\n';
  };
  if (r.has_gm()) iso("gm", r.gm);
  iso("csf", r.csf);
  return out.str();
}

void write_responses(const std::filesystem::path& path, const ResponseSet& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_responses(r);
}

Eigen::VectorXd zonal_factors(const TissueModel& m, double b, int lmax) {
  require_even_lmax(lmax);
  static const auto rule = [] {
    std::pair<std::vector<double>, std::vector<double>> r;
    gauss_legendre(96, r.first, r.second);
    return r;
  }();
  const auto& [x, w] = rule;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(lmax / 2 + 1);
  for (std::size_t q = 0; q < x.size(); ++q) {
    const double t = x[q];
    const double k = m.s0 * std::exp(-b * (m.d_perp + (m.d_par - m.d_perp) * t * t));
    for (int l = 0; l <= lmax; l += 2) out[l / 2] += w[q] * k * std::legendre(unsigned(l), t);
  }
  return 2.0 * std::numbers::pi * out;
}

ResponseSet model_responses(std::vector<double> bvals, int lmax, const TissueModels& models, bool with_gm) {
  if (std::none_of(bvals.begin(), bvals.end(), [](double b) { return b <= kShellTolerance; })) bvals.push_back(0.0);
  std::sort(bvals.begin(), bvals.end());
  ResponseSet r;
  r.bvals = bvals;
  const Eigen::Index n = Eigen::Index(bvals.size());
  r.wm.resize(n, lmax / 2 + 1);
  r.csf.resize(n);
  if (with_gm) r.gm.resize(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double b = bvals[std::size_t(s)];
    r.wm.row(s) = zonal_factors(models.wm, b, lmax).transpose();
    r.csf[s] = zonal_factors(models.csf, b, 0)[0];
    if (with_gm) r.gm[s] = zonal_factors(models.gm, b, 0)[0];
  }
  return r;
}

ConvolutionMatrix build_convolution(const GradientScheme& g, const ResponseSet& resp, const TissueLayout& layout) {
  if (layout.gm && !resp.has_gm()) throw std::invalid_argument("layout needs a GM response but none was given");
  if (layout.wm_lmax > resp.lmax())
    throw std::invalid_argument("WM response covers lmax " + std::to_string(resp.lmax()) + ", lmax " +
                                std::to_string(layout.wm_lmax) + " requested");
  ConvolutionMatrix c;
  c.layout = layout;
  const int nwm = layout.wm_count();
  c.matrix = Eigen::MatrixXd::Zero(Eigen::Index(g.size()), layout.channels());
  c.shell_of_row.resize(g.size());
  Eigen::VectorXd basis(nwm);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& e = g.entries[i];
    const int s = resp.shell_for(e.b, g.shell_tolerance);
    if (s < 0)
      throw std::invalid_argument("no response for gradient entry " + std::to_string(i) + " (b=" +
                                  std::to_string(int(std::lround(e.b))) + ")");
    c.shell_of_row[i] = s;
    auto row = c.matrix.row(Eigen::Index(i));
    if (g.is_b0(i)) {
      row[0] = resp.wm(s, 0) * kY00;
    } else {
      sh_basis_row(e.dir.x(), e.dir.y(), e.dir.z(), layout.wm_lmax, basis);
      for (int l = 0; l <= layout.wm_lmax; l += 2)
        for (int m = -l; m <= l; ++m) row[sh_index(l, m)] = resp.wm(s, l / 2) * basis[sh_index(l, m)];
    }
    if (layout.gm) row[layout.gm_channel()] = resp.gm[s] * kY00;
    if (layout.csf) row[layout.csf_channel()] = resp.csf[s] * kY00;
  }
  return c;
}

void check_rank(const ConvolutionMatrix& c, const GradientScheme& g) {
  auto rank_of = [](const Eigen::MatrixXd& m) {
    if (m.rows() == 0) return Eigen::Index(0);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0) return Eigen::Index(0);
    return Eigen::Index((sv.array() > 1e-10 * sv[0]).count());
  };
  const Eigen::Index cols = c.matrix.cols();
  if (rank_of(c.matrix) == cols) return;
  const int nwm = c.layout.wm_count();
  std::vector<std::size_t> dw;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!g.is_b0(i)) dw.push_back(i);
  Eigen::MatrixXd wm(Eigen::Index(dw.size()), nwm);
  for (std::size_t k = 0; k < dw.size(); ++k) wm.row(Eigen::Index(k)) = c.matrix.row(Eigen::Index(dw[k])).head(nwm);
  const Eigen::Index r = rank_of(wm);
  if (r < nwm)
    throw std::invalid_argument("rank-deficient WM block: " + std::to_string(dw.size()) +
                                " diffusion-weighted directions give rank " + std::to_string(r) + " < " +
                                std::to_string(nwm) + " coefficients for lmax " + std::to_string(c.layout.wm_lmax));
  throw std::invalid_argument("rank-deficient isotropic blocks: the shells cannot separate the WM l=0, GM and CSF terms");
}

Eigen::MatrixXd constraint_matrix(const TissueLayout& layout, int n_directions) {
  const int nwm = layout.wm_count();
  const int niso = layout.channels() - nwm;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_directions + niso, layout.channels());
  a.topLeftCorner(n_directions, nwm) = sh_basis<double>(half_sphere_directions(n_directions), layout.wm_lmax);
  for (int k = 0; k < niso; ++k) a(n_directions + k, nwm + k) = 1.0;
  return a;
}

CsdModel::CsdModel(const GradientScheme& g, const ResponseSet& resp, const TissueLayout& layout)
    : conv_(build_convolution(g, resp, layout)) {
  check_rank(conv_, g);
  static std::mutex cache_mutex;
  static std::vector<std::pair<TissueLayout, Eigen::MatrixXd>> cache;
  Eigen::MatrixXd a;
  {
    std::lock_guard lock(cache_mutex);
    auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& e) { return e.first == layout; });
    if (it == cache.end()) {
      cache.emplace_back(layout, constraint_matrix(layout));
      it = cache.end() - 1;
    }
    a = it->second;
  }
  solver_ = std::make_shared<const ConstrainedLeastSquares>(conv_.matrix, std::move(a));
}

QpResult CsdModel::fit(const Eigen::VectorXd& signal) const {
  const TissueLayout& layout = conv_.layout;
  const Eigen::MatrixXd& c = conv_.matrix;
  // Strictly feasible start: a positive constant FOD plus positive isotropic
  // terms, sized by a least-squares fit of the l=0 columns alone.
  std::vector<Eigen::Index> dc{0};
  if (layout.gm) dc.push_back(layout.gm_channel());
  if (layout.csf) dc.push_back(layout.csf_channel());
  Eigen::MatrixXd cd(c.rows(), Eigen::Index(dc.size()));
  for (std::size_t k = 0; k < dc.size(); ++k) cd.col(Eigen::Index(k)) = c.col(dc[k]);
  Eigen::VectorXd y = cd.colPivHouseholderQr().solve(signal);
  const double total = std::max(y.cwiseMax(0.0).sum(), 1e-12);
  Eigen::VectorXd start = Eigen::VectorXd::Zero(c.cols());
  for (std::size_t k = 0; k < dc.size(); ++k) start[dc[k]] = std::max(y[Eigen::Index(k)], 0.05 * total);
  return solver_->solve(signal, start);
}

CoeffVolume fit_mcsd(const DwiVolume& dwi, const ResponseSet& resp, int lmax, const FitOptions& opt,
                     FitReport* report) {
  dwi.validate();
  const ResponseSet r = responses_for(resp, lmax);
  const auto shells = detect_shells(dwi.scheme);
  const auto nonzero = std::count_if(shells.begin(), shells.end(),
                                     [&](const Shell& s) { return !s.is_b0(dwi.scheme.shell_tolerance); });
  if (dwi.scheme.b0_count() == 0) throw std::invalid_argument("multi-shell fit needs b=0 volumes");
  if (nonzero < 2)
    throw std::invalid_argument("multi-shell fit needs at least two non-zero shells, found " + std::to_string(nonzero));
  const CsdModel model(dwi.scheme, r, TissueLayout{lmax, true, true});
  const int n = dwi.signals.channels();
  return fit_volume(
      dwi, model,
      [&](std::size_t v, Eigen::VectorXd& d) {
        d.resize(n);
        const auto src = dwi.signals.voxel(v);
        for (int k = 0; k < n; ++k) d[k] = src[std::size_t(k)];
      },
      opt, report);
}

CoeffVolume fit_2ts_csd(const DwiVolume& dwi, const ResponseSet& resp, int lmax, const FitOptions& opt,
                        FitReport* report) {
  dwi.validate();
  const ResponseSet r = responses_for(resp, lmax);
  const auto shells = detect_shells(dwi.scheme);
  std::vector<std::size_t> b0, dw;
  for (std::size_t i = 0; i < dwi.scheme.size(); ++i) (dwi.scheme.is_b0(i) ? b0 : dw).push_back(i);
  const auto nonzero = std::count_if(shells.begin(), shells.end(),
                                     [&](const Shell& s) { return !s.is_b0(dwi.scheme.shell_tolerance); });
  if (b0.empty()) throw std::invalid_argument("single-shell fit needs b=0 volumes");
  if (nonzero != 1)
    throw std::invalid_argument("single-shell fit needs exactly one non-zero shell, found " + std::to_string(nonzero));

  GradientScheme reduced;
  reduced.shell_tolerance = dwi.scheme.shell_tolerance;
  double b0_mean = 0.0;
  for (auto i : b0) b0_mean += dwi.scheme.entries[i].b;
  reduced.entries.push_back({b0_mean / double(b0.size()), Eigen::Vector3d::Zero()});
  for (auto i : dw) reduced.entries.push_back(dwi.scheme.entries[i]);

  const CsdModel model(reduced, r, TissueLayout{lmax, false, true});
  return fit_volume(
      dwi, model,
      [&](std::size_t v, Eigen::VectorXd& d) {
        d.resize(Eigen::Index(dw.size() + 1));
        const auto src = dwi.signals.voxel(v);
        double mean = 0.0;
        for (auto i : b0) mean += src[i];
        d[0] = mean / double(b0.size());
        for (std::size_t k = 0; k < dw.size(); ++k) d[Eigen::Index(k + 1)] = src[dw[k]];
      },
      opt, report);
}

double isotropic_amplitude(const CoeffVolume& v, std::size_t voxel) {
  const auto& layout = v.layout();
  double sum = v.at(voxel, 0);
  if (layout.gm) sum += v.at(voxel, layout.gm_channel());
  if (layout.csf) sum += v.at(voxel, layout.csf_channel());
  return sum * kY00;
}

double masked_amplitude_median(const CoeffVolume& v, const Mask& mask) {
  if (!(mask.dims() == v.dims())) throw std::invalid_argument("mask dimensions differ from the volume");
  std::vector<double> amps;
  for (auto idx : mask.indices()) amps.push_back(isotropic_amplitude(v, idx));
  if (amps.empty()) throw std::invalid_argument("normalization mask is empty");
  return median_of(std::move(amps));
}

CoeffVolume normalize_volume(const CoeffVolume& v, const Mask& mask) {
  const double median = masked_amplitude_median(v, mask);
  if (!(median > 0.0)) throw std::invalid_argument("masked median of the l=0 amplitude is not positive");
  const double factor = 1.0 / median;
  CoeffVolume out = v;
  for (auto& x : out.data()) x = float(double(x) * factor);
  out.scale = v.scale * factor;
  return out;
}

}  // namespace fodnet
