#include "fodnet/metrics.hpp"

#include "fodnet/phantom.hpp"
#include "fodnet/shmath.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fodnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::ordered_json number(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json summary_json(const Summary& s) {
  return {{"count", s.count},       {"min", number(s.min)}, {"q1", number(s.q1)},     {"median", number(s.median)},
          {"q3", number(s.q3)},     {"max", number(s.max)}, {"mean", number(s.mean)}, {"std", number(s.std)}};
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    s.min = s.q1 = s.median = s.q3 = s.max = s.mean = s.std = kNaN;
    return s;
  }
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / double(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = values.size() > 1 ? std::sqrt(sq / double(values.size() - 1)) : 0.0;
  return s;
}

EvalReport evaluate(const CoeffVolume& pred, const CoeffVolume& truth, const Mask& wm, const LabelVolume& regions,
                    const std::string& provenance, int region_count) {
  if (!(pred.dims() == truth.dims()) || !(pred.dims() == wm.dims()) || !(pred.dims() == regions.dims()))
    throw std::invalid_argument("evaluate: prediction, truth, mask and labels are not aligned");
  if (pred.layout().wm_lmax != truth.layout().wm_lmax)
    throw std::invalid_argument("evaluate: prediction and truth differ in WM order");
  EvalReport r;
  r.dims = pred.dims();
  r.voxels = wm.indices();
  if (r.voxels.empty()) throw std::invalid_argument("evaluate: empty WM mask");
  const int n = truth.layout().wm_count();
  r.acc.reserve(r.voxels.size());
  r.mae.reserve(r.voxels.size());
  for (auto idx : r.voxels) {
    const Eigen::VectorXd p = pred.voxel_vec(idx).head(n).cast<double>();
    const Eigen::VectorXd t = truth.voxel_vec(idx).head(n).cast<double>();
    r.acc.push_back(acc(p, t));
    r.mae.push_back((p - t).cwiseAbs().mean());
  }
  const Summary a = summarize(r.acc), m = summarize(r.mae);
  r.acc_mean = a.mean;
  r.acc_std = a.std;
  r.acc_median = a.median;
  r.mae_mean = m.mean;
  r.mae_std = m.std;

  std::vector<std::size_t> counts(kCdfBins, 0);
  for (double v : r.acc) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    const int bin = std::min(kCdfBins - 1, std::max(0, int(std::ceil((clamped + 1.0) / 2.0 * kCdfBins)) - 1));
    ++counts[std::size_t(bin)];
  }
  r.cdf.resize(kCdfBins);
  std::size_t running = 0;
  for (int k = 0; k < kCdfBins; ++k) {
    running += counts[std::size_t(k)];
    r.cdf[std::size_t(k)] = running == r.acc.size() ? 1.0 : double(running) / double(r.acc.size());
  }

  for (int label = 1; label <= region_count; ++label) {
    std::vector<double> vals;
    for (std::size_t k = 0; k < r.voxels.size(); ++k)
      if (regions[r.voxels[k]] == label) vals.push_back(r.acc[k]);
    RegionReport rr;
    rr.label = label;
    rr.name = region_count == kRegionCount ? region_name(label) : "region-" + std::to_string(label);
    rr.acc = summarize(std::move(vals));
    r.regions.push_back(rr);
  }
  r.provenance = provenance.empty() ? "{}" : provenance;
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["voxels"] = acc.size();
  j["acc"] = {{"mean", number(acc_mean)}, {"std_across_voxels", number(acc_std)}, {"median", number(acc_median)}};
  j["mae"] = {{"mean", number(mae_mean)}, {"std_across_voxels", number(mae_std)}};
  nlohmann::ordered_json regs = nlohmann::ordered_json::array();
  for (const auto& r : regions) {
    auto e = summary_json(r.acc);
    e["label"] = r.label;
    e["name"] = r.name;
    regs.push_back(e);
  }
  j["regions"] = regs;
  j["cdf_bins"] = kCdfBins;
  j["cdf"] = cdf;
  const auto prov = nlohmann::ordered_json::parse(provenance.empty() ? "{}" : provenance, nullptr, false);
  j["provenance"] = prov.is_discarded() ? nlohmann::ordered_json(provenance) : prov;
  return j.dump(2) + "\n";
}

std::string EvalReport::cdf_csv() const {
  std::ostringstream out;
  out << "bin_upper,cdf\n" << std::setprecision(17);
  for (std::size_t k = 0; k < cdf.size(); ++k) out << -1.0 + 2.0 * double(k + 1) / double(cdf.size()) << "," << cdf[k] << "\n";
  return out.str();
}

std::string EvalReport::acc_csv() const {
  std::ostringstream out;
  out << "x,y,z,acc,mae\n" << std::setprecision(17);
  for (std::size_t k = 0; k < voxels.size(); ++k) {
    const Eigen::Vector3i c = dims.coords(voxels[k]);
    out << c.x() << "," << c.y() << "," << c.z() << "," << acc[k] << "," << mae[k] << "\n";
  }
  return out.str();
}

Volume acc_map(const EvalReport& report, const Dims& dims) {
  Volume v(dims, 1);
  for (std::size_t k = 0; k < report.voxels.size(); ++k) v.at(report.voxels[k], 0) = float(report.acc[k]);
  return v;
}

std::string aggregate_json(const std::vector<EvalReport>& reports) {
  std::vector<double> acc_means, acc_medians, mae_means;
  for (const auto& r : reports) {
    acc_means.push_back(r.acc_mean);
    acc_medians.push_back(r.acc_median);
    mae_means.push_back(r.mae_mean);
  }
  nlohmann::ordered_json j;
  j["reports"] = reports.size();
  j["acc_mean_across_reports"] = summary_json(summarize(acc_means));
  j["acc_median_across_reports"] = summary_json(summarize(acc_medians));
  j["mae_mean_across_reports"] = summary_json(summarize(mae_means));
  return j.dump(2) + "\n";
}

}  // namespace fodnet
