#include "fodnet/experiments.hpp"

#include "fodnet/gradients.hpp"
#include "fodnet/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fodnet {

namespace {

using ojson = nlohmann::ordered_json;

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fraction_tag(double f) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << f;
  return s.str();
}

ojson stats_json(const EvalReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); };
  return {{"acc_mean", num(r.acc_mean)},
          {"acc_std_across_voxels", num(r.acc_std)},
          {"acc_median", num(r.acc_median)},
          {"mae_mean", num(r.mae_mean)},
          {"mae_std_across_voxels", num(r.mae_std)}};
}

struct Job {
  int experiment;
  const ExperimentConfig& cfg;
  std::filesystem::path out;
};

std::string report_provenance(const Job& job, const PreparedScene& s, int fold, double fraction,
                              const std::string& method, const std::string& checkpoint_id) {
  ojson p;
  p["experiment"] = job.experiment;
  p["scene"] = s.name;
  p["protocol"] = s.protocol;
  p["scene_seed"] = s.seed;
  p["fold"] = fold;
  p["fraction"] = fraction;
  p["method"] = method;
  p["checkpoint_id"] = checkpoint_id;
  p["config"] = job.cfg.to_config();
  return p.dump();
}

void log(const ExperimentConfig& cfg, const std::string& msg) {
  if (cfg.verbose) std::cerr << msg << std::endl;
}

// Infers and evaluates one test scene against its ground truth.
SceneResult evaluate_scene(const Job& job, const PreparedScene& s, const FoldModel& model, const CoeffVolume& input,
                           double fraction, const std::filesystem::path& dir) {
  auto net = net::load_network(model.checkpoint, job.cfg.threads);
  const CoeffVolume pred =
      infer_volume(*net, input, s.truth.brain, job.cfg.infer_patch, job.cfg.infer_stride);
  SceneResult r;
  r.scene = s.name;
  r.fold = model.fold;
  r.fraction = fraction;
  r.checkpoint_id = model.checkpoint_id;
  r.cnn = evaluate(pred, s.truth.coeffs, s.truth.wm, s.truth.regions,
                   report_provenance(job, s, model.fold, fraction, "cnn", model.checkpoint_id), kRegionCount);
  r.baseline = evaluate(input, s.truth.coeffs, s.truth.wm, s.truth.regions,
                        report_provenance(job, s, model.fold, fraction, "2ts-csd", ""), kRegionCount);
  if (!dir.empty()) {
    write_text(dir / "cnn.json", r.cnn.to_json());
    write_text(dir / "cnn_cdf.csv", r.cnn.cdf_csv());
    write_text(dir / "cnn_acc.csv", r.cnn.acc_csv());
    write_text(dir / "baseline.json", r.baseline.to_json());
    write_text(dir / "baseline_cdf.csv", r.baseline.cdf_csv());
    write_text(dir / "baseline_acc.csv", r.baseline.acc_csv());
    CoeffVolume out = pred;
    out.provenance = r.cnn.provenance;
    write_coeff_volume(dir / "cnn_pred.fcv", out);
  }
  log(job.cfg, "  " + s.name + " fraction " + fraction_tag(fraction) + ": cnn acc " + format_double(r.cnn.acc_mean) +
                   ", 2ts-csd acc " + format_double(r.baseline.acc_mean));
  return r;
}

std::vector<std::size_t> folds_to_run(const ExperimentConfig& cfg) {
  const int k = cfg.fold_count();
  const int n = cfg.max_folds > 0 ? std::min(cfg.max_folds, k) : k;
  std::vector<std::size_t> out;
  for (int f = 0; f < n; ++f) out.push_back(std::size_t(f));
  return out;
}

FoldModel fold_layout(const ExperimentConfig& cfg, const std::vector<std::vector<std::size_t>>& split, std::size_t f) {
  FoldModel m;
  m.fold = int(f);
  for (std::size_t g = 0; g < split.size(); ++g)
    for (auto i : split[g]) (g == f ? m.test_scenes : m.train_scenes).push_back(cfg.scenes[i]);
  return m;
}

// Trains one fold per split entry on `train_protocol` scenes and tests on `test_protocol` scenes.
ExperimentResult cross_validate(const Job& job, const std::string& train_protocol, const std::string& test_protocol) {
  const ExperimentConfig& cfg = job.cfg;
  cfg.validate();
  if (!job.out.empty()) write_text(job.out / "config.txt", cfg.to_config());
  const auto split = fold_split(cfg.scenes.size(), cfg.fold_count());
  ExperimentResult result;
  result.experiment = job.experiment;
  for (auto f : folds_to_run(cfg)) {
    FoldModel model = fold_layout(cfg, split, f);
    const auto fold_dir = job.out.empty() ? std::filesystem::path() : job.out / ("fold-" + std::to_string(f));
    log(cfg, "fold " + std::to_string(f) + ": preparing " + std::to_string(model.train_scenes.size()) +
                 " training scenes");
    std::vector<TrainingScene> train_scenes;
    for (const auto& name : model.train_scenes)
      train_scenes.push_back(training_scene(prepare_scene(cfg, name, train_protocol)));

    TrainOptions opt;
    opt.out_dir = fold_dir;
    opt.threads = cfg.threads;
    opt.verbose = cfg.verbose;
    ojson prov;
    prov["experiment"] = job.experiment;
    prov["fold"] = f;
    prov["train_protocol"] = train_protocol;
    prov["config"] = cfg.to_config();
    opt.provenance = prov.dump();
    // Validation uses fixed patches of the training scenes; the test scenes stay unseen.
    TrainResult trained = train(cfg.train, train_scenes, train_scenes, opt);
    train_scenes.clear();
    model.checkpoint = std::move(trained.best);
    model.checkpoint_id = sha256_hex(net::encode_checkpoint(model.checkpoint));

    for (const auto& name : model.test_scenes) {
      const PreparedScene s = prepare_scene(cfg, name, test_protocol);
      result.results.push_back(
          evaluate_scene(job, s, model, s.input, 1.0, fold_dir.empty() ? fold_dir : fold_dir / name));
    }
    result.models.push_back(std::move(model));
  }
  if (!job.out.empty()) write_text(job.out / "summary.json", result.summary_json());
  return result;
}

}  // namespace

int ExperimentConfig::fold_count() const {
  if (folds > 0) return folds;
  return scenes.size() >= 5 ? 5 : int(scenes.size());
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("experiment config: " + what); };
  if (scenes.size() < 2) fail("at least two scenes are needed for a train/test split");
  for (std::size_t i = 0; i < scenes.size(); ++i)
    for (std::size_t j = i + 1; j < scenes.size(); ++j)
      if (scenes[i] == scenes[j]) fail("scene '" + scenes[i] + "' is listed twice");
  if (fold_count() < 2 || std::size_t(fold_count()) > scenes.size())
    fail("folds must lie in [2, number of scenes]");
  if (max_folds < 0) fail("max_folds must be >= 0");
  if (!(snr > 0)) fail("snr must be positive");
  if (lmax != 4 && lmax != 8) fail("lmax must be 4 or 8");
  if (fractions.empty()) fail("fractions must not be empty");
  for (double f : fractions)
    if (!(f > 0 && f <= 1)) fail("fractions must lie in (0, 1]");
  if (infer_patch <= 0 || infer_stride <= 0 || infer_stride > infer_patch)
    fail("infer_stride must lie in [1, infer_patch]");
  if (threads < 1) fail("threads must be >= 1");
  train.validate();
  if (infer_patch % net::size_multiple(net::architecture(train.arch)) != 0)
    fail("infer_patch must be even for " + train.arch);
}

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
  static const std::vector<std::string> known = {
      "scenes", "protocol", "train_protocol", "test_protocol", "snr",         "lmax",         "phantom_seed",
      "folds",  "max_folds", "fractions",     "infer_patch",   "infer_stride", "threads"};
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind("experiment.", 0) == 0) {
      if (std::find(known.begin(), known.end(), key.substr(11)) == known.end())
        throw ConfigError(cfg.source() + ": unknown key '" + key + "'");
    } else if (key.rfind("train.", 0) != 0) {
      throw ConfigError(cfg.source() + ": unknown key '" + key + "' (expected [experiment] or [train])");
    }
  }
  ExperimentConfig e;
  if (cfg.has("experiment.scenes")) e.scenes = cfg.get_list("experiment.scenes");
  e.protocol = cfg.get("experiment.protocol", e.protocol);
  e.train_protocol = cfg.get("experiment.train_protocol", e.train_protocol);
  e.test_protocol = cfg.get("experiment.test_protocol", e.test_protocol);
  e.snr = cfg.get_double("experiment.snr", e.snr);
  e.lmax = int(cfg.get_int("experiment.lmax", e.lmax));
  e.phantom_seed = std::uint64_t(cfg.get_int("experiment.phantom_seed", (long long)e.phantom_seed));
  e.folds = int(cfg.get_int("experiment.folds", e.folds));
  e.max_folds = int(cfg.get_int("experiment.max_folds", e.max_folds));
  if (cfg.has("experiment.fractions")) {
    e.fractions.clear();
    for (const auto& f : cfg.get_list("experiment.fractions")) {
      try {
        std::size_t used = 0;
        e.fractions.push_back(std::stod(f, &used));
        if (used != f.size()) throw std::invalid_argument(f);
      } catch (const std::exception&) {
        throw ConfigError(cfg.source() + ": experiment.fractions: '" + f + "' is not a number");
      }
    }
  }
  e.infer_patch = int(cfg.get_int("experiment.infer_patch", e.infer_patch));
  e.infer_stride = int(cfg.get_int("experiment.infer_stride", e.infer_stride));
  e.threads = int(cfg.get_int("experiment.threads", e.threads));
  e.train = TrainConfig::from_config(cfg);
  try {
    e.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(cfg.source() + ": " + ex.what());
  }
  return e;
}

std::string ExperimentConfig::to_config() const {
  std::ostringstream out;
  out << "[experiment]\nscenes = ";
  for (std::size_t i = 0; i < scenes.size(); ++i) out << (i ? ", " : "") << scenes[i];
  out << "\nprotocol = " << protocol << "\n"
      << "train_protocol = " << train_protocol << "\n"
      << "test_protocol = " << test_protocol << "\n"
      << "snr = " << format_double(snr) << "\n"
      << "lmax = " << lmax << "\n"
      << "phantom_seed = " << phantom_seed << "\n"
      << "folds = " << folds << "\n"
      << "max_folds = " << max_folds << "\n"
      << "fractions = ";
  for (std::size_t i = 0; i < fractions.size(); ++i) out << (i ? ", " : "") << format_double(fractions[i]);
  out << "\ninfer_patch = " << infer_patch << "\n"
      << "infer_stride = " << infer_stride << "\n\n"
      << train.to_config();
  return out.str();
}

std::vector<std::vector<std::size_t>> fold_split(std::size_t scenes, int folds) {
  if (folds < 2 || std::size_t(folds) > scenes)
    throw std::invalid_argument("fold_split: folds must lie in [2, number of scenes]");
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < scenes; ++i) out[i % std::size_t(folds)].push_back(i);
  return out;
}

PhantomSpec experiment_scene_spec(const ExperimentConfig& cfg, const std::string& name, const std::string& protocol) {
  PhantomSpec spec = standard_scene(name, protocol);
  spec.snr = cfg.snr;
  spec.lmax = cfg.lmax;
  // Protocol A acquisitions get their own noise stream so the two protocols act as separate scans.
  spec.seed += cfg.phantom_seed + (protocol == "A" ? 1000 : 0);
  return spec;
}

PreparedScene prepare_scene(const ExperimentConfig& cfg, const std::string& name, const std::string& protocol) {
  const PhantomSpec spec = experiment_scene_spec(cfg, name, protocol);
  Phantom ph = generate(spec, cfg.threads);
  PreparedScene s;
  s.name = name;
  s.protocol = protocol;
  s.seed = spec.seed;
  s.responses = spec.responses();
  FitOptions fo;
  fo.mask = &ph.truth.brain;
  fo.threads = cfg.threads;
  s.target = normalize_volume(fit_mcsd(ph.dwi, s.responses, cfg.lmax, fo), ph.truth.brain);
  s.single_shell = ph.dwi.select(single_shell_indices(ph.dwi.scheme, single_shell_b(protocol)));
  ph.dwi = DwiVolume{};
  s.input = normalize_volume(fit_2ts_csd(s.single_shell, s.responses, cfg.lmax, fo), ph.truth.brain);
  s.truth = std::move(ph.truth);
  s.truth.coeffs = normalize_volume(s.truth.coeffs, s.truth.brain);
  s.truth.noiseless = Volume{};
  return s;
}

TrainingScene training_scene(const PreparedScene& s) {
  return TrainingScene{s.name + "/" + s.protocol, s.input, s.target, s.truth.wm};
}

CoeffVolume subsampled_input(const PreparedScene& s, double fraction, int threads) {
  const DwiVolume ordered = s.single_shell.select(reorder_halfsphere_indices(s.single_shell.scheme));
  const DwiVolume kept = ordered.select(subsample_indices(ordered.scheme, fraction));
  FitOptions fo;
  fo.mask = &s.truth.brain;
  fo.threads = threads;
  return normalize_volume(fit_2ts_csd(kept, s.responses, s.input.lmax(), fo), s.truth.brain);
}

std::string ExperimentResult::summary_json() const {
  ojson j;
  j["experiment"] = experiment;
  ojson folds = ojson::array();
  for (const auto& m : models)
    folds.push_back({{"fold", m.fold},
                     {"train_scenes", m.train_scenes},
                     {"test_scenes", m.test_scenes},
                     {"checkpoint_id", m.checkpoint_id}});
  j["folds"] = folds;
  ojson rows = ojson::array();
  std::vector<EvalReport> cnn, base;
  for (const auto& r : results) {
    rows.push_back({{"scene", r.scene},
                    {"fold", r.fold},
                    {"fraction", r.fraction},
                    {"checkpoint_id", r.checkpoint_id},
                    {"cnn", stats_json(r.cnn)},
                    {"baseline", stats_json(r.baseline)}});
    cnn.push_back(r.cnn);
    base.push_back(r.baseline);
  }
  j["results"] = rows;
  if (!results.empty()) {
    j["across_scenes"] = {{"cnn", ojson::parse(aggregate_json(cnn))}, {"baseline", ojson::parse(aggregate_json(base))}};
  }
  return j.dump(2) + "\n";
}

ExperimentResult run_experiment1(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  return cross_validate(Job{1, cfg, out_dir}, cfg.protocol, cfg.protocol);
}

ExperimentResult run_experiment2(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  return cross_validate(Job{2, cfg, out_dir}, cfg.train_protocol, cfg.test_protocol);
}

ExperimentResult run_experiment3(const ExperimentConfig& cfg, const ExperimentResult& exp1,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  if (exp1.models.empty()) throw std::invalid_argument("experiment 3 needs experiment-1 fold checkpoints");
  const Job job{3, cfg, out_dir};
  if (!out_dir.empty()) write_text(out_dir / "config.txt", cfg.to_config());
  ExperimentResult result;
  result.experiment = 3;
  result.models = exp1.models;
  for (const auto& model : exp1.models)
    for (const auto& name : model.test_scenes) {
      const PreparedScene s = prepare_scene(cfg, name, cfg.protocol);
      for (double f : cfg.fractions) {
        const CoeffVolume input = f == 1.0 ? s.input : subsampled_input(s, f, cfg.threads);
        const auto dir = out_dir.empty() ? out_dir : out_dir / ("fraction-" + fraction_tag(f)) / name;
        result.results.push_back(evaluate_scene(job, s, model, input, f, dir));
      }
    }
  if (!out_dir.empty()) write_text(out_dir / "summary.json", result.summary_json());
  return result;
}

ExperimentResult run_experiment4(const ExperimentConfig& cfg, const ExperimentResult& exp1,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  if (exp1.models.empty()) throw std::invalid_argument("experiment 4 needs experiment-1 fold checkpoints");
  const Job job{4, cfg, out_dir};
  if (!out_dir.empty()) write_text(out_dir / "config.txt", cfg.to_config());
  ExperimentResult result;
  result.experiment = 4;
  result.models = exp1.models;
  for (const auto& model : exp1.models)
    for (const auto& name : model.test_scenes) {
      const PreparedScene s = prepare_scene(cfg, name, cfg.protocol);
      result.results.push_back(evaluate_scene(job, s, model, s.input, 1.0, out_dir.empty() ? out_dir : out_dir / name));
    }
  if (!out_dir.empty()) {
    write_text(out_dir / "regions.csv", region_table_csv(result.results));
    write_text(out_dir / "summary.json", result.summary_json());
  }
  return result;
}

ExperimentResult load_experiment1(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  const auto split = fold_split(cfg.scenes.size(), cfg.fold_count());
  ExperimentResult result;
  result.experiment = 1;
  for (auto f : folds_to_run(cfg)) {
    FoldModel m = fold_layout(cfg, split, f);
    const auto path = dir / ("fold-" + std::to_string(f)) / "best.ckpt";
    m.checkpoint = net::read_checkpoint(path);
    m.checkpoint_id = sha256_file(path);
    result.models.push_back(std::move(m));
  }
  return result;
}

std::string region_table_csv(const std::vector<SceneResult>& results) {
  std::ostringstream out;
  out << "scene,fold,fraction,method,label,name,count,min,q1,median,q3,max\n" << std::setprecision(17);
  auto rows = [&](const SceneResult& r, const char* method, const EvalReport& rep) {
    for (const auto& g : rep.regions) {
      out << r.scene << "," << r.fold << "," << r.fraction << "," << method << "," << g.label << "," << g.name << ","
          << g.acc.count;
      for (double v : {g.acc.min, g.acc.q1, g.acc.median, g.acc.q3, g.acc.max})
        out << "," << (std::isfinite(v) ? format_double(v) : std::string(""));
      out << "\n";
    }
  };
  for (const auto& r : results) {
    rows(r, "cnn", r.cnn);
    rows(r, "2ts-csd", r.baseline);
  }
  return out.str();
}

}  // namespace fodnet
