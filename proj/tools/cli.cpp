#include "cli.hpp"

#include "fodnet/experiments.hpp"
#include "fodnet/gradients.hpp"
#include "fodnet/hash.hpp"
#include "fodnet/parallel.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>

namespace fodnet::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// Provenance embedded in every output: command line, seed and input digests.
struct Provenance {
  std::string command;
  ojson seed = nullptr;
  ojson inputs = ojson::object();

  void input(const std::string& path) {
    if (!path.empty()) inputs[path] = sha256_file(path);
  }
  std::string json() const {
    ojson j;
    j["command"] = command;
    j["seed"] = seed;
    j["inputs"] = inputs;
    return j.dump();
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

fs::path with_suffix(const std::string& stem, const char* ext) { return fs::path(stem + ext); }

void add_threads(CLI::App* sub, Options& o) {
  sub->add_option("--threads", o.threads, "Worker threads (default: $FODNET_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);
}

void add_tables(CLI::App* sub, Options& o, bool dwi_required) {
  auto* dwi = sub->add_option("--dwi", o.dwi, "DWI volume file (.vol)");
  if (dwi_required) dwi->required();
  sub->add_option("--grad-bvecs", o.bvecs, "Gradient directions, 3 rows x N columns")->required();
  sub->add_option("--grad-bvals", o.bvals, "b-values in s/mm^2, 1 row x N columns")->required();
}

int cmd_simulate(const Options& o, Provenance& prov, std::ostream& out) {
  PhantomSpec spec;
  if (fs::is_regular_file(o.scene)) {
    prov.input(o.scene);
    spec = spec_from_config(Config::load(o.scene));
    if (!o.protocol.empty()) {
      spec.protocol = o.protocol;
      spec.scheme = protocol_scheme(o.protocol);
    }
  } else {
    spec = standard_scene(o.scene, o.protocol.empty() ? "B" : o.protocol);
  }
  if (o.seed >= 0) spec.seed = std::uint64_t(o.seed);
  if (o.snr > 0) spec.snr = o.snr;
  prov.seed = spec.seed;
  const Phantom ph = generate(spec, resolve_threads(o.threads));
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::string p = prov.json();
  write_dwi(dir / "dwi", ph.dwi, p);
  CoeffVolume truth = ph.truth.coeffs;
  truth.provenance = p;
  write_coeff_volume(dir / "truth.fcv", truth);
  write_mask(dir / "brain.msk", ph.truth.brain, p);
  write_mask(dir / "wm.msk", ph.truth.wm, p);
  write_labels(dir / "regions.lbl", ph.truth.regions, p);
  write_responses(dir / "responses.txt", spec.responses());
  write_text(dir / "scene.cfg", spec_to_config(spec));
  ojson j{{"scene", spec.name},
          {"protocol", spec.protocol},
          {"seed", spec.seed},
          {"volumes", ph.dwi.signals.channels()},
          {"dims", to_string(ph.dwi.dims())},
          {"wm_voxels", ph.truth.wm.count()},
          {"sigma", ph.sigma}};
  out << j.dump() << "\n";
  return 0;
}

int cmd_fit(const Options& o, Provenance& prov, std::ostream& out) {
  for (const auto& f : {o.dwi, o.bvecs, o.bvals, o.response, o.mask}) prov.input(f);
  const DwiVolume dwi = read_dwi(o.dwi, o.bvecs, o.bvals);
  const ResponseSet resp = read_responses(o.response);
  Mask mask;
  FitOptions fo;
  fo.threads = resolve_threads(o.threads);
  if (!o.mask.empty()) {
    mask = read_mask(o.mask);
    fo.mask = &mask;
  } else if (o.normalize) {
    throw std::invalid_argument("--normalize needs --mask");
  }
  FitReport rep;
  CoeffVolume v = o.model == "mcsd" ? fit_mcsd(dwi, resp, o.lmax, fo, &rep) : fit_2ts_csd(dwi, resp, o.lmax, fo, &rep);
  if (o.normalize) v = normalize_volume(v, mask);
  v.provenance = prov.json();
  write_coeff_volume(o.out, v);
  ojson j{{"model", o.model},
          {"layout", v.layout().describe()},
          {"channels", v.channels()},
          {"fitted", rep.fitted},
          {"failed", rep.failed},
          {"scale", v.scale}};
  out << j.dump() << "\n";
  return 0;
}

// Shared body of extract-shell, reorder and subsample: select entries, write tables and DWI.
int cmd_select(const Options& o, Provenance& prov, std::ostream& out,
               const std::function<std::vector<std::size_t>(const GradientScheme&)>& pick) {
  for (const auto& f : {o.dwi, o.bvecs, o.bvals}) prov.input(f);
  const GradientScheme g = read_fsl(o.bvecs, o.bvals);
  const auto idx = pick(g);
  if (!o.dwi.empty()) {
    const DwiVolume dwi = read_dwi(o.dwi, o.bvecs, o.bvals);
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    write_dwi(o.out, dwi.select(idx), prov.json());
  } else {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    write_fsl(g.select(idx), with_suffix(o.out, ".bvec"), with_suffix(o.out, ".bval"));
  }
  const GradientScheme kept = g.select(idx);
  out << ojson{{"entries", kept.size()}, {"b0", kept.b0_count()}}.dump() << "\n";
  return 0;
}

TrainingScene load_training_scene(const std::string& dir, Provenance& prov) {
  const fs::path d(dir);
  for (const char* f : {"input.fcv", "target.fcv", "wm.msk"}) prov.input((d / f).string());
  TrainingScene s;
  s.name = d.filename().empty() ? d.parent_path().filename().string() : d.filename().string();
  s.input = read_coeff_volume(d / "input.fcv");
  s.target = read_coeff_volume(d / "target.fcv");
  s.mask = read_mask(d / "wm.msk");
  return s;
}

int cmd_train(const Options& o, Provenance& prov, std::ostream& out) {
  prov.input(o.config);
  TrainConfig cfg = TrainConfig::from_config(Config::load(o.config));
  if (!o.arch.empty()) cfg.arch = o.arch;
  cfg.validate();
  prov.seed = cfg.seed;
  std::vector<TrainingScene> train_scenes, val_scenes;
  for (const auto& d : o.train_scenes) train_scenes.push_back(load_training_scene(d, prov));
  for (const auto& d : o.val_scenes) val_scenes.push_back(load_training_scene(d, prov));
  const fs::path target(o.out);
  TrainOptions opt;
  opt.out_dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
  opt.threads = resolve_threads(o.threads);
  opt.verbose = o.verbose;
  opt.provenance = prov.json();
  const TrainResult r = train(cfg, train_scenes, val_scenes, opt);
  const fs::path best = opt.out_dir / "best.ckpt";
  if (fs::weakly_canonical(best) != fs::weakly_canonical(target)) fs::rename(best, target);
  out << ojson{{"best_epoch", r.best.epoch},
               {"best_val_loss", r.best.val_loss},
               {"final_train_loss", r.final.train_loss},
               {"checkpoint", target.string()},
               {"checkpoint_id", sha256_file(target)}}
             .dump()
      << "\n";
  return 0;
}

int cmd_infer(const Options& o, Provenance& prov, std::ostream& out) {
  for (const auto& f : {o.checkpoint, o.input, o.mask}) prov.input(f);
  const net::Checkpoint ck = net::read_checkpoint(o.checkpoint);
  auto model = net::load_network(ck, resolve_threads(o.threads));
  const CoeffVolume input = read_coeff_volume(o.input);
  const Mask mask = read_mask(o.mask);
  CoeffVolume pred = infer_volume(*model, input, mask, o.patch, o.stride);
  pred.provenance = prov.json();
  write_coeff_volume(o.out, pred);
  out << ojson{{"arch", ck.arch}, {"channels", pred.channels()}, {"voxels", mask.count()}}.dump() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o, Provenance& prov, std::ostream& out) {
  for (const auto& f : {o.pred, o.truth, o.wm_mask, o.regions}) prov.input(f);
  const CoeffVolume pred = read_coeff_volume(o.pred);
  const CoeffVolume truth = read_coeff_volume(o.truth);
  const Mask wm = read_mask(o.wm_mask);
  const LabelVolume regions = read_labels(o.regions);
  const EvalReport r = evaluate(pred, truth, wm, regions, prov.json());
  write_text(o.report, r.to_json());
  if (!o.cdf.empty()) write_text(o.cdf, r.cdf_csv());
  if (!o.acc_csv.empty()) write_text(o.acc_csv, r.acc_csv());
  out << ojson{{"voxels", r.acc.size()},
               {"acc_mean", r.acc_mean},
               {"acc_median", r.acc_median},
               {"mae_mean", r.mae_mean}}
             .dump()
      << "\n";
  return 0;
}

int cmd_experiment(const Options& o, bool threads_given, std::ostream& out) {
  ExperimentConfig cfg = ExperimentConfig::from_config(Config::load(o.config));
  if (threads_given) cfg.threads = resolve_threads(o.threads);
  cfg.verbose = o.verbose;
  const fs::path dir(o.out);
  ExperimentResult r;
  if (o.experiment == 1) {
    r = run_experiment1(cfg, dir);
  } else if (o.experiment == 2) {
    r = run_experiment2(cfg, dir);
  } else {
    const ExperimentResult exp1 = o.from.empty() ? run_experiment1(cfg, dir / "experiment-1") : load_experiment1(cfg, o.from);
    r = o.experiment == 3 ? run_experiment3(cfg, exp1, dir) : run_experiment4(cfg, exp1, dir);
  }
  out << r.summary_json();
  return 0;
}

void error_json(std::ostream& err, const std::string& type, const std::string& message) {
  err << ojson{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

std::unique_ptr<CLI::App> make_parser(Options& o) {
  auto app = std::make_unique<CLI::App>("Fiber orientation estimation: CSD fitting, phantom simulation and CNN training",
                                        "fodnet");
  app->require_subcommand(1);

  auto* sim = app->add_subcommand("simulate", "Generate a synthetic phantom with ground truth");
  sim->add_option("--scene", o.scene, "Built-in scene name or scene config file")->required();
  sim->add_option("--protocol", o.protocol, "Acquisition protocol (default: B, or the scene file's)")
      ->check(CLI::IsMember({"A", "B"}));
  sim->add_option("--seed", o.seed, "Noise seed (default: the scene's own)")->check(CLI::NonNegativeNumber);
  sim->add_option("--snr", o.snr, "b0 signal over noise sigma (default: the scene's own)")->check(CLI::PositiveNumber);
  sim->add_option("--out", o.out, "Output directory")->required();
  add_threads(sim, o);

  auto* fit = app->add_subcommand("fit", "Fit a CSD model to a DWI volume");
  fit->add_option("--model", o.model, "mcsd (multi-shell multi-tissue) or 2ts (single-shell two-tissue)")
      ->required()
      ->check(CLI::IsMember({"mcsd", "2ts"}));
  add_tables(fit, o, true);
  fit->add_option("--response", o.response, "Response function file")->required();
  fit->add_option("--lmax", o.lmax, "Maximum SH order of the WM FOD")->check(CLI::IsMember({4, 8}));
  fit->add_option("--mask", o.mask, "Fit only voxels inside this mask (default: every voxel)");
  fit->add_flag("--normalize", o.normalize, "Scale so the masked median l=0 amplitude is 1 (needs --mask)");
  fit->add_option("--out", o.out, "Output coefficient volume (.fcv)")->required();
  add_threads(fit, o);

  auto* ext = app->add_subcommand("extract-shell", "Keep the b0 entries and the shell nearest --b");
  ext->add_option("--b", o.b, "Shell b-value in s/mm^2")->required()->check(CLI::PositiveNumber);
  add_tables(ext, o, false);
  ext->add_option("--out", o.out, "Output stem: writes <out>.bvec, <out>.bval and, with --dwi, <out>.vol")
      ->required();
  add_threads(ext, o);

  auto* reo = app->add_subcommand("reorder", "Order directions by greedy max-min half-sphere angle");
  add_tables(reo, o, false);
  reo->add_option("--out", o.out, "Output stem: writes <out>.bvec, <out>.bval and, with --dwi, <out>.vol")
      ->required();
  add_threads(reo, o);

  auto* sub = app->add_subcommand("subsample", "Keep the leading fraction of a reordered scheme");
  sub->add_option("--fraction", o.fraction, "Fraction of b0 and shell entries to keep, in (0, 1]")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  add_tables(sub, o, false);
  sub->add_option("--out", o.out, "Output stem: writes <out>.bvec, <out>.bval and, with --dwi, <out>.vol")
      ->required();
  add_threads(sub, o);

  auto* tr = app->add_subcommand("train", "Train a network from scene directories (input.fcv, target.fcv, wm.msk)");
  tr->add_option("--arch", o.arch, "Architecture, overrides the config")->check(CLI::IsMember({"highresnet", "unet"}));
  tr->add_option("--config", o.config, "Config file with a [train] section")->required();
  tr->add_option("--train-scenes", o.train_scenes, "Training scene directories")->required();
  tr->add_option("--val-scenes", o.val_scenes, "Validation scene directories")->required();
  tr->add_option("--out", o.out, "Best checkpoint path; final.ckpt and loss.csv go next to it")->required();
  tr->add_flag("--verbose", o.verbose, "Print per-epoch losses to stderr");
  add_threads(tr, o);

  auto* inf = app->add_subcommand("infer", "Predict multi-tissue WM coefficients with a trained network");
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  inf->add_option("--input", o.input, "Single-shell coefficient volume (.fcv)")->required();
  inf->add_option("--mask", o.mask, "Voxels to predict; others are zero")->required();
  inf->add_option("--patch", o.patch, "Window edge in voxels")->check(CLI::PositiveNumber);
  inf->add_option("--stride", o.stride, "Window step in voxels")->check(CLI::PositiveNumber);
  inf->add_option("--out", o.out, "Output coefficient volume (.fcv)")->required();
  add_threads(inf, o);

  auto* ev = app->add_subcommand("evaluate", "Compare predicted and true WM coefficients");
  ev->add_option("--pred", o.pred, "Predicted coefficient volume")->required();
  ev->add_option("--truth", o.truth, "Ground-truth coefficient volume")->required();
  ev->add_option("--wm-mask", o.wm_mask, "WM mask")->required();
  ev->add_option("--regions", o.regions, "Region label volume")->required();
  ev->add_option("--report", o.report, "Report JSON output")->required();
  ev->add_option("--cdf", o.cdf, "Optional ACC CDF CSV output");
  ev->add_option("--acc-csv", o.acc_csv, "Optional per-voxel ACC/MAE CSV output");
  add_threads(ev, o);

  auto* ex = app->add_subcommand("experiment", "Run an experiment: 1 same protocol, 2 cross protocol, "
                                               "3 direction subsampling, 4 regions");
  ex->add_option("number", o.experiment, "Experiment number 1-4")->required()->check(CLI::Range(1, 4));
  ex->add_option("--config", o.config, "Config file with [experiment] and [train] sections")->required();
  ex->add_option("--out", o.out, "Output directory")->required();
  ex->add_option("--from", o.from, "Experiment-1 output directory to reuse (experiments 3 and 4)");
  ex->add_flag("--verbose", o.verbose, "Print progress to stderr");
  add_threads(ex, o);
  return app;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  auto app = make_parser(o);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_json(err, "usage", e.what());
    return 2;
  }
  Provenance prov;
  // The worker count never changes results, so it stays out of the recorded command.
  prov.command = "fodnet";
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--threads") {
      ++i;
      continue;
    }
    if (args[i].rfind("--threads=", 0) == 0) continue;
    prov.command += " " + args[i];
  }
  try {
    const CLI::App* sub = app->get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "simulate") return cmd_simulate(o, prov, out);
    if (name == "fit") return cmd_fit(o, prov, out);
    if (name == "extract-shell")
      return cmd_select(o, prov, out, [&](const GradientScheme& g) { return single_shell_indices(g, o.b); });
    if (name == "reorder") return cmd_select(o, prov, out, reorder_halfsphere_indices);
    if (name == "subsample")
      return cmd_select(o, prov, out, [&](const GradientScheme& g) { return subsample_indices(g, o.fraction); });
    if (name == "train") return cmd_train(o, prov, out);
    if (name == "infer") return cmd_infer(o, prov, out);
    if (name == "evaluate") return cmd_evaluate(o, prov, out);
    if (name == "experiment") return cmd_experiment(o, sub->count("--threads") > 0, out);
    error_json(err, "usage", "unknown subcommand " + name);
    return 2;
  } catch (const ConfigError& e) {
    error_json(err, "config", e.what());
  } catch (const FormatError& e) {
    error_json(err, "format", e.what());
  } catch (const TrainingDiverged& e) {
    error_json(err, "diverged", e.what());
  } catch (const std::invalid_argument& e) {
    error_json(err, "invalid-argument", e.what());
  } catch (const std::exception& e) {
    error_json(err, "runtime", e.what());
  }
  return 1;
}

}  // namespace fodnet::cli
