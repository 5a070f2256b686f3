// Experiment drivers at phantom scale: same-protocol cross-validation,
// cross-protocol testing, direction subsampling and region-wise summaries.
//
// Experiment configs combine an [experiment] section with a [train] section
// (see trainer.hpp):
//
//   [experiment]
//   scenes = crossing-X, kissing-C, three-way, crossing-oblique, arc-U
//   protocol = B               # training and test protocol (experiments 1, 3, 4)
//   train_protocol = A         # experiment 2 trains on this protocol ...
//   test_protocol = B          # ... and tests on this one
//   snr = 30
//   lmax = 4
//   phantom_seed = 0           # added to each scene's own seed
//   folds = 0                  # 0: 5 when there are >= 5 scenes, else leave-one-out
//   max_folds = 0              # 0: run every fold
//   fractions = 1, 0.75, 0.5, 0.25
//   infer_patch = 32
//   infer_stride = 16
//   threads = 1
#pragma once

#include "fodnet/config.hpp"
#include "fodnet/csd.hpp"
#include "fodnet/dwi.hpp"
#include "fodnet/metrics.hpp"
#include "fodnet/phantom.hpp"
#include "fodnet/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fodnet {

struct ExperimentConfig {
  std::vector<std::string> scenes{"crossing-X", "kissing-C", "three-way", "crossing-oblique", "arc-U"};
  std::string protocol = "B";
  std::string train_protocol = "A";
  std::string test_protocol = "B";
  double snr = 30.0;
  int lmax = 4;
  std::uint64_t phantom_seed = 0;
  int folds = 0;
  int max_folds = 0;
  std::vector<double> fractions{1.0, 0.75, 0.5, 0.25};
  int infer_patch = 32;
  int infer_stride = 16;
  int threads = 1;
  bool verbose = false;  // progress on stderr; not part of the config text
  TrainConfig train;

  int fold_count() const;
  void validate() const;
  static ExperimentConfig from_config(const Config& cfg);  // [experiment] and [train]
  std::string to_config() const;  // omits threads and verbose, which do not change results
};

/// Scene i goes to fold i mod k; returns the scene indices of each fold.
std::vector<std::vector<std::size_t>> fold_split(std::size_t scenes, int folds);

/// A generated scene with its normalized fits.
struct PreparedScene {
  std::string name;
  std::string protocol;
  std::uint64_t seed = 0;
  PhantomTruth truth;          // truth.coeffs normalized over the brain mask
  ResponseSet responses;
  DwiVolume single_shell;      // b0 entries plus the protocol's single shell
  CoeffVolume target;          // M-CSD fit, normalized
  CoeffVolume input;           // 2TS-CSD fit of single_shell, normalized
};

PhantomSpec experiment_scene_spec(const ExperimentConfig& cfg, const std::string& name, const std::string& protocol);
PreparedScene prepare_scene(const ExperimentConfig& cfg, const std::string& name, const std::string& protocol);

/// Training pair for a prepared scene: 2TS input, M-CSD target, WM sampling mask.
TrainingScene training_scene(const PreparedScene& s);

/// 2TS-CSD refit after half-sphere reordering and truncation to `fraction`, normalized.
CoeffVolume subsampled_input(const PreparedScene& s, double fraction, int threads);

struct SceneResult {
  std::string scene;
  int fold = 0;
  double fraction = 1.0;
  std::string checkpoint_id;   // SHA-256 of the checkpoint bytes
  EvalReport cnn;
  EvalReport baseline;         // 2TS-CSD against truth
};

struct FoldModel {
  int fold = 0;
  std::vector<std::string> train_scenes;
  std::vector<std::string> test_scenes;
  net::Checkpoint checkpoint;  // best validation checkpoint
  std::string checkpoint_id;
};

struct ExperimentResult {
  int experiment = 0;
  std::vector<FoldModel> models;
  std::vector<SceneResult> results;

  std::string summary_json() const;
};

/// Each entry point writes its reports under `out_dir` when it is non-empty.
/// Same config, same bytes: reports and checkpoints are deterministic.
ExperimentResult run_experiment1(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
ExperimentResult run_experiment2(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Reuses the fold checkpoints of an experiment-1 result without retraining.
/// At fraction 1 the experiment-1 input is reused, so those reports match it exactly.
ExperimentResult run_experiment3(const ExperimentConfig& cfg, const ExperimentResult& exp1,
                                 const std::filesystem::path& out_dir);

/// Region-wise tables for the experiment-1 test scenes (region stats are part of each report).
ExperimentResult run_experiment4(const ExperimentConfig& cfg, const ExperimentResult& exp1,
                                 const std::filesystem::path& out_dir);

/// Loads fold checkpoints written by run_experiment1 (fold-<k>/best.ckpt) into a result
/// usable by experiments 3 and 4.
ExperimentResult load_experiment1(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Rows: scene,fold,fraction,method,label,name,count,min,q1,median,q3,max
std::string region_table_csv(const std::vector<SceneResult>& results);

}  // namespace fodnet
