// Command-line front end. Kept as a library so tests can run commands in-process.
#pragma once

#include <CLI11.hpp>

#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace fodnet::cli {

/// Values bound to the parser's flags.
struct Options {
  int threads = 0;  // 0: $FODNET_THREADS, else hardware concurrency

  std::string scene, protocol, out;
  long long seed = -1;  // -1: keep the scene's own seed
  double snr = 0.0;     // 0: keep the scene's own SNR

  std::string model, dwi, bvecs, bvals, response, mask;
  int lmax = 4;
  bool normalize = false;

  double b = 0.0;
  double fraction = 1.0;

  std::string arch, config;
  std::vector<std::string> train_scenes, val_scenes;
  bool verbose = false;

  std::string checkpoint, input;
  int patch = 32, stride = 16;

  std::string pred, truth, wm_mask, regions, report, cdf, acc_csv;

  int experiment = 0;
  std::string from;
};

/// Parser with every subcommand and flag registered and bound to `o`.
std::unique_ptr<CLI::App> make_parser(Options& o);

/// Runs one command line (args exclude the program name). Errors are written to
/// `err` as a single JSON object {"error": {"type", "message"}}; the return value
/// is the process exit code: 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fodnet::cli
