#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cpf/synth.hpp"
#include "cpf/training.hpp"

namespace cpf::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kUsage = 2,
  kDataError = 3,
};

/// Everything a subcommand can be configured with.
struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
  bool train_text = false;
  std::string ablation = "full";

  std::string setting = "cw";
  std::string split = "test";
  std::size_t bias_grid = 0;  // 0 = exact margin grid
  unsigned threads = 0;       // 0 = CPF_THREADS, else 1

  std::filesystem::path data_dir;
  std::filesystem::path features;
  std::filesystem::path text;
  std::filesystem::path words;
  std::filesystem::path splits;
  std::filesystem::path out;
  std::filesystem::path log;
  std::filesystem::path checkpoint;
  std::filesystem::path report;
};

/// Parses `args` (without the program name) and runs the selected
/// subcommand. Never throws; returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Key/value pairs from a `key = value` file with '#' comments.
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& text);

// ---- gradient verification ---------------------------------------------

struct GradcheckOptions {
  double eps = 1e-5;
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

struct GradcheckPath {
  std::string name;
  double max_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_tensor;
};

inline constexpr double kGradTolerance = 1e-4;

/// Checks every loss path of the model on small random instances
/// (d=4, D=6, T=3, B=3, M=3, N=2), one instance per seed.
std::vector<GradcheckPath> run_gradcheck(const GradcheckOptions& options);

}  // namespace cpf::cli
