#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "drp/solver.hpp"
#include "drp/theory.hpp"

namespace drp {

/// Configuration file problem: unknown key, missing key, bad type, or a
/// value out of range. Raised before any computation or output.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentOutcome {
  SolveResult solve;
  std::filesystem::path out_dir;
  double input_psnr = 0.0;
  double final_psnr = 0.0;
  std::optional<TheoryReport> theory;
};

/// Loads and validates a JSON experiment config, builds the problem, runs
/// the solver, and writes restored.png, trace.csv, summary.json, a resolved
/// config copy, and theory.json when the theory block is enabled. Solver
/// divergence and peer failures are reported in the returned status, not
/// thrown; config and IO problems throw.
ExperimentOutcome run_experiment(const std::filesystem::path& config_path);

/// Runs only the theory suite of an analytic config; writes theory.json
/// into the output dir. Returns the report.
TheoryReport run_theory_config(const std::filesystem::path& config_path,
                               std::filesystem::path* out_dir_out = nullptr);

/// Deterministic texture synthesis. spec keys: kind (gradient |
/// checkerboard | bandlimited), height, width, optional channels (1),
/// cell (checkerboard, default 4), cutoff (bandlimited, default height/8),
/// seed (bandlimited, default 0). Values land in [0, 1].
Image synthesize_texture(const nlohmann::json& spec);

/// Writes the PNG corpus described by a synth spec file:
/// {"dir": path, "images": [{"name": file.png, ...texture spec}, ...]}.
void make_synthetic(const std::filesystem::path& spec_path);

/// CSV with header iter,iterate_change,objective,psnr,subgrad_norm; one
/// row per iteration, %.17g, absent columns left empty.
void emit_trace_csv(const ConvergenceTrace& trace, const std::filesystem::path& path);

}  // namespace drp
