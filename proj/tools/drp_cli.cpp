#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "drp/experiment.hpp"
#include "drp/image_io.hpp"
#include "drp/protocol.hpp"
#include "drp/sprox.hpp"

namespace {

// Exit codes: 0 ok, 2 config/usage, 3 IO, 4 solver divergence, 5 peer.
enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kDiverged = 4, kPeer = 5 };

int run_one(const std::string& config_path) {
  try {
    const drp::ExperimentOutcome outcome = drp::run_experiment(config_path);
    const char* status = outcome.solve.status == drp::SolveStatus::ok ? "ok"
                         : outcome.solve.status == drp::SolveStatus::diverged ? "diverged"
                                                                              : "peer_failed";
    std::printf("run %s: status=%s iters=%zu input_psnr=%.2fdB final_psnr=%.2fdB out=%s\n",
                config_path.c_str(), status, outcome.solve.trace.iterations(),
                outcome.input_psnr, outcome.final_psnr, outcome.out_dir.c_str());
    if (outcome.solve.status == drp::SolveStatus::diverged) {
      std::fprintf(stderr, "error: %s\n", outcome.solve.message.c_str());
      return kDiverged;
    }
    if (outcome.solve.status == drp::SolveStatus::peer_failed) {
      std::fprintf(stderr, "error: %s\n", outcome.solve.message.c_str());
      return kPeer;
    }
    return kOk;
  } catch (const drp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const drp::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const drp::DivergenceError& e) {
    std::fprintf(stderr, "solver divergence: %s\n", e.what());
    return kDiverged;
  } catch (const drp::PeerError& e) {
    std::fprintf(stderr, "peer error (%s): %s\n",
                 drp::peer_error_kind_name(e.kind()), e.what());
    return kPeer;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
}

// Fans the config list over up to `jobs` forked workers; the parent's exit
// code is the worst child code.
int run_many(const std::vector<std::string>& configs, int jobs) {
  if (configs.size() == 1 || jobs <= 1) {
    int worst = kOk;
    for (const auto& c : configs) worst = std::max(worst, run_one(c));
    return worst;
  }
  size_t next = 0;
  int active = 0;
  int worst = kOk;
  while (next < configs.size() || active > 0) {
    while (active < jobs && next < configs.size()) {
      const pid_t pid = ::fork();
      if (pid < 0) {
        std::fprintf(stderr, "error: fork failed\n");
        return kInternal;
      }
      if (pid == 0) ::_exit(run_one(configs[next]));
      ++next;
      ++active;
    }
    int status = 0;
    if (::waitpid(-1, &status, 0) > 0) {
      --active;
      worst = std::max(worst, WIFEXITED(status) ? WEXITSTATUS(status) : int(kInternal));
    }
  }
  return worst;
}

int run_theory(const std::string& config_path) {
  try {
    std::filesystem::path out_dir;
    const drp::TheoryReport report = drp::run_theory_config(config_path, &out_dir);
    std::printf(
        "theory %s: tweedie_max_rel_error=%.3e descent_violations=%d rate_violations=%d "
        "fixed_point_residual=%.3e out=%s\n",
        config_path.c_str(), report.tweedie_max_rel_error, report.descent_violations,
        report.rate.violations, report.fixed_point_residual,
        (out_dir / "theory.json").c_str());
    return kOk;
  } catch (const drp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const drp::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const drp::DivergenceError& e) {
    std::fprintf(stderr, "solver divergence: %s\n", e.what());
    return kDiverged;
  } catch (const drp::PeerError& e) {
    std::fprintf(stderr, "peer error (%s): %s\n",
                 drp::peer_error_kind_name(e.kind()), e.what());
    return kPeer;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
}

int run_synth(const std::string& spec_path) {
  try {
    drp::make_synthetic(spec_path);
    std::printf("synth %s: done\n", spec_path.c_str());
    return kOk;
  } catch (const drp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const drp::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
}

int run_echo() {
  try {
    drp::serve_restorer(STDIN_FILENO, STDOUT_FILENO,
                        [](const drp::WireTensor& t) { return t; });
    return kOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "peer error: %s\n", e.what());
    return kPeer;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Restoration-prior solver for linear inverse problems"};
  app.require_subcommand(1);

  std::vector<std::string> run_configs;
  int jobs = 1;
  auto* run_cmd = app.add_subcommand("run", "Run experiment config files");
  run_cmd->add_option("configs", run_configs, "JSON experiment configs")
      ->required()
      ->expected(-1);
  run_cmd->add_option("--jobs", jobs, "Max parallel worker processes")
      ->check(CLI::PositiveNumber);

  std::string synth_spec;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic PNG corpus");
  synth_cmd->add_option("spec", synth_spec, "JSON corpus spec")->required();

  std::string theory_config;
  auto* theory_cmd =
      app.add_subcommand("theory", "Run the convergence theory suite for a config");
  theory_cmd->add_option("config", theory_config, "JSON experiment config")->required();

  auto* echo_cmd =
      app.add_subcommand("protocol-echo", "Serve an echo restoration peer on stdin/stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (run_cmd->parsed()) return run_many(run_configs, jobs);
  if (synth_cmd->parsed()) return run_synth(synth_spec);
  if (theory_cmd->parsed()) return run_theory(theory_config);
  if (echo_cmd->parsed()) return run_echo();
  return kConfig;
}
