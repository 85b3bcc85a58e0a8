#include "drp/experiment.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>

#include "drp/external_restorer.hpp"
#include "drp/image_io.hpp"
#include "drp/log.hpp"

namespace drp {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

void require_keys(const json& j, const std::string& ctx,
                  std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) { known = true; break; }
    if (!known) fail(ctx + ": unknown key '" + it.key() + "'");
  }
}

const json& get_req(const json& j, const std::string& ctx, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) fail(ctx + ": missing key '" + key + "'");
  return *it;
}

double as_num(const json& v, const std::string& ctx) {
  if (!v.is_number()) fail(ctx + ": expected a number");
  return v.get<double>();
}

long as_int(const json& v, const std::string& ctx) {
  if (!v.is_number_integer()) fail(ctx + ": expected an integer");
  return v.get<long>();
}

std::string as_str(const json& v, const std::string& ctx) {
  if (!v.is_string()) fail(ctx + ": expected a string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& ctx) {
  if (!v.is_boolean()) fail(ctx + ": expected a boolean");
  return v.get<bool>();
}

double num_or(const json& j, const std::string& ctx, const char* key, double def) {
  const auto it = j.find(key);
  return it == j.end() ? def : as_num(*it, ctx + "." + key);
}

long int_or(const json& j, const std::string& ctx, const char* key, long def) {
  const auto it = j.find(key);
  return it == j.end() ? def : as_int(*it, ctx + "." + key);
}

// ---------------------------------------------------------------- operators

// Key-set validation stays with the caller: a bare kernel block allows only
// {size, std}, an operator spec carries its kind alongside them.
Kernel2D kernel_from(const json& spec, const std::string& ctx) {
  const long size = as_int(get_req(spec, ctx, "size"), ctx + ".size");
  const double std_dev = as_num(get_req(spec, ctx, "std"), ctx + ".std");
  if (size < 1 || size % 2 == 0) fail(ctx + ".size: must be odd and positive");
  if (!(std_dev > 0.0)) fail(ctx + ".std: must be > 0");
  return gaussian_kernel(static_cast<int>(size), std_dev);
}

Kernel2D bare_kernel(const json& spec, const std::string& ctx) {
  require_keys(spec, ctx, {"size", "std"});
  return kernel_from(spec, ctx);
}

LinearOperator build_op(const json& spec, Shape domain, const std::string& ctx) {
  const std::string kind = as_str(get_req(spec, ctx, "kind"), ctx + ".kind");
  try {
    if (kind == "identity") {
      require_keys(spec, ctx, {"kind"});
      return identity_operator(domain);
    }
    if (kind == "blur") {
      require_keys(spec, ctx, {"kind", "size", "std"});
      return blur_operator(kernel_from(spec, ctx), domain);
    }
    if (kind == "decimate") {
      require_keys(spec, ctx, {"kind", "factor"});
      const long f = as_int(get_req(spec, ctx, "factor"), ctx + ".factor");
      return decimation_operator(static_cast<int>(f), domain);
    }
    if (kind == "bicubic") {
      require_keys(spec, ctx, {"kind", "factor"});
      const long f = as_int(get_req(spec, ctx, "factor"), ctx + ".factor");
      return bicubic_downsample_operator(static_cast<int>(f), domain);
    }
  } catch (const std::invalid_argument& e) {
    fail(ctx + ": " + e.what());
  }
  fail(ctx + ".kind: unknown operator kind '" + kind + "'");
}

// Ops listed in application order: A = ops[last] ∘ ... ∘ ops[0].
LinearOperator build_op_chain(const json& arr, Shape domain, const std::string& ctx) {
  if (!arr.is_array() || arr.empty()) fail(ctx + ": expected a nonempty array");
  LinearOperator acc = build_op(arr[0], domain, ctx + "[0]");
  for (size_t i = 1; i < arr.size(); ++i)
    acc = compose(build_op(arr[i], acc.range_shape(), ctx + "[" + std::to_string(i) + "]"), acc);
  return acc;
}

// --------------------------------------------------------------- covariance

CovarianceSpec build_covariance(const json& spec, Shape domain, const std::string& ctx) {
  const std::string kind = as_str(get_req(spec, ctx, "kind"), ctx + ".kind");
  if (kind == "isotropic") {
    require_keys(spec, ctx, {"kind", "variance"});
    const double v = as_num(get_req(spec, ctx, "variance"), ctx + ".variance");
    if (!(v > 0.0)) fail(ctx + ".variance: must be > 0");
    return IsotropicCovariance{v};
  }
  if (kind == "rbf") {
    require_keys(spec, ctx, {"kind", "variance", "corr_length", "jitter"});
    const double v = as_num(get_req(spec, ctx, "variance"), ctx + ".variance");
    const double ell = as_num(get_req(spec, ctx, "corr_length"), ctx + ".corr_length");
    const double jitter = num_or(spec, ctx, "jitter", 1e-8 * v);
    if (!(v > 0.0)) fail(ctx + ".variance: must be > 0");
    if (!(ell > 0.0)) fail(ctx + ".corr_length: must be > 0");
    const long n = domain.size();
    if (n > kDefaultMaterializeCap)
      fail(ctx + ": rbf covariance needs n <= " + std::to_string(kDefaultMaterializeCap));
    // Squared-exponential over pixel coordinates, zero across channels.
    DenseMatrix cov = DenseMatrix::Zero(n, n);
    const long plane = static_cast<long>(domain.height) * domain.width;
    for (long i = 0; i < n; ++i) {
      const long ci = i / plane, yi = (i % plane) / domain.width, xi = i % domain.width;
      for (long j = i; j < n; ++j) {
        const long cj = j / plane, yj = (j % plane) / domain.width, xj = j % domain.width;
        if (ci != cj) continue;
        const double d2 = double(yi - yj) * (yi - yj) + double(xi - xj) * (xi - xj);
        const double w = v * std::exp(-d2 / (2.0 * ell * ell));
        cov(i, j) = w;
        cov(j, i) = w;
      }
    }
    cov.diagonal().array() += jitter;
    return cov;
  }
  fail(ctx + ".kind: unknown covariance kind '" + kind + "'");
}

// -------------------------------------------------------------------- prior

struct BuiltPrior {
  std::shared_ptr<RestorationOperator> restorer;
  LinearOperator H;
  std::shared_ptr<const GaussianPriorModel> model;  // null unless analytic
};

BuiltPrior build_prior(const json& spec, Shape domain, const std::string& ctx) {
  const std::string kind = as_str(get_req(spec, ctx, "kind"), ctx + ".kind");
  if (kind == "gaussian-analytic") {
    require_keys(spec, ctx, {"kind", "mean", "covariance", "degradation", "sigma"});
    const double mean = as_num(get_req(spec, ctx, "mean"), ctx + ".mean");
    const double sigma = as_num(get_req(spec, ctx, "sigma"), ctx + ".sigma");
    if (!(sigma > 0.0)) fail(ctx + ".sigma: must be > 0");
    LinearOperator h = build_op(get_req(spec, ctx, "degradation"), domain, ctx + ".degradation");
    CovarianceSpec cov =
        build_covariance(get_req(spec, ctx, "covariance"), domain, ctx + ".covariance");
    try {
      auto model = std::make_shared<const GaussianPriorModel>(
          Image(domain, mean), std::move(cov), h, sigma);
      return {std::make_shared<GaussianMmseRestorer>(model), std::move(h), model};
    } catch (const std::invalid_argument& e) {
      fail(ctx + ": " + e.what());
    }
  }
  if (kind == "external") {
    require_keys(spec, ctx, {"kind", "command", "address", "degradation", "sigma", "timeout_ms"});
    PeerEndpoint endpoint;
    if (const auto it = spec.find("command"); it != spec.end()) {
      if (!it->is_array() || it->empty()) fail(ctx + ".command: expected a nonempty array");
      for (const auto& a : *it)
        endpoint.command.push_back(as_str(a, ctx + ".command[]"));
    }
    if (const auto it = spec.find("address"); it != spec.end())
      endpoint.address = as_str(*it, ctx + ".address");
    if (endpoint.command.empty() == endpoint.address.empty())
      fail(ctx + ": exactly one of command or address is required");
    // sigma is accepted for the record (the peer's training noise level)
    // but nothing analytic can be computed from an external prior.
    if (const auto it = spec.find("sigma"); it != spec.end())
      (void)as_num(*it, ctx + ".sigma");
    const long timeout = int_or(spec, ctx, "timeout_ms", kDefaultPeerTimeoutMs);
    LinearOperator h = build_op(get_req(spec, ctx, "degradation"), domain, ctx + ".degradation");
    auto restorer = std::shared_ptr<RestorationOperator>(
        external_restorer(endpoint, h.range_shape(), domain, static_cast<int>(timeout)));
    return {std::move(restorer), std::move(h), nullptr};
  }
  if (kind == "identity") {
    require_keys(spec, ctx, {"kind"});
    return {std::make_shared<IdentityRestorer>(domain), identity_operator(domain), nullptr};
  }
  fail(ctx + ".kind: unknown prior kind '" + kind + "'");
}

// ----------------------------------------------------------------- assembly

struct BuiltExperiment {
  Image ground_truth;
  Image y;
  Image x0;
  LinearOperator A;
  SolverConfig solver;
  fs::path out_dir;
  json resolved;       // exact record of what ran
  bool theory_enabled = false;
  double theory_alpha = 2.0;
  long theory_iterations = 200;
  long theory_trials = 100;
  uint64_t theory_seed = 1;
  std::shared_ptr<const GaussianPriorModel> theory_model;
};

json read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail("config parse error in " + path.string() + ": " + e.what());
  }
}

Image load_input(const json& input, const std::string& ctx) {
  require_keys(input, ctx, {"image", "synthetic"});
  const bool has_image = input.contains("image");
  const bool has_synth = input.contains("synthetic");
  if (has_image == has_synth) fail(ctx + ": exactly one of image or synthetic is required");
  if (has_image) return read_image(as_str(input["image"], ctx + ".image"));
  return synthesize_texture(input["synthetic"]);
}

BuiltExperiment build_experiment(const fs::path& config_path) {
  const json root = read_config_file(config_path);
  require_keys(root, "config",
               {"problem", "input", "seed", "prior", "priors", "solver", "output", "theory"});

  // ---- problem block
  const json& problem = get_req(root, "config", "problem");
  const std::string kind = as_str(get_req(problem, "problem", "kind"), "problem.kind");
  const double noise_sigma = num_or(problem, "problem", "noise_sigma", 0.0);
  if (noise_sigma < 0.0) fail("problem.noise_sigma: must be >= 0");

  // ---- input block
  BuiltExperiment built{.ground_truth = load_input(get_req(root, "config", "input"), "input"),
                        .y = {},
                        .x0 = {},
                        .A = identity_operator({1, 1, 1}),
                        .solver = {},
                        .out_dir = {},
                        .resolved = json::object()};
  const Shape domain = built.ground_truth.shape();

  long sr_factor = 0;
  if (kind == "deblur") {
    require_keys(problem, "problem", {"kind", "kernel", "noise_sigma"});
    try {
      built.A = blur_operator(
          bare_kernel(get_req(problem, "problem", "kernel"), "problem.kernel"), domain);
    } catch (const std::invalid_argument& e) {
      fail(std::string("problem: ") + e.what());
    }
  } else if (kind == "sisr") {
    require_keys(problem, "problem", {"kind", "kernel", "sr_factor", "noise_sigma"});
    sr_factor = as_int(get_req(problem, "problem", "sr_factor"), "problem.sr_factor");
    if (sr_factor < 2) fail("problem.sr_factor: must be >= 2");
    LinearOperator k =
        blur_operator(bare_kernel(get_req(problem, "problem", "kernel"), "problem.kernel"), domain);
    try {
      built.A = compose(decimation_operator(static_cast<int>(sr_factor), domain), std::move(k));
    } catch (const std::invalid_argument& e) {
      fail(std::string("problem: ") + e.what());
    }
  } else if (kind == "denoise") {
    require_keys(problem, "problem", {"kind", "noise_sigma"});
    built.A = identity_operator(domain);
  } else if (kind == "custom") {
    require_keys(problem, "problem", {"kind", "ops", "noise_sigma"});
    built.A = build_op_chain(get_req(problem, "problem", "ops"), domain, "problem.ops");
  } else {
    fail("problem.kind: unknown kind '" + kind + "'");
  }

  // ---- measurement
  const long seed_raw = int_or(root, "config", "seed", 0);
  if (seed_raw < 0) fail("seed: must be >= 0");
  const uint64_t seed = static_cast<uint64_t>(seed_raw);
  built.y = add_awgn(built.A.forward(built.ground_truth), noise_sigma, RngSeed{seed});

  // Initialization: the observation itself when A is square; otherwise the
  // adjoint upsample scaled so its mean level matches the observation.
  if (built.A.domain_shape() == built.A.range_shape()) {
    built.x0 = built.y;
  } else {
    built.x0 = built.A.adjoint(built.y);
    const double gain = sr_factor >= 2
                            ? static_cast<double>(sr_factor * sr_factor)
                            : static_cast<double>(domain.size()) / built.y.size();
    built.x0 *= gain;
  }

  // ---- solver block
  const json& solver = get_req(root, "config", "solver");
  require_keys(solver, "solver",
               {"gamma", "tau", "alpha", "max_iters", "stop_tol", "cg", "schedule"});
  built.solver.gamma = as_num(get_req(solver, "solver", "gamma"), "solver.gamma");
  built.solver.tau = as_num(get_req(solver, "solver", "tau"), "solver.tau");
  if (!(built.solver.gamma > 0.0)) fail("solver.gamma: must be > 0");
  if (!(built.solver.tau > 0.0)) fail("solver.tau: must be > 0");
  if (solver.contains("alpha")) {
    built.solver.alpha = as_num(solver["alpha"], "solver.alpha");
    if (!(*built.solver.alpha > 1.0)) fail("solver.alpha: must be > 1");
  }
  const long max_iters = as_int(get_req(solver, "solver", "max_iters"), "solver.max_iters");
  if (max_iters < 0) fail("solver.max_iters: must be >= 0");
  built.solver.max_iters = static_cast<int>(max_iters);
  built.solver.stop_tol = num_or(solver, "solver", "stop_tol", 0.0);
  if (built.solver.stop_tol < 0.0) fail("solver.stop_tol: must be >= 0");

  if (solver.contains("cg")) {
    const json& cg = solver["cg"];
    require_keys(cg, "solver.cg", {"max_iters", "residual_tol", "warm_start"});
    built.solver.cg.max_iters = static_cast<int>(int_or(cg, "solver.cg", "max_iters", 3));
    built.solver.cg.residual_tol = num_or(cg, "solver.cg", "residual_tol", 0.0);
    if (const auto it = cg.find("warm_start"); it != cg.end())
      built.solver.cg.warm_start = as_bool(*it, "solver.cg.warm_start");
    if (built.solver.cg.max_iters < 1) fail("solver.cg.max_iters: must be >= 1");
    if (built.solver.cg.residual_tol < 0.0) fail("solver.cg.residual_tol: must be >= 0");
  }

  // ---- priors and schedule
  const bool has_schedule = solver.contains("schedule");
  if (max_iters > 0) {
    if (has_schedule) {
      const json& sched = solver["schedule"];
      if (!sched.is_array() || sched.empty()) fail("solver.schedule: expected a nonempty array");
      const json& priors = get_req(root, "config", "priors");
      if (!priors.is_object()) fail("priors: expected an object");
      for (size_t i = 0; i < sched.size(); ++i) {
        const std::string ctx = "solver.schedule[" + std::to_string(i) + "]";
        require_keys(sched[i], ctx, {"prior", "iters"});
        const std::string name = as_str(get_req(sched[i], ctx, "prior"), ctx + ".prior");
        const long iters = as_int(get_req(sched[i], ctx, "iters"), ctx + ".iters");
        if (iters < 1) fail(ctx + ".iters: must be >= 1");
        if (!priors.contains(name)) fail(ctx + ": no prior named '" + name + "'");
        BuiltPrior p = build_prior(priors[name], domain, "priors." + name);
        if (i == 0) built.theory_model = p.model;
        built.solver.schedule.stages.push_back(
            {std::move(p.restorer), std::move(p.H), static_cast<int>(iters)});
      }
    } else {
      BuiltPrior p = build_prior(get_req(root, "config", "prior"), domain, "prior");
      built.theory_model = p.model;
      built.solver.schedule.stages.push_back(
          {std::move(p.restorer), std::move(p.H), static_cast<int>(max_iters)});
    }
  }

  // ---- output block
  const json& output = get_req(root, "config", "output");
  require_keys(output, "output", {"dir"});
  built.out_dir = as_str(get_req(output, "output", "dir"), "output.dir");

  // ---- theory block
  if (root.contains("theory")) {
    const json& theory = root["theory"];
    require_keys(theory, "theory", {"enabled", "alpha", "iterations", "trials", "seed"});
    if (const auto it = theory.find("enabled"); it != theory.end())
      built.theory_enabled = as_bool(*it, "theory.enabled");
    built.theory_alpha = num_or(theory, "theory", "alpha", 2.0);
    built.theory_iterations = int_or(theory, "theory", "iterations", 200);
    built.theory_trials = int_or(theory, "theory", "trials", 100);
    built.theory_seed = static_cast<uint64_t>(int_or(theory, "theory", "seed", 1));
    if (!(built.theory_alpha > 1.0)) fail("theory.alpha: must be > 1");
    if (built.theory_iterations < 1) fail("theory.iterations: must be >= 1");
    if (built.theory_trials < 1) fail("theory.trials: must be >= 1");
    if (built.theory_enabled && built.theory_model == nullptr)
      fail("theory: requires a gaussian-analytic prior in the first stage");
  }

  // ---- resolved copy (defaults materialized)
  json res = root;
  res["seed"] = seed;
  res["problem"]["noise_sigma"] = noise_sigma;
  res["solver"]["stop_tol"] = built.solver.stop_tol;
  res["solver"]["cg"] = {{"max_iters", built.solver.cg.max_iters},
                         {"residual_tol", built.solver.cg.residual_tol},
                         {"warm_start", built.solver.cg.warm_start}};
  built.resolved = std::move(res);
  return built;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::ok: return "ok";
    case SolveStatus::diverged: return "diverged";
    case SolveStatus::peer_failed: return "peer_failed";
  }
  return "unknown";
}

}  // namespace

Image synthesize_texture(const json& spec) {
  require_keys(spec, "synthetic",
               {"kind", "height", "width", "channels", "cell", "cutoff", "seed"});
  const std::string kind = as_str(get_req(spec, "synthetic", "kind"), "synthetic.kind");
  const long h = as_int(get_req(spec, "synthetic", "height"), "synthetic.height");
  const long w = as_int(get_req(spec, "synthetic", "width"), "synthetic.width");
  const long c = int_or(spec, "synthetic", "channels", 1);
  if (h < 1 || w < 1 || c < 1) fail("synthetic: dims must be positive");
  const Shape shape{static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)};
  Image img(shape);

  if (kind == "gradient") {
    const double denom = std::max(1.0, double(h - 1 + w - 1));
    for (int ch = 0; ch < shape.channels; ++ch)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x)
          img.at(ch, y, x) = (y + x) / denom;
    return img;
  }

  if (kind == "checkerboard") {
    const long cell = int_or(spec, "synthetic", "cell", 4);
    if (cell < 1) fail("synthetic.cell: must be >= 1");
    for (int ch = 0; ch < shape.channels; ++ch)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x)
          img.at(ch, y, x) = double(((x / cell) + (y / cell)) % 2);
    return img;
  }

  if (kind == "bandlimited") {
    const long cutoff = int_or(spec, "synthetic", "cutoff", std::max(1L, h / 8));
    if (cutoff < 0) fail("synthetic.cutoff: must be >= 0");
    const uint64_t seed = static_cast<uint64_t>(int_or(spec, "synthetic", "seed", 0));
    SplitMix64 rng(seed);

    // Hermitian random spectrum supported on per-axis frequencies with
    // min(u, H−u) <= cutoff, inverted by direct summation over the support.
    auto kept = [cutoff](long u, long extent) {
      return std::min(u, extent - u) <= cutoff;
    };
    using cd = std::complex<double>;
    for (int ch = 0; ch < shape.channels; ++ch) {
      Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic> spec_mat(h, w);
      spec_mat.setZero();
      std::vector<std::vector<bool>> set(h, std::vector<bool>(w, false));
      for (long u = 0; u < h; ++u) {
        if (!kept(u, h)) continue;
        for (long v = 0; v < w; ++v) {
          if (!kept(v, w) || set[u][v]) continue;
          const long uc = (h - u) % h, vc = (w - v) % w;
          if (uc == u && vc == v) {
            spec_mat(u, v) = cd(rng.next_gaussian(), 0.0);
          } else {
            const cd f(rng.next_gaussian() / std::sqrt(2.0),
                       rng.next_gaussian() / std::sqrt(2.0));
            spec_mat(u, v) = f;
            spec_mat(uc, vc) = std::conj(f);
            set[uc][vc] = true;
          }
          set[u][v] = true;
        }
      }
      constexpr double two_pi = 6.283185307179586476925286766559;
      for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
          double acc = 0.0;
          for (long u = 0; u < h; ++u) {
            if (!kept(u, h)) continue;
            for (long v = 0; v < w; ++v) {
              if (!kept(v, w)) continue;
              const double phase = two_pi * (double(u) * y / h + double(v) * x / w);
              const cd f = spec_mat(u, v);
              acc += f.real() * std::cos(phase) - f.imag() * std::sin(phase);
            }
          }
          img.at(ch, y, x) = acc / double(h * w);
        }
      }
    }
    // Affine rescale to [0,1]: adds only a DC component, so the band limit
    // survives.
    double lo = img.data()[0], hi = img.data()[0];
    for (double v : img.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo < 1e-300) {
      for (auto& v : img.data()) v = 0.5;
    } else {
      for (auto& v : img.data()) v = (v - lo) / (hi - lo);
    }
    return img;
  }

  fail("synthetic.kind: unknown kind '" + kind + "'");
}

void make_synthetic(const fs::path& spec_path) {
  const json root = read_config_file(spec_path);
  require_keys(root, "synth", {"dir", "images"});
  const fs::path dir = as_str(get_req(root, "synth", "dir"), "synth.dir");
  const json& images = get_req(root, "synth", "images");
  if (!images.is_array() || images.empty()) fail("synth.images: expected a nonempty array");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  for (size_t i = 0; i < images.size(); ++i) {
    const std::string ctx = "synth.images[" + std::to_string(i) + "]";
    json spec = images[i];
    if (!spec.is_object()) fail(ctx + ": expected an object");
    const auto name_it = spec.find("name");
    if (name_it == spec.end()) fail(ctx + ": missing key 'name'");
    const std::string name = as_str(*name_it, ctx + ".name");
    spec.erase("name");
    write_image(synthesize_texture(spec), (dir / name).string());
  }
}

void emit_trace_csv(const ConvergenceTrace& trace, const fs::path& path) {
  std::string text = "iter,iterate_change,objective,psnr,subgrad_norm\n";
  const size_t n = trace.iterations();
  const bool has_obj = trace.objective.size() == n && n > 0;
  const bool has_psnr = trace.psnr_db.size() == n && n > 0;
  const bool has_w = trace.subgrad_norm.size() == n && n > 0;
  for (size_t k = 0; k < n; ++k) {
    text += std::to_string(k + 1);
    text += ',';
    text += fmt17(trace.iterate_change_sq[k]);
    text += ',';
    if (has_obj) text += fmt17(trace.objective[k]);
    text += ',';
    if (has_psnr) text += fmt17(trace.psnr_db[k]);
    text += ',';
    if (has_w) text += fmt17(trace.subgrad_norm[k]);
    text += '\n';
  }
  write_text(path, text);
}

ExperimentOutcome run_experiment(const fs::path& config_path) {
  BuiltExperiment built = build_experiment(config_path);

  std::error_code ec;
  fs::create_directories(built.out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory " + built.out_dir.string() + ": " +
                  ec.message());

  ExperimentOutcome outcome{drp_solve(built.x0, built.y, built.A, built.solver,
                                      &built.ground_truth),
                            built.out_dir, 0.0, 0.0, std::nullopt};

  outcome.input_psnr = built.y.shape() == built.ground_truth.shape()
                           ? psnr(built.y, built.ground_truth)
                           : psnr(built.x0, built.ground_truth);
  outcome.final_psnr = psnr(outcome.solve.x, built.ground_truth);

  write_image(built.ground_truth, (built.out_dir / "ground_truth.png").string());
  write_image(built.y, (built.out_dir / "observation.png").string());
  write_image(outcome.solve.x, (built.out_dir / "restored.png").string());
  emit_trace_csv(outcome.solve.trace, built.out_dir / "trace.csv");
  write_text(built.out_dir / "config.json", built.resolved.dump(2) + "\n");

  json summary;
  summary["status"] = status_name(outcome.solve.status);
  if (!outcome.solve.message.empty()) summary["message"] = outcome.solve.message;
  summary["iterations"] = outcome.solve.trace.iterations();
  summary["input_psnr"] = outcome.input_psnr;
  summary["final_psnr"] = outcome.final_psnr;
  if (!outcome.solve.trace.iterate_change_sq.empty()) {
    const double last_sq = outcome.solve.trace.iterate_change_sq.back();
    summary["final_relative_change"] =
        std::sqrt(last_sq) / std::max(norm(outcome.solve.x), 1e-12);
  }

  if (built.theory_enabled && outcome.solve.status == SolveStatus::ok) {
    TheoryReport report = run_theory_suite(
        built.theory_model, built.A, built.y, built.x0, built.solver.tau,
        built.theory_alpha, static_cast<int>(built.theory_iterations),
        RngSeed{built.theory_seed});
    write_text(built.out_dir / "theory.json", theory_report_json(report).dump(2) + "\n");
    summary["theory_descent_violations"] = report.descent_violations;
    summary["theory_rate_violations"] = report.rate.violations;
    outcome.theory = std::move(report);
  }

  write_text(built.out_dir / "summary.json", summary.dump(2) + "\n");
  return outcome;
}

TheoryReport run_theory_config(const fs::path& config_path, fs::path* out_dir_out) {
  BuiltExperiment built = build_experiment(config_path);
  if (built.theory_model == nullptr)
    fail("theory: requires a gaussian-analytic prior in the first stage");

  std::error_code ec;
  fs::create_directories(built.out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory " + built.out_dir.string() + ": " +
                  ec.message());

  TheoryReport report = run_theory_suite(
      built.theory_model, built.A, built.y, built.x0, built.solver.tau,
      built.theory_alpha, static_cast<int>(built.theory_iterations),
      RngSeed{built.theory_seed});
  write_text(built.out_dir / "theory.json", theory_report_json(report).dump(2) + "\n");
  if (out_dir_out != nullptr) *out_dir_out = built.out_dir;
  return report;
}

}  // namespace drp
