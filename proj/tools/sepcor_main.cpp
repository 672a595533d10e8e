// Command line front end: `fit`, `test`, and `simulate` subcommands over the
// sepcor library. CSV in, JSON/CSV out. Exit codes: 0 success (fit converged),
// 2 fit hit the iteration cap, 3 fit stopped on an indefinite iterate,
// 1 input or configuration error.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sepcor/sepcor.hpp"

namespace {

using nlohmann::ordered_json;
using namespace sepcor;

constexpr const char* kCellHelp =
    "column (k−1)·r + j holds data-matrix cell (row j = V-index, column k = "
    "U-index)";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ordered_json matrix_json(const Matrix& m) {
  ordered_json j;
  j["dims"] = {m.rows(), m.cols()};
  ordered_json data = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index k = 0; k < m.cols(); ++k) {
      data.push_back(m(i, k));
    }
  }
  j["data"] = std::move(data);
  return j;
}

ordered_json vector_json(const Vector& v) {
  ordered_json data = ordered_json::array();
  for (Index i = 0; i < v.size(); ++i) {
    data.push_back(v[i]);
  }
  return data;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + path);
  }
  out << text;
  if (!out) {
    throw std::runtime_error("failed writing output file: " + path);
  }
}

Init parse_init(const std::string& name, std::uint64_t seed) {
  if (name == "identity") return Init::identity();
  if (name == "sample") return Init::sample_based();
  return Init::random(seed);
}

/// Reorders row-major cell columns (j-1)*c + k into the library's
/// column-major convention (k-1)*r + j. No-op validation is left to Dataset
/// when the column count does not match r*c.
Matrix untranspose_cells(const Matrix& y, Index r, Index c) {
  if (y.cols() != r * c) return y;
  Matrix out(y.rows(), y.cols());
  for (Index j = 0; j < r; ++j) {
    for (Index k = 0; k < c; ++k) {
      out.col(k * r + j) = y.col(j * c + k);
    }
  }
  return out;
}

struct FitArgs {
  std::string y_path;
  std::string x_path;
  bool header = false;
  Index r = 0;
  Index c = 0;
  std::string model = "sepcor";
  double tol = 1e-10;
  int max_iter = 10000;
  std::string init = "identity";
  std::uint64_t seed = 0;
  std::string out;
  bool transpose_cells = false;
  bool emit_sigma = false;
  bool trace = false;
};

int exit_code_for(Termination t) {
  switch (t) {
    case Termination::kConverged: return 0;
    case Termination::kMaxIterations: return 2;
    case Termination::kIndefiniteU:
    case Termination::kIndefiniteV: return 3;
  }
  return 1;
}

Dataset load_dataset(const std::string& y_path, const std::string& x_path,
                     bool header, Index r, Index c, bool transpose_cells) {
  Matrix y = csv::read_matrix(y_path, header);
  if (transpose_cells) {
    y = untranspose_cells(y, r, c);
  }
  if (x_path.empty()) {
    return Dataset::with_intercept(std::move(y), r, c);
  }
  Matrix x = csv::read_matrix(x_path, header);
  return Dataset(std::move(y), std::move(x), r, c);
}

int run_fit(const FitArgs& a) {
  const Dataset d =
      load_dataset(a.y_path, a.x_path, a.header, a.r, a.c, a.transpose_cells);
  SolverConfig cfg;
  cfg.epsilon = a.tol;
  cfg.max_iterations = a.max_iter;
  cfg.init = parse_init(a.init, a.seed);

  ordered_json j;
  j["model"] = a.model;
  int code = 0;
  if (a.model == "unrestricted") {
    const UnrestrictedFit fit = fit_unrestricted(d);
    j["beta"] = matrix_json(fit.beta);
    j["U"] = nullptr;
    j["V"] = nullptr;
    j["w"] = nullptr;
    j["sigma"] = matrix_json(fit.sigma);
    j["nll"] = fit.nll;
    j["iterations"] = 0;
    j["termination"] = to_string(Termination::kConverged);
  } else if (a.model == "sepcov") {
    const SepCovFitReport fit = fit_sepcov(d, cfg);
    const IdentifiedFactors id = identify(RelaxedParams{
        fit.params.u_tilde, fit.params.v_tilde,
        StdDevVector(Vector::Ones(d.q()))});
    j["beta"] = matrix_json(fit.params.beta);
    j["U"] = matrix_json(id.u.matrix());
    j["V"] = matrix_json(id.v.matrix());
    j["w"] = vector_json(id.w.values());
    if (a.emit_sigma) j["sigma"] = matrix_json(fit.sigma());
    j["nll"] = fit.nll;
    j["iterations"] = fit.iterations;
    j["termination"] = to_string(fit.termination);
    if (a.trace) j["objective_trace"] = fit.objective_trace;
    code = exit_code_for(fit.termination);
  } else {
    const FitReport fit = fit_sepcor(d, cfg);
    j["beta"] = matrix_json(fit.params.beta);
    j["U"] = matrix_json(fit.params.u.matrix());
    j["V"] = matrix_json(fit.params.v.matrix());
    j["w"] = vector_json(fit.params.w.values());
    if (a.emit_sigma) j["sigma"] = matrix_json(fit.sigma());
    j["nll"] = fit.nll;
    j["iterations"] = fit.iterations;
    j["termination"] = to_string(fit.termination);
    if (a.trace) j["objective_trace"] = fit.objective_trace;
    code = exit_code_for(fit.termination);
  }
  write_text(a.out, j.dump(2) + "\n");
  return code;
}

struct TestArgs {
  std::string y_path;
  std::string x_path;
  bool header = false;
  Index r = 0;
  Index c = 0;
  std::string hypothesis = "cov-vs-cor";
  int b = 99;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;
};

int run_test(const TestArgs& a) {
  const Dataset d = load_dataset(a.y_path, a.x_path, a.header, a.r, a.c,
                                 /*transpose_cells=*/false);
  HypothesisTest t;
  t.kind = a.hypothesis == "cov-vs-cor" ? TestKind::kCovVsCor
                                        : TestKind::kCorVsUnrestricted;
  t.b_replicates = a.b;
  t.alpha = a.alpha;
  t.seed = a.seed;
  const TestResult res = bootstrap_test(d, t, SolverConfig{}, a.workers);

  ordered_json j;
  j["hypothesis"] = a.hypothesis;
  j["lr_observed"] = res.lr_observed;
  j["log_lr_observed"] = res.log_lr_observed;
  j["p_value"] = res.p_value;
  j["reject"] = res.reject;
  j["b_effective"] = res.b_effective();
  j["failed_replicates"] = res.failed_replicates;
  j["alpha"] = a.alpha;
  j["seed"] = a.seed;
  write_text(a.out, j.dump(2) + "\n");
  return 0;
}

struct SimArgs {
  std::string config_path;
  std::string out;
  int workers = 1;
};

const ordered_json& require_field(const ordered_json& j,
                                  const std::string& ptr,
                                  const std::string& key) {
  if (!j.is_object()) {
    throw ConfigError(ptr + ": expected an object");
  }
  auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigError(ptr + "/" + key + ": missing required field");
  }
  return *it;
}

double number_at(const ordered_json& j, const std::string& ptr) {
  if (!j.is_number()) {
    throw ConfigError(ptr + ": expected a number");
  }
  return j.get<double>();
}

Index positive_int_at(const ordered_json& j, const std::string& ptr) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 1) {
    throw ConfigError(ptr + ": expected a positive integer");
  }
  return static_cast<Index>(j.get<std::int64_t>());
}

std::uint64_t seed_at(const ordered_json& j, const std::string& ptr) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) {
    throw ConfigError(ptr + ": expected an integer seed");
  }
  if (j.is_number_integer() && !j.is_number_unsigned() &&
      j.get<std::int64_t>() < 0) {
    throw ConfigError(ptr + ": expected a non-negative seed");
  }
  return j.get<std::uint64_t>();
}

FactorSpec parse_factor(const ordered_json& j, const std::string& ptr) {
  const ordered_json& kind = require_field(j, ptr, "kind");
  if (!kind.is_string()) {
    throw ConfigError(ptr + "/kind: expected a string");
  }
  const std::string name = kind.get<std::string>();
  if (name == "ar1") {
    return FactorSpec::ar1(number_at(require_field(j, ptr, "rho"), ptr + "/rho"));
  }
  if (name == "cs") {
    return FactorSpec::cs(number_at(require_field(j, ptr, "rho"), ptr + "/rho"));
  }
  if (name == "wishart") {
    const Index df =
        positive_int_at(require_field(j, ptr, "df"), ptr + "/df");
    const std::uint64_t seed =
        seed_at(require_field(j, ptr, "seed"), ptr + "/seed");
    return FactorSpec::wishart(df, seed);
  }
  throw ConfigError(ptr + "/kind: unknown factor kind '" + name + "'");
}

WSpec parse_w(const ordered_json& j, const std::string& ptr) {
  const ordered_json& kind = require_field(j, ptr, "kind");
  if (!kind.is_string()) {
    throw ConfigError(ptr + "/kind: expected a string");
  }
  const std::string name = kind.get<std::string>();
  if (name == "identity") return WSpec::identity();
  if (name == "evenly_spaced") {
    WSpec spec = WSpec::evenly_spaced();
    if (j.contains("lo")) spec.lo = number_at(j.at("lo"), ptr + "/lo");
    if (j.contains("hi")) spec.hi = number_at(j.at("hi"), ptr + "/hi");
    return spec;
  }
  throw ConfigError(ptr + "/kind: unknown w kind '" + name + "'");
}

std::uint64_t default_seed_from_env() {
  const char* env = std::getenv("SEPCOR_SEED");
  if (env == nullptr || *env == '\0') return 0;
  std::uint64_t value = 0;
  const char* end = env + std::string(env).size();
  auto [p, ec] = std::from_chars(env, end, value);
  if (ec != std::errc() || p != end) {
    throw ConfigError("SEPCOR_SEED: not a valid unsigned integer: " +
                      std::string(env));
  }
  return value;
}

struct SimConfig {
  SolverConfig solver;
  TestSettings tests;
  std::vector<Scenario> scenarios;
};

SimConfig parse_sim_config(const ordered_json& root) {
  if (!root.is_object()) {
    throw ConfigError(": expected a top-level object");
  }
  SimConfig cfg;
  if (root.contains("solver")) {
    const ordered_json& s = root.at("solver");
    const std::string ptr = "/solver";
    if (!s.is_object()) throw ConfigError(ptr + ": expected an object");
    if (s.contains("tol")) {
      cfg.solver.epsilon = number_at(s.at("tol"), ptr + "/tol");
    }
    if (s.contains("max_iter")) {
      cfg.solver.max_iterations = static_cast<int>(
          positive_int_at(s.at("max_iter"), ptr + "/max_iter"));
    }
    if (s.contains("init")) {
      const ordered_json& init = s.at("init");
      if (!init.is_string()) {
        throw ConfigError(ptr + "/init: expected a string");
      }
      const std::string name = init.get<std::string>();
      if (name != "identity" && name != "sample" && name != "random") {
        throw ConfigError(ptr + "/init: unknown init '" + name + "'");
      }
      std::uint64_t seed = 0;
      if (s.contains("seed")) seed = seed_at(s.at("seed"), ptr + "/seed");
      cfg.solver.init = parse_init(name, seed);
    }
  }
  if (root.contains("tests")) {
    const ordered_json& t = root.at("tests");
    const std::string ptr = "/tests";
    if (!t.is_object()) throw ConfigError(ptr + ": expected an object");
    if (t.contains("naive")) {
      if (!t.at("naive").is_boolean()) {
        throw ConfigError(ptr + "/naive: expected a boolean");
      }
      cfg.tests.naive = t.at("naive").get<bool>();
    }
    if (t.contains("bootstrap")) {
      if (!t.at("bootstrap").is_boolean()) {
        throw ConfigError(ptr + "/bootstrap: expected a boolean");
      }
      cfg.tests.bootstrap = t.at("bootstrap").get<bool>();
    }
    if (t.contains("b")) {
      cfg.tests.b = static_cast<int>(positive_int_at(t.at("b"), ptr + "/b"));
    }
    if (t.contains("alpha")) {
      cfg.tests.alpha = number_at(t.at("alpha"), ptr + "/alpha");
      if (!(cfg.tests.alpha > 0.0) || !(cfg.tests.alpha < 1.0)) {
        throw ConfigError(ptr + "/alpha: expected alpha in (0, 1)");
      }
    }
  }
  const ordered_json& scenarios = require_field(root, "", "scenarios");
  if (!scenarios.is_array() || scenarios.empty()) {
    throw ConfigError("/scenarios: expected a non-empty array");
  }
  const std::uint64_t env_seed = default_seed_from_env();
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const std::string ptr = "/scenarios/" + std::to_string(i);
    const ordered_json& sj = scenarios.at(i);
    Scenario s;
    s.n = positive_int_at(require_field(sj, ptr, "n"), ptr + "/n");
    s.r = positive_int_at(require_field(sj, ptr, "r"), ptr + "/r");
    s.c = positive_int_at(require_field(sj, ptr, "c"), ptr + "/c");
    s.m = static_cast<int>(
        positive_int_at(require_field(sj, ptr, "m"), ptr + "/m"));
    s.u = parse_factor(require_field(sj, ptr, "u"), ptr + "/u");
    s.v = parse_factor(require_field(sj, ptr, "v"), ptr + "/v");
    s.w = sj.contains("w") ? parse_w(sj.at("w"), ptr + "/w")
                           : WSpec::identity();
    s.seed = sj.contains("seed") ? seed_at(sj.at("seed"), ptr + "/seed")
                                 : env_seed;
    if (s.n < 2) throw ConfigError(ptr + "/n: expected n >= 2");
    cfg.scenarios.push_back(s);
  }
  return cfg;
}

int run_simulate(const SimArgs& a) {
  std::ifstream in(a.config_path);
  if (!in) {
    throw std::runtime_error("cannot open config file: " + a.config_path);
  }
  ordered_json root;
  try {
    root = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const SimConfig cfg = parse_sim_config(root);

  std::string text = scenario_csv_header() + "\n";
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    log::info("simulate: scenario " + std::to_string(i + 1) + " of " +
              std::to_string(cfg.scenarios.size()));
    const ScenarioReport rep =
        run_scenario(cfg.scenarios[i], cfg.solver, cfg.tests, a.workers);
    text += scenario_csv_row(rep) + "\n";
  }
  write_text(a.out, text);
  return 0;
}

log::Level parse_log_level(const std::string& name) {
  if (name == "debug") return log::Level::kDebug;
  if (name == "info") return log::Level::kInfo;
  if (name == "warning") return log::Level::kWarning;
  if (name == "error") return log::Level::kError;
  return log::Level::kOff;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      std::string("sepcor: separable correlation covariance estimation.\n"
                  "Cell-to-column convention: ") +
      kCellHelp + "."};
  app.require_subcommand(1);

  bool quiet = false;
  std::string log_level = "warning";
  app.add_flag("--quiet", quiet, "Suppress warnings (errors only)");
  app.add_option("--log-level", log_level, "Diagnostic verbosity on stderr")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}));

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand(
      "fit", std::string("Fit one model to a CSV dataset. ") + kCellHelp);
  fit->add_option("--y", fit_args.y_path, "Response CSV, n rows by q columns")
      ->required();
  fit->add_option("--x", fit_args.x_path,
                  "Design CSV, n rows by p columns (default: intercept only)");
  fit->add_flag("--header", fit_args.header, "CSV files carry a header row");
  fit->add_option("--r", fit_args.r, "Row dimension of each data cell matrix")
      ->required();
  fit->add_option("--c", fit_args.c,
                  "Column dimension of each data cell matrix")
      ->required();
  fit->add_option("--model", fit_args.model, "Covariance model")
      ->check(CLI::IsMember({"sepcor", "sepcov", "unrestricted"}));
  fit->add_option("--tol", fit_args.tol, "Objective-change stopping tolerance")
      ->capture_default_str();
  fit->add_option("--max-iter", fit_args.max_iter, "Iteration cap")
      ->capture_default_str();
  fit->add_option("--init", fit_args.init, "Starting point strategy")
      ->check(CLI::IsMember({"identity", "sample", "random"}));
  fit->add_option("--seed", fit_args.seed, "Seed for --init random")
      ->envname("SEPCOR_SEED");
  fit->add_option("--out", fit_args.out, "JSON output path (default: stdout)");
  fit->add_flag("--transpose-cells", fit_args.transpose_cells,
                "Input columns are row-major cells (j-1)*c + k");
  fit->add_flag("--emit-sigma", fit_args.emit_sigma,
                "Include the assembled covariance in the JSON");
  fit->add_flag("--trace", fit_args.trace,
                "Include the per-sweep objective trace in the JSON");

  TestArgs test_args;
  CLI::App* test = app.add_subcommand(
      "test", "Parametric bootstrap separability test on a CSV dataset");
  test->add_option("--y", test_args.y_path, "Response CSV")->required();
  test->add_option("--x", test_args.x_path,
                   "Design CSV (default: intercept only)");
  test->add_flag("--header", test_args.header, "CSV files carry a header row");
  test->add_option("--r", test_args.r, "Row dimension of each cell")
      ->required();
  test->add_option("--c", test_args.c, "Column dimension of each cell")
      ->required();
  test->add_option("--hypothesis", test_args.hypothesis, "Null vs alternative")
      ->required()
      ->check(CLI::IsMember({"cov-vs-cor", "cor-vs-unrestricted"}));
  test->add_option("--b", test_args.b, "Bootstrap replicate count")
      ->capture_default_str();
  test->add_option("--alpha", test_args.alpha, "Test level")
      ->capture_default_str();
  test->add_option("--seed", test_args.seed, "Bootstrap seed")
      ->envname("SEPCOR_SEED");
  test->add_option("--workers", test_args.workers, "Worker thread count")
      ->capture_default_str();
  test->add_option("--out", test_args.out,
                   "JSON output path (default: stdout)");

  SimArgs sim_args;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Run Monte-Carlo scenarios from a JSON config");
  simulate->add_option("--config", sim_args.config_path, "Scenario JSON path")
      ->required();
  simulate->add_option("--out", sim_args.out,
                       "CSV output path (default: stdout)");
  simulate->add_option("--workers", sim_args.workers, "Worker thread count")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  log::threshold() =
      quiet ? log::Level::kError : parse_log_level(log_level);

  try {
    if (*fit) return run_fit(fit_args);
    if (*test) return run_test(test_args);
    if (*simulate) return run_simulate(sim_args);
  } catch (const std::exception& e) {
    std::cerr << "sepcor: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
