// pwls: command-line front end for fitting, paths, tuning, the M-estimator
// equivalence check, and simulation benchmarks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pwls/error.hpp"
#include "pwls/hetero.hpp"
#include "pwls/io.hpp"
#include "pwls/m_equiv.hpp"
#include "pwls/pipeline.hpp"
#include "pwls/simbench.hpp"
#include "pwls/solver.hpp"
#include "pwls/tuning.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pwls;

namespace {

enum class LogLevel { Quiet, Info, Debug };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("PWLS_LOG");
    const std::string v = env ? env : "info";
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    if (v != "info") std::cerr << "warning: PWLS_LOG='" << v << "' not recognized, using info\n";
    return LogLevel::Info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() != LogLevel::Quiet) std::cerr << "[pwls] " << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (log_level() == LogLevel::Debug) std::cerr << "[pwls:debug] " << msg << '\n';
}

// Exit statuses.
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMismatch = 3;

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json one_based(const std::vector<Index>& ids) {
  json out = json::array();
  for (Index i : ids) out.push_back(i + 1);
  return out;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(dir / name);
  if (!out) fail(ErrorCode::Io, "cannot write '" + (dir / name).string() + "'");
  return out;
}

void write_json(const fs::path& dir, const std::string& name, const json& doc) {
  auto out = open_out(dir, name);
  out << doc.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed for '" + (dir / name).string() + "'");
  log_info("wrote " + (dir / name).string());
}

struct Options {
  std::string input;
  std::string response;
  std::vector<std::string> predictors;
  bool no_intercept = false;
  bool tab = false;
  std::string method = "apwls";
  std::optional<double> lambda;
  std::string tuner = "bic";
  int pairs = 50;
  std::uint64_t seed = 1;
  std::string g = "abs";
  std::vector<std::string> z_cols;
  std::string out = ".";
  std::string format = "json";
  unsigned threads = 0;
  double c = 1.0;
  std::string config;
};

void add_data_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--input", o.input, "Delimited data file with a header row")->required();
  cmd->add_option("--response", o.response, "Response column name")->required();
  cmd->add_option("--predictors", o.predictors, "Predictor column names (default: all others)")
      ->delimiter(',');
  cmd->add_flag("--no-intercept", o.no_intercept, "Do not prepend a column of ones");
  cmd->add_flag("--tab", o.tab, "Input is tab-delimited");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
}

void add_method_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--method", o.method, "pwls | apwls | hpwls")
      ->check(CLI::IsMember({"pwls", "apwls", "hpwls"}))
      ->capture_default_str();
  cmd->add_option("--g", o.g, "Variance function for hpwls: abs | exp-abs | sqrt-abs | identity")
      ->check(CLI::IsMember({"abs", "exp-abs", "sqrt-abs", "identity"}))
      ->capture_default_str();
  cmd->add_option("--z-cols", o.z_cols,
                  "Predictor columns entering the variance function (default: last predictor)")
      ->delimiter(',');
}

LoadedData load(const Options& o) {
  CsvOptions csv;
  csv.response = o.response;
  csv.predictors = o.predictors;
  csv.intercept = !o.no_intercept;
  csv.delimiter = o.tab ? '\t' : ',';
  LoadedData loaded = load_csv(o.input, csv);
  log_info("loaded " + std::to_string(loaded.data.n()) + " rows, " +
           std::to_string(loaded.data.p()) + " columns from " + o.input);
  return loaded;
}

HpwlsOptions hpwls_options(const Options& o, const LoadedData& loaded) {
  HpwlsOptions opt;
  opt.g = parse_g_kind(o.g);
  opt.z.intercept = true;
  const Index first_real = o.no_intercept ? 0 : 1;
  if (o.z_cols.empty()) {
    require(loaded.data.p() > first_real, "hpwls: no predictor column for the variance function");
    opt.z.columns = {loaded.data.p() - 1};
    return opt;
  }
  for (const auto& name : o.z_cols) {
    Index found = -1;
    for (Index j = first_real; j < static_cast<Index>(loaded.columns.size()); ++j) {
      if (loaded.columns[static_cast<std::size_t>(j)] == name) found = j;
    }
    require(found >= 0, "--z-cols: '" + name + "' is not a selected predictor");
    opt.z.columns.push_back(found);
  }
  return opt;
}

PenaltyScales scales_for(const Options& o, const Dataset& data) {
  if (o.method == "pwls") return PenaltyScales::uniform(data.n());
  return adaptive_scales(initial_estimates(data).w0);
}

json fit_report(const Options& o, const LoadedData& loaded, const PwlsFit& f,
                const PenaltyScales& scales, const Vector& raw_residuals) {
  json doc;
  doc["method"] = o.method;
  doc["lambda"] = f.lambda;
  doc["columns"] = loaded.columns;
  doc["beta"] = to_json(f.beta);
  doc["weights"] = to_json(f.w);
  doc["flagged"] = one_based(f.flagged);
  doc["residuals"] = to_json(raw_residuals);
  doc["varpi"] = to_json(scales.varpi);
  doc["sigma2"] = f.sigma2;
  doc["objective"] = f.objective;
  doc["iterations"] = f.iterations;
  doc["converged"] = f.converged;
  return doc;
}

void write_fit(const Options& o, const json& doc) {
  const fs::path dir = o.out;
  if (o.format == "json") {
    write_json(dir, "fit.json", doc);
    return;
  }
  auto coef = open_out(dir, "coefficients.csv");
  coef << "term,estimate\n";
  for (std::size_t j = 0; j < doc["beta"].size(); ++j) {
    coef << doc["columns"][j].get<std::string>() << ',' << csv_num(doc["beta"][j].get<double>())
         << '\n';
  }
  auto obs = open_out(dir, "observations.csv");
  obs << "obs_id,residual,weight,flagged\n";
  for (std::size_t i = 0; i < doc["weights"].size(); ++i) {
    const double w = doc["weights"][i].get<double>();
    obs << i + 1 << ',' << csv_num(doc["residuals"][i].get<double>()) << ',' << csv_num(w) << ','
        << (w < 1.0 ? 1 : 0) << '\n';
  }
  json summary = doc;
  for (const char* key : {"beta", "weights", "residuals", "varpi", "g_values"}) summary.erase(key);
  write_json(dir, "fit_summary.json", summary);
  log_info("wrote " + (dir / "coefficients.csv").string() + ", " +
           (dir / "observations.csv").string());
}

int cmd_fit(const Options& o) {
  const LoadedData loaded = load(o);
  const Dataset& data = loaded.data;
  SolverConfig config;
  json doc;

  if (o.method == "hpwls") {
    const HpwlsOptions opt = hpwls_options(o, loaded);
    PwlsFit f;
    VarianceModel variance;
    Vector g;
    PenaltyScales scales;
    if (o.lambda) {
      scales = scales_for(o, data);
      HpwlsFit h = hpwls_fit(data, opt, scales, *o.lambda, config);
      f = h.fit;
      variance = h.variance;
      g = h.g_values;
    } else {
      HpwlsPath hp = hpwls_path(data, opt, config);
      f = hp.selected();
      variance = hp.variance;
      g = hp.g_values;
      scales = hp.run.scales;
      log_info("BIC selected lambda " + csv_num(f.lambda));
    }
    doc = fit_report(o, loaded, f, scales, data.y() - data.x() * f.beta);
    doc["scaled_residuals"] = to_json(f.residuals);
    doc["g"] = to_string(variance.kind);
    doc["theta"] = to_json(variance.theta);
    doc["g_values"] = to_json(g);
  } else if (o.lambda) {
    const PenaltyScales scales = scales_for(o, data);
    const PwlsFit f = fit(data, *o.lambda, scales, ols_solve(data), Vector::Ones(data.n()), config);
    doc = fit_report(o, loaded, f, scales, f.residuals);
  } else {
    const PenaltyScales scales = scales_for(o, data);
    const SolutionPath path = solution_path(data, scales, config);
    const BicReport report = select_bic(path, data);
    const PwlsFit& f = path.fits[static_cast<std::size_t>(report.argmin)];
    log_info("BIC selected lambda " + csv_num(f.lambda));
    doc = fit_report(o, loaded, f, scales, f.residuals);
  }
  doc["tuned"] = !o.lambda.has_value();
  write_fit(o, doc);
  log_info(std::to_string(doc["flagged"].size()) + " observations flagged");
  return 0;
}

void write_path(const fs::path& dir, const SolutionPath& path) {
  auto out = open_out(dir, "path.csv");
  out << "lambda,obs_id,weight\n";
  for (const auto& f : path.fits) {
    const std::string lam = csv_num(f.lambda);
    for (Index i = 0; i < f.w.size(); ++i) out << lam << ',' << i + 1 << ',' << csv_num(f.w(i)) << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed for path.csv");
  log_info("wrote " + (dir / "path.csv").string());
}

int cmd_path(const Options& o) {
  const LoadedData loaded = load(o);
  const Dataset& data = loaded.data;
  if (o.method == "hpwls") {
    const HpwlsPath hp = hpwls_path(data, hpwls_options(o, loaded));
    write_path(o.out, hp.run.path);
    return 0;
  }
  const SolutionPath path = solution_path(data, scales_for(o, data));
  log_debug("grid " + csv_num(path.lambdas(0)) + " .. " +
            csv_num(path.lambdas(path.lambdas.size() - 1)));
  write_path(o.out, path);
  return 0;
}

int cmd_tune(const Options& o) {
  const LoadedData loaded = load(o);
  const Dataset& data = loaded.data;
  const fs::path dir = o.out;

  // hpwls tunes step 3 on the variance-scaled data.
  std::optional<HpwlsPath> hp;
  const Dataset* target = &data;
  PenaltyScales scales;
  SolutionPath path;
  if (o.method == "hpwls") {
    hp = hpwls_path(data, hpwls_options(o, loaded));
    target = &hp->scaled;
    scales = hp->run.scales;
    path = hp->run.path;
  } else {
    scales = scales_for(o, data);
    path = solution_path(data, scales);
  }

  json doc;
  doc["method"] = o.method;
  doc["tuner"] = o.tuner;
  const PwlsFit* chosen = nullptr;
  if (o.tuner == "bic") {
    const BicReport report = select_bic(path, *target);
    chosen = &path.fits[static_cast<std::size_t>(report.argmin)];
    auto out = open_out(dir, "bic.csv");
    out << "lambda,BIC\n";
    for (Index k = 0; k < report.values.size(); ++k) {
      out << csv_num(path.lambdas(k)) << ',' << csv_num(report.values(k)) << '\n';
    }
    log_info("wrote " + (dir / "bic.csv").string());
  } else {
    require(o.pairs >= 1, "--B must be >= 1");
    const StabilityReport report =
        stability_curve(*target, path.lambdas, scales, o.pairs, o.seed, {}, o.threads);
    chosen = &path.fits[static_cast<std::size_t>(report.selected)];
    auto curve = open_out(dir, "stability.csv");
    curve << "lambda,S\n";
    for (Index k = 0; k < report.s_curve.size(); ++k) {
      curve << csv_num(report.lambdas(k)) << ',' << csv_num(report.s_curve(k)) << '\n';
    }
    auto probs = open_out(dir, "probs.csv");
    probs << "lambda,obs_id,prob\n";
    for (Index k = 0; k < report.lambdas.size(); ++k) {
      const std::string lam = csv_num(report.lambdas(k));
      for (Index i = 0; i < data.n(); ++i) {
        probs << lam << ',' << i + 1 << ',' << csv_num(report.outlier_prob(i, k)) << '\n';
      }
    }
    if (!curve || !probs) fail(ErrorCode::Io, "write failed for stability output");
    doc["B"] = o.pairs;
    doc["seed"] = o.seed;
    doc["S"] = report.s_curve(report.selected);
    doc["selected_probs"] = to_json(report.outlier_prob.col(report.selected));
    log_info("wrote " + (dir / "stability.csv").string() + ", " + (dir / "probs.csv").string());
  }
  doc["lambda"] = chosen->lambda;
  doc["flagged"] = one_based(chosen->flagged);
  doc["beta"] = to_json(chosen->beta);
  doc["columns"] = loaded.columns;
  if (o.format == "json") {
    write_json(dir, "tune.json", doc);
  } else {
    auto out = open_out(dir, "tune.csv");
    out << "lambda,obs_id,weight\n";
    for (Index i = 0; i < chosen->w.size(); ++i) {
      out << csv_num(chosen->lambda) << ',' << i + 1 << ',' << csv_num(chosen->w(i)) << '\n';
    }
  }
  log_info("selected lambda " + csv_num(chosen->lambda) + ", " +
           std::to_string(chosen->flagged.size()) + " flagged");
  return 0;
}

int cmd_check_theorem1(const Options& o) {
  const LoadedData loaded = load(o);
  require(o.lambda.has_value(), "check-theorem1 needs --lambda");
  MConfig config;
  config.lambda = *o.lambda;
  config.c = o.c;
  const MFit m = fit_concomitant_m(loaded.data, config);
  const ScaledPwlsFit pw = fit_pwls_with_scale(loaded.data, config);
  const double beta_gap = (m.beta - pw.fit.beta).cwiseAbs().maxCoeff();
  const double sigma_gap = std::abs(m.sigma - pw.sigma);
  const bool pass = beta_gap < 1e-6 && sigma_gap < 1e-6;

  json doc;
  doc["lambda"] = config.lambda;
  doc["c"] = config.c;
  doc["beta_m"] = to_json(m.beta);
  doc["beta_pwls"] = to_json(pw.fit.beta);
  doc["sigma_m"] = m.sigma;
  doc["sigma_pwls"] = pw.sigma;
  doc["beta_gap"] = beta_gap;
  doc["sigma_gap"] = sigma_gap;
  doc["flagged"] = one_based(m.flagged);
  doc["pass"] = pass;
  write_json(o.out, "theorem1.json", doc);
  std::cout << (pass ? "PASS" : "FAIL") << " beta_gap=" << beta_gap << " sigma_gap=" << sigma_gap
            << '\n';
  if (!pass) {
    std::cerr << "error[mismatch]: estimators disagree: beta_gap=" << beta_gap
              << " sigma_gap=" << sigma_gap << '\n';
    return kExitMismatch;
  }
  return 0;
}

struct BenchJob {
  sim::Method method = sim::Method::Pwls;
  sim::BenchConfig config;
  int reps = 100;
  std::uint64_t seed = 1;
};

BenchJob bench_job(const json& j, const Options& o) {
  auto get = [&](const char* key, auto fallback) {
    return j.contains(key) ? j.at(key).get<decltype(fallback)>() : fallback;
  };
  BenchJob job;
  job.method = sim::parse_method(get("method", std::string("pwls")));
  job.reps = get("reps", 100);
  job.seed = get("seed", static_cast<std::uint64_t>(o.seed));
  const std::string design = get("design", std::string("homo"));
  if (design == "homo") {
    sim::HomoSimConfig c;
    c.n = get("n", static_cast<long>(c.n));
    c.p = get("p", static_cast<long>(c.p));
    c.k = get("k", static_cast<long>(c.k));
    c.r = get("r", c.r);
    if (j.contains("L") && !j.at("L").is_null()) c.leverage = j.at("L").get<double>();
    c.validate();
    job.config = c;
  } else if (design == "hetero") {
    sim::HeteroSimConfig c;
    c.n = get("n", static_cast<long>(c.n));
    c.p = get("p", static_cast<long>(c.p));
    c.k = get("k", static_cast<long>(c.k));
    c.r = get("r", c.r);
    c.scenario = get("case", c.scenario);
    c.validate();
    job.config = c;
  } else {
    fail(ErrorCode::InvalidArgument, "bench: design must be 'homo' or 'hetero'");
  }
  return job;
}

int cmd_bench(const Options& o, const json& flags_job) {
  std::vector<json> jobs;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) fail(ErrorCode::Io, "cannot open config file '" + o.config + "'");
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::Parse, "config file '" + o.config + "': " + e.what());
    }
    if (doc.is_array()) {
      for (auto& item : doc) jobs.push_back(item);
    } else {
      jobs.push_back(doc);
    }
  } else {
    jobs.push_back(flags_job);
  }

  auto out = open_out(o.out, "bench.csv");
  out << sim::bench_header() << '\n';
  for (const auto& j : jobs) {
    BenchJob job;
    try {
      job = bench_job(j, o);
    } catch (const json::exception& e) {
      fail(ErrorCode::Parse, std::string("bench config: ") + e.what());
    }
    log_info("bench " + std::string(sim::to_string(job.method)) + " " +
             sim::scenario_label(job.config) + ", " + std::to_string(job.reps) + " reps");
    const sim::MetricsReport report =
        sim::run_benchmark(job.method, job.config, job.reps, job.seed, o.threads);
    const std::string row = sim::bench_row(job.method, job.config, report);
    out << row << '\n';
    std::cout << row << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed for bench.csv");
  log_info("wrote " + (fs::path(o.out) / "bench.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Outlier detection by penalized weighted least squares"};
  app.require_subcommand(1);
  Options o;

  auto* fit_cmd = app.add_subcommand("fit", "Fit at one lambda, or tune by BIC when --lambda is absent");
  add_data_options(fit_cmd, o);
  add_method_options(fit_cmd, o);
  fit_cmd->add_option("--lambda", o.lambda, "Penalty level");
  fit_cmd->add_option("--format", o.format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  auto* path_cmd = app.add_subcommand("path", "Weight solution path over the lambda grid (path.csv)");
  add_data_options(path_cmd, o);
  add_method_options(path_cmd, o);

  auto* tune_cmd = app.add_subcommand("tune", "Select lambda by BIC or stability selection");
  add_data_options(tune_cmd, o);
  add_method_options(tune_cmd, o);
  tune_cmd->add_option("--tuner", o.tuner, "bic | stability")
      ->check(CLI::IsMember({"bic", "stability"}))
      ->capture_default_str();
  tune_cmd->add_option("--B", o.pairs, "Number of random-weight pairs")->capture_default_str();
  tune_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  tune_cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  tune_cmd->add_option("--format", o.format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  auto* thm_cmd = app.add_subcommand(
      "check-theorem1", "Compare the concomitant-scale M-estimate with scaled PWLS");
  add_data_options(thm_cmd, o);
  thm_cmd->add_option("--lambda", o.lambda, "Penalty level")->required();
  thm_cmd->add_option("--c", o.c, "Concomitant scale constant")->capture_default_str();

  json flags_job = json::object();
  std::string design = "homo";
  std::string bench_method = "pwls";
  long n = 1000, p = 15, k = -1;
  double r = -1.0, leverage = 0.0;
  int scenario = 1, reps = 100;
  auto* bench_cmd = app.add_subcommand("bench", "Monte Carlo benchmark (bench.csv)");
  bench_cmd->add_option("--config", o.config, "JSON file with one job object or an array of jobs");
  bench_cmd->add_option("--design", design, "homo | hetero")
      ->check(CLI::IsMember({"homo", "hetero"}))
      ->capture_default_str();
  bench_cmd->add_option("--method", bench_method, "pwls | hpwls")
      ->check(CLI::IsMember({"pwls", "apwls", "hpwls"}))
      ->capture_default_str();
  bench_cmd->add_option("--n", n, "Observations")->capture_default_str();
  bench_cmd->add_option("--p", p, "Predictors")->capture_default_str();
  bench_cmd->add_option("--k", k, "Planted outliers (default 100 homo, 10 hetero)");
  bench_cmd->add_option("--r", r, "Shift size (default 5 homo, 20 hetero)");
  bench_cmd->add_option("--L", leverage, "Leverage value for the shifted rows (homo)");
  bench_cmd->add_option("--case", scenario, "1: g = |v|; 2: g = exp|v| fitted with sqrt|v|")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  bench_cmd->add_option("--reps", reps, "Repetitions")->capture_default_str();
  bench_cmd->add_option("--seed", o.seed, "Base seed; repetition i uses seed + i")
      ->capture_default_str();
  bench_cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  bench_cmd->add_option("--out", o.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(o);
    if (*path_cmd) return cmd_path(o);
    if (*tune_cmd) return cmd_tune(o);
    if (*thm_cmd) return cmd_check_theorem1(o);
    if (*bench_cmd) {
      flags_job = {{"design", design}, {"method", bench_method}, {"n", n},
                   {"p", p},           {"case", scenario},       {"reps", reps},
                   {"seed", o.seed}};
      if (k >= 0) flags_job["k"] = k;
      if (r >= 0.0) flags_job["r"] = r;
      if (leverage > 0.0) flags_job["L"] = leverage;
      return cmd_bench(o, flags_job);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << one_line(e.what()) << '\n';
    return e.code() == ErrorCode::InvalidArgument ? kExitUsage : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << one_line(e.what()) << '\n';
    return kExitError;
  }
  return kExitUsage;
}
