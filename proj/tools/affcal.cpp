// affcal: affine calibration between two measurement spaces.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical or model error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "affcal/calib.hpp"
#include "affcal/dataset.hpp"
#include "affcal/io.hpp"
#include "affcal/simulate.hpp"

namespace fs = std::filesystem;
using namespace affcal;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for failures that the owning subcommand maps to a numerical exit.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("AFFCAL_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("AFFCAL_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

std::vector<double> parse_sigma_grid(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string token;
  auto number = [&spec](std::string_view s) {
    try {
      return io::parse_double(s);
    } catch (const InputError&) {
      throw UsageError("invalid sigma grid '" + spec + "'");
    }
  };
  while (std::getline(ss, token, ',')) {
    const auto dots = token.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(token));
      continue;
    }
    const double lo = number(std::string_view(token).substr(0, dots));
    std::string_view rest = std::string_view(token).substr(dots + 2);
    double step = 1.0;
    if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
      step = number(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    const double hi = number(rest);
    if (!(step > 0.0) || hi < lo) throw UsageError("invalid sigma range '" + token + "'");
    for (long i = 0;; ++i) {
      const double v = lo + static_cast<double>(i) * step;
      if (v > hi + 1e-9 * std::max(1.0, std::abs(hi))) break;
      out.push_back(v);
    }
  }
  if (out.empty()) throw UsageError("empty sigma grid");
  for (double s : out)
    if (!std::isfinite(s) || s < 0.0) throw UsageError("sigma values must be finite and >= 0");
  return out;
}

std::vector<Estimator> parse_methods(const std::string& spec) {
  if (spec == "all") return {std::begin(kAllEstimators), std::end(kAllEstimators)};
  std::vector<Estimator> out;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto m = parse_estimator(token);
    if (!m) throw UsageError("unknown method '" + token + "' (gw, gw-denoised, ls, hybrid, all)");
    out.push_back(*m);
  }
  if (out.empty()) throw UsageError("no methods given");
  return out;
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << content;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  Index runs = 1000;
  Index samples = 1000;
  Index dim = 2;
  std::string sigmas = "1..15";
  std::string methods = "all";
  std::optional<std::uint64_t> seed;
  std::string transform;
  double box_lo = sim::OriginBox{}.lo;
  double box_hi = sim::OriginBox{}.hi;
  std::optional<Index> denoise_rank;
  unsigned threads = 1;
  std::string format = "csv";
  std::string output;
  bool keep_runs = false;
};

int cmd_simulate(const SimulateArgs& a) {
  sim::McConfig cfg;
  cfg.runs = a.runs;
  cfg.samples = a.samples;
  cfg.dim = a.dim;
  cfg.sigmas = parse_sigma_grid(a.sigmas);
  cfg.methods = parse_methods(a.methods);
  cfg.seed = a.seed ? *a.seed : default_seed();
  cfg.box = {a.box_lo, a.box_hi};
  cfg.denoise_rank = a.denoise_rank;
  cfg.threads = a.threads;
  cfg.retain_runs = a.keep_runs;
  if (!a.transform.empty()) {
    cfg.transform = io::read_transform(a.transform).transform;
  } else if (a.dim != 2) {
    throw UsageError("--transform is required when --dim is not 2");
  }
  try {
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  const auto report = sim::run_monte_carlo(cfg);
  write_output(a.output, a.format == "json" ? sim::report_json(report).dump(2) + "\n"
                                            : sim::report_csv(report));
  return 0;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string x;
  std::string y;
  std::string method = "gw";
  std::optional<bool> denoise;
  std::optional<Index> denoise_rank;
  std::string output;
  std::string theta_out;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const auto parsed = parse_estimator(a.method);
  if (!parsed) throw UsageError("unknown method '" + a.method + "' (gw, ls, hybrid)");
  Estimator method = *parsed;
  if (a.denoise) {
    if (method != Estimator::GleserWatson && method != Estimator::GleserWatsonDenoised)
      throw UsageError("--denoise/--no-denoise only apply to --method gw");
    method = *a.denoise ? Estimator::GleserWatsonDenoised : Estimator::GleserWatson;
  } else if (method == Estimator::GleserWatson) {
    method = Estimator::GleserWatsonDenoised;
  }
  if (a.denoise_rank && method != Estimator::Hybrid)
    throw UsageError("--denoise-rank only applies to --method hybrid");

  const auto xt = io::read_data_csv(a.x);
  const auto yt = io::read_data_csv(a.y);
  if (xt.values.rows() != yt.values.rows() || xt.values.cols() != yt.values.cols()) {
    std::ostringstream os;
    os << "misaligned inputs: " << a.x << " has " << xt.values.cols() << " samples x "
       << xt.values.rows() << " features, " << a.y << " has " << yt.values.cols() << " x "
       << yt.values.rows();
    throw UsageError(os.str());
  }
  const DataMatrix<double> x(xt.values);
  const DataMatrix<double> y(yt.values);
  FitOptions opts;
  opts.denoise_rank = a.denoise_rank;
  const auto result = fit(method, x, y, opts);

  std::cerr << "method: " << estimator_name(result.method) << "\n"
            << "samples: " << x.samples() << ", features: " << x.dim() << "\n"
            << "augmentation-row deviation: " << io::format_double(result.diagnostics.last_row_deviation)
            << "\n"
            << "gram condition estimate: " << io::format_double(result.diagnostics.gram_condition)
            << "\n";
  for (const auto& w : result.diagnostics.warnings) std::cerr << "warning: " << w << "\n";

  const io::TransformRecord rec{result.transform, std::string(estimator_name(result.method)),
                                result.denoise_rank};
  write_output(a.output, io::transform_to_json(rec).dump(2) + "\n");
  if (!a.theta_out.empty()) {
    std::ofstream out(a.theta_out, std::ios::binary);
    if (!out) throw UsageError("cannot write " + a.theta_out);
    io::write_data_csv(out, xt.header, result.theta_e.values());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string transform;
  std::string input;
  std::string output;
};

int cmd_apply(const ApplyArgs& a) {
  const auto rec = io::read_transform(a.transform);
  const auto table = io::read_data_csv(a.input);
  if (table.values.rows() != rec.transform.dim()) {
    std::ostringstream os;
    os << "transform has q = " << rec.transform.dim() << " but " << a.input << " has "
       << table.values.rows() << " feature columns";
    throw UsageError(os.str());
  }
  const auto out = apply_transform(rec.transform, DataMatrix<double>(table.values, SampleCheck::ApplyOnly));
  std::ostringstream os;
  io::write_data_csv(os, table.header, out.values());
  write_output(a.output, os.str());
  return 0;
}

// ---------------------------------------------------------------------------

struct BoardArgs {
  std::string input;
  std::string methods = "all";
  std::string output_dir = ".";
  std::string format = "csv";
  int max_sensor_id = 8;
  bool raw = false;
  double holdout = 0.0;
  std::optional<Index> denoise_rank;
  unsigned threads = 1;
};

int cmd_evaluate_board(const BoardArgs& a) {
  const auto methods = parse_methods(a.methods);
  if (!(a.holdout >= 0.0 && a.holdout < 1.0)) throw UsageError("--holdout must be in [0, 1)");
  fs::create_directories(a.output_dir);

  std::vector<board::PairwiseErrorTable> tables;
  board::IngestReport ingest_report;
  std::vector<board::SensorSamples> sensors;
  try {
    const auto recordings = board::ingest(a.input, {a.max_sensor_id}, &ingest_report);
    for (const auto& rec : recordings) sensors.push_back(board::aggregate(rec));
    board::BoardOptions opts;
    opts.normalize_inputs = !a.raw;
    opts.pairwise.holdout_fraction = a.holdout;
    opts.pairwise.fit.denoise_rank = a.denoise_rank;
    opts.threads = a.threads;
    tables = board::evaluate_board(sensors, methods, opts);
  } catch (const InputError& e) {
    throw ModelError(e.what());
  } catch (const AlignmentError& e) {
    throw ModelError(e.what());
  } catch (const ArgumentError& e) {
    throw ModelError(e.what());
  }

  std::cerr << "rows: " << ingest_report.rows << "\n";
  for (const auto& s : sensors)
    std::cerr << "sensor " << s.sensor_id << ": " << s.samples.samples() << " samples, "
              << s.incomplete_cycles << " incomplete cycles\n";

  const fs::path dir(a.output_dir);
  if (a.format == "json") {
    write_output((dir / "board.json").string(), board::tables_json(tables).dump(2) + "\n");
  } else {
    for (const auto& t : tables) write_output((dir / ("table_" + t.method + ".csv")).string(), board::table_csv(t));
    write_output((dir / "summary.csv").string(), board::summary_csv(tables));
  }
  std::cout << board::summary_csv(tables);
  return 0;
}

// ---------------------------------------------------------------------------

struct NormalizeArgs {
  std::string input;
  std::string board;
  std::string output;
  std::string bounds;
  int max_sensor_id = 8;
};

nlohmann::json bounds_json(const board::NormalizationBounds& b) {
  return {{"min", std::vector<double>(b.min.begin(), b.min.end())},
          {"max", std::vector<double>(b.max.begin(), b.max.end())}};
}

int cmd_normalize(const NormalizeArgs& a) {
  if (!a.board.empty()) {
    std::vector<board::SensorSamples> sensors;
    try {
      for (const auto& rec : board::ingest(a.board, {a.max_sensor_id}))
        sensors.push_back(board::normalize_featurewise(board::aggregate(rec)));
    } catch (const InputError& e) {
      throw ModelError(e.what());
    }
    std::ostringstream os;
    os << "sensor_id,sample,feature_200c,feature_400c\n";
    nlohmann::json bounds = nlohmann::json::object();
    for (const auto& s : sensors) {
      for (Index i = 0; i < s.samples.samples(); ++i)
        os << s.sensor_id << ',' << i << ',' << io::format_double(s.samples.values()(0, i)) << ','
           << io::format_double(s.samples.values()(1, i)) << '\n';
      bounds[std::to_string(s.sensor_id)] = bounds_json(*s.bounds);
    }
    write_output(a.output, os.str());
    if (!a.bounds.empty()) write_output(a.bounds, bounds.dump(2) + "\n");
    return 0;
  }
  const auto table = io::read_data_csv(a.input);
  board::NormalizationBounds b;
  const auto out = board::normalize_featurewise(DataMatrix<double>(table.values, SampleCheck::ApplyOnly), &b);
  std::ostringstream os;
  io::write_data_csv(os, table.header, out.values());
  write_output(a.output, os.str());
  if (!a.bounds.empty()) write_output(a.bounds, bounds_json(b).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affine calibration between two measurement spaces"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo comparison of the estimators");
  sim_cmd->add_option("--runs", sim_args.runs, "Trials per sigma")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--samples", sim_args.samples, "Samples per trial")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--dim", sim_args.dim, "Feature dimension q")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--sigmas", sim_args.sigmas, "Noise grid, e.g. 1..15, 1,5,15 or 0..2:0.5");
  sim_cmd->add_option("--methods", sim_args.methods, "all or a list of gw,gw-denoised,ls,hybrid");
  sim_cmd->add_option("--seed", sim_args.seed, "Master seed (default $AFFCAL_SEED or 0)");
  sim_cmd->add_option("--transform", sim_args.transform, "True transform JSON (default: reference A, b)")
      ->check(CLI::ExistingFile);
  sim_cmd->add_option("--box-lo", sim_args.box_lo, "Lower corner of the origin box");
  sim_cmd->add_option("--box-hi", sim_args.box_hi, "Upper corner of the origin box");
  sim_cmd->add_option("--denoise-rank", sim_args.denoise_rank, "Eigenvectors kept by hybrid");
  sim_cmd->add_option("--threads", sim_args.threads, "Worker threads");
  sim_cmd->add_option("--format", sim_args.format)->check(CLI::IsMember({"csv", "json"}));
  sim_cmd->add_option("-o,--output", sim_args.output, "Output file (default stdout)");
  sim_cmd->add_flag("--keep-runs", sim_args.keep_runs, "Include per-run errors in JSON output");

  CalibrateArgs cal_args;
  auto* cal_cmd = app.add_subcommand("calibrate", "Estimate the affine map from X to Y");
  cal_cmd->add_option("--x", cal_args.x, "Source data CSV")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--y", cal_args.y, "Target data CSV")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--method", cal_args.method, "gw, ls or hybrid");
  cal_cmd->add_flag("--denoise,!--no-denoise", cal_args.denoise, "Reset the augmentation row (gw)");
  cal_cmd->add_option("--denoise-rank", cal_args.denoise_rank, "Eigenvectors kept (hybrid)");
  cal_cmd->add_option("-o,--output", cal_args.output, "Transform JSON (default stdout)");
  cal_cmd->add_option("--theta-out", cal_args.theta_out, "Write estimated origins as CSV");

  ApplyArgs apply_args;
  auto* apply_cmd = app.add_subcommand("apply", "Apply a transform to a data CSV");
  apply_cmd->add_option("--transform", apply_args.transform)->required()->check(CLI::ExistingFile);
  apply_cmd->add_option("--input", apply_args.input)->required()->check(CLI::ExistingFile);
  apply_cmd->add_option("-o,--output", apply_args.output, "Output CSV (default stdout)");

  BoardArgs board_args;
  auto* board_cmd = app.add_subcommand("evaluate-board", "All-pairs transfer errors for a sensor board");
  board_cmd->add_option("--input", board_args.input, "Board CSV (.csv or .csv.gz)")
      ->required()
      ->check(CLI::ExistingFile);
  board_cmd->add_option("--methods", board_args.methods);
  board_cmd->add_option("--output-dir", board_args.output_dir);
  board_cmd->add_option("--format", board_args.format)->check(CLI::IsMember({"csv", "json"}));
  board_cmd->add_option("--max-sensor-id", board_args.max_sensor_id)->check(CLI::PositiveNumber);
  board_cmd->add_flag("--raw", board_args.raw, "Fit on raw instead of normalized samples");
  board_cmd->add_option("--holdout", board_args.holdout, "Fraction of samples held out of the fit");
  board_cmd->add_option("--denoise-rank", board_args.denoise_rank);
  board_cmd->add_option("--threads", board_args.threads);

  NormalizeArgs norm_args;
  auto* norm_cmd = app.add_subcommand("normalize", "Feature-wise min-max normalization");
  auto* norm_in = norm_cmd->add_option("--input", norm_args.input, "Data CSV")->check(CLI::ExistingFile);
  auto* norm_board = norm_cmd->add_option("--board", norm_args.board, "Board CSV")->check(CLI::ExistingFile);
  norm_in->excludes(norm_board);
  norm_cmd->add_option("-o,--output", norm_args.output);
  norm_cmd->add_option("--bounds", norm_args.bounds, "Write the min/max bounds as JSON");
  norm_cmd->add_option("--max-sensor-id", norm_args.max_sensor_id)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sim_cmd) return cmd_simulate(sim_args);
    if (*cal_cmd) return cmd_calibrate(cal_args);
    if (*apply_cmd) return cmd_apply(apply_args);
    if (*board_cmd) return cmd_evaluate_board(board_args);
    if (*norm_cmd) {
      if (norm_args.input.empty() == norm_args.board.empty())
        throw UsageError("normalize needs exactly one of --input or --board");
      return cmd_normalize(norm_args);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
