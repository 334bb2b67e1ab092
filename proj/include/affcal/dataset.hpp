#pragma once

// Multi-sensor board pipeline: raw heater-cycle readings -> two-feature
// samples per sensor -> all-pairs calibration transfer errors.
//
// Board CSV layout, one row per heater step reading:
//
//     sensor_id,timestamp_ms,heater_step,raw_value,label
//
// heater_step runs 1..10 per cycle; steps 1-5 are the 200 C plateau and
// steps 6-10 the 400 C plateau. A sample is (mean of the 200 C values,
// mean of the 400 C values) of one complete cycle.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "affcal/calib.hpp"

namespace affcal::board {

inline constexpr int kStepsPerCycle = 10;
inline constexpr int kLowTempSteps = 5;  // steps 1..5 at 200 C

struct HeaterReading {
  std::int64_t timestamp_ms = 0;
  int heater_step = 0;  // 1..10
  double raw_value = 0.0;
};

struct RawRecording {
  int sensor_id = 0;
  std::string label;
  std::vector<HeaterReading> readings;
};

struct IngestOptions {
  int max_sensor_id = 8;
};

struct IngestReport {
  std::size_t rows = 0;
  std::vector<std::pair<int, std::size_t>> rows_per_sensor;
};

/// Parses board CSV text. Errors name the offending line.
std::vector<RawRecording> parse_board_csv(std::string_view text, const IngestOptions& opts = {},
                                          IngestReport* report = nullptr);
/// Reads a board CSV file; .gz files are inflated first.
std::vector<RawRecording> ingest(const std::filesystem::path& path, const IngestOptions& opts = {},
                                 IngestReport* report = nullptr);

std::string board_csv(const std::vector<RawRecording>& recordings);

/// Per-feature min/max used by min-max normalization.
struct NormalizationBounds {
  Vector<double> min;
  Vector<double> max;
};

struct SensorSamples {
  int sensor_id = 0;
  DataMatrix<double> samples;  // 2 x n
  std::size_t incomplete_cycles = 0;
  std::optional<NormalizationBounds> bounds;  // set once normalized
};

SensorSamples aggregate(const RawRecording& rec);

/// Maps each feature to [0, 1] by (v - min) / (max - min) over its own samples.
DataMatrix<double> normalize_featurewise(const DataMatrix<double>& data,
                                         NormalizationBounds* bounds = nullptr);
SensorSamples normalize_featurewise(const SensorSamples& s);

struct PairwiseOptions {
  // Fraction of samples held out from the fit and used for the error; 0 fits
  // and evaluates on all samples.
  double holdout_fraction = 0.0;
  FitOptions fit;
};

/// mean_i ||(A~ x_j(i) + b~) - y_k(i)|| with (A~, b~) fitted from source to target.
double pairwise_error(const SensorSamples& source, const SensorSamples& target, Estimator method,
                      const PairwiseOptions& opts = {});

/// mean_i ||x_j(i) - y_k(i)||, no transform.
double direct_distance(const SensorSamples& source, const SensorSamples& target);

struct PairwiseErrorTable {
  std::string method;            // estimator name or "feature-wise-normalized"
  std::vector<int> sensor_ids;   // row/column order
  Matrix<double> errors;         // K x K, errors(j, k) for source j -> target k
  Vector<double> per_source;     // mean over targets, self-pairs included
  Vector<double> normalized;     // (per_source - min) / (max - min)
  double min = 0.0;              // shared across all tables of one evaluation
  double max = 0.0;

  double denormalize(double v) const { return min + v * (max - min); }
};

inline constexpr std::string_view kBaselineName = "feature-wise-normalized";

struct BoardOptions {
  // Fit on feature-wise normalized samples so fitted and baseline errors share units.
  bool normalize_inputs = true;
  PairwiseOptions pairwise;
  unsigned threads = 1;
};

/// One table per method, then the feature-wise-normalized baseline table.
/// All per-source means are rescaled jointly: the global min maps to 0 and
/// the global max to 1.
std::vector<PairwiseErrorTable> evaluate_board(const std::vector<SensorSamples>& sensors,
                                               const std::vector<Estimator>& methods,
                                               const BoardOptions& opts = {});

/// Rows: source,target_<id>...,mean,normalized; then "min,<v>" and "max,<v>".
std::string table_csv(const PairwiseErrorTable& table);
/// source,<method>...: normalized per-source values of every table (plot-ready).
std::string summary_csv(const std::vector<PairwiseErrorTable>& tables);
nlohmann::json tables_json(const std::vector<PairwiseErrorTable>& tables);

/// Synthetic board: one smooth base signal mapped through a known affine map
/// per sensor, plus Gaussian noise, expanded back into heater-step readings.
struct SyntheticBoardSpec {
  int sensors = 8;
  int cycles = 90;
  double noise = 0.002;   // std of the per-feature noise
  double step_jitter = 0.001;  // spread of the 5 readings around their mean
  std::uint64_t seed = 1;
  std::string label = "synthetic";
};

struct SyntheticBoard {
  std::vector<RawRecording> recordings;
  std::vector<AffineTransform<double>> maps;  // base signal -> sensor k
  DataMatrix<double> base;
};

SyntheticBoard synthetic_board(const SyntheticBoardSpec& spec = {});

/// Converts a BME AI-Studio style raw-data export (JSON with
/// rawDataBody.dataColumns / rawDataBody.dataBlock) into recordings.
/// Sensor and heater-step indices in the export are 0-based.
std::vector<RawRecording> convert_bme_export(const nlohmann::json& doc);

}  // namespace affcal::board
