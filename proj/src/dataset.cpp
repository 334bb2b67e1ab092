#include "affcal/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "affcal/io.hpp"

namespace affcal::board {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

template <typename Int>
Int parse_int(std::string_view text) {
  const double v = io::parse_double(text);
  if (v != std::floor(v)) throw InputError("not an integer: '" + std::string(text) + "'");
  return static_cast<Int>(v);
}

constexpr std::string_view kHeader = "sensor_id,timestamp_ms,heater_step,raw_value,label";

}  // namespace

std::vector<RawRecording> parse_board_csv(std::string_view text, const IngestOptions& opts,
                                          IngestReport* report) {
  std::map<int, RawRecording> by_sensor;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool header_seen = false;
  std::size_t rows = 0;

  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kHeader)
        throw InputError("line " + std::to_string(line_no) + ": expected header '" +
                             std::string(kHeader) + "'",
                         line_no);
      header_seen = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 5) {
      std::ostringstream os;
      os << "line " << line_no << ": expected 5 fields, got " << cells.size();
      throw InputError(os.str(), line_no);
    }
    int sensor = 0;
    HeaterReading reading;
    try {
      sensor = parse_int<int>(cells[0]);
      reading.timestamp_ms = parse_int<std::int64_t>(cells[1]);
      reading.heater_step = parse_int<int>(cells[2]);
      reading.raw_value = io::parse_double(cells[3]);
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (sensor < 1 || sensor > opts.max_sensor_id) {
      std::ostringstream os;
      os << "line " << line_no << ": unknown sensor id " << sensor << " (expected 1.."
         << opts.max_sensor_id << ")";
      throw InputError(os.str(), line_no);
    }
    if (reading.heater_step < 1 || reading.heater_step > kStepsPerCycle) {
      std::ostringstream os;
      os << "line " << line_no << ": heater_step " << reading.heater_step << " outside 1.."
         << kStepsPerCycle;
      throw InputError(os.str(), line_no);
    }
    if (!std::isfinite(reading.raw_value))
      throw InputError("line " + std::to_string(line_no) + ": non-finite raw_value", line_no);

    auto& rec = by_sensor[sensor];
    rec.sensor_id = sensor;
    if (rec.label.empty()) rec.label = std::string(cells[4]);
    rec.readings.push_back(reading);
    ++rows;
  }
  if (!header_seen) throw InputError("board CSV is empty");
  if (rows == 0) throw InputError("board CSV has a header but no readings");

  std::vector<RawRecording> out;
  out.reserve(by_sensor.size());
  for (auto& [id, rec] : by_sensor) {
    std::stable_sort(rec.readings.begin(), rec.readings.end(),
                     [](const HeaterReading& a, const HeaterReading& b) {
                       return a.timestamp_ms < b.timestamp_ms;
                     });
    out.push_back(std::move(rec));
  }
  if (report) {
    report->rows = rows;
    report->rows_per_sensor.clear();
    for (const auto& r : out) report->rows_per_sensor.emplace_back(r.sensor_id, r.readings.size());
  }
  return out;
}

std::vector<RawRecording> ingest(const std::filesystem::path& path, const IngestOptions& opts,
                                 IngestReport* report) {
  return parse_board_csv(io::read_text(path), opts, report);
}

std::string board_csv(const std::vector<RawRecording>& recordings) {
  std::ostringstream os;
  os << kHeader << '\n';
  for (const auto& rec : recordings)
    for (const auto& r : rec.readings)
      os << rec.sensor_id << ',' << r.timestamp_ms << ',' << r.heater_step << ','
         << io::format_double(r.raw_value) << ',' << rec.label << '\n';
  return os.str();
}

SensorSamples aggregate(const RawRecording& rec) {
  std::vector<std::pair<double, double>> samples;
  std::size_t incomplete = 0;
  std::vector<const HeaterReading*> cycle;

  auto close_cycle = [&] {
    if (cycle.empty()) return;
    bool complete = cycle.size() == static_cast<std::size_t>(kStepsPerCycle);
    for (std::size_t i = 0; complete && i < cycle.size(); ++i)
      complete = cycle[i]->heater_step == static_cast<int>(i) + 1;
    if (complete) {
      double low = 0.0;
      double high = 0.0;
      for (const auto* r : cycle) (r->heater_step <= kLowTempSteps ? low : high) += r->raw_value;
      samples.emplace_back(low / kLowTempSteps, high / (kStepsPerCycle - kLowTempSteps));
    } else {
      ++incomplete;
    }
    cycle.clear();
  };

  for (const auto& r : rec.readings) {
    if (!cycle.empty() && r.heater_step <= cycle.back()->heater_step) close_cycle();
    cycle.push_back(&r);
  }
  close_cycle();

  if (samples.empty()) {
    std::ostringstream os;
    os << "sensor " << rec.sensor_id << ": no complete heater cycles (" << incomplete
       << " incomplete)";
    throw InputError(os.str());
  }
  Matrix<double> values(2, static_cast<Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    values(0, static_cast<Index>(i)) = samples[i].first;
    values(1, static_cast<Index>(i)) = samples[i].second;
  }
  return SensorSamples{rec.sensor_id, DataMatrix<double>(std::move(values), SampleCheck::ApplyOnly),
                       incomplete, std::nullopt};
}

DataMatrix<double> normalize_featurewise(const DataMatrix<double>& data,
                                         NormalizationBounds* bounds) {
  if (data.samples() < 2) throw ArgumentError("normalize_featurewise: needs at least 2 samples");
  const Vector<double> lo = data.values().rowwise().minCoeff();
  const Vector<double> hi = data.values().rowwise().maxCoeff();
  for (Index f = 0; f < data.dim(); ++f) {
    if (!(hi(f) > lo(f))) {
      std::ostringstream os;
      os << "normalize_featurewise: feature " << f << " is constant (" << lo(f) << ")";
      throw ArgumentError(os.str());
    }
  }
  Matrix<double> out = data.values();
  for (Index f = 0; f < data.dim(); ++f)
    out.row(f) = (out.row(f).array() - lo(f)) / (hi(f) - lo(f));
  if (bounds) *bounds = NormalizationBounds{lo, hi};
  return DataMatrix<double>(std::move(out), SampleCheck::ApplyOnly);
}

SensorSamples normalize_featurewise(const SensorSamples& s) {
  NormalizationBounds bounds;
  auto values = normalize_featurewise(s.samples, &bounds);
  return SensorSamples{s.sensor_id, std::move(values), s.incomplete_cycles, std::move(bounds)};
}

namespace {

void require_aligned(const SensorSamples& a, const SensorSamples& b) {
  if (a.samples.samples() != b.samples.samples() || a.samples.dim() != b.samples.dim()) {
    std::ostringstream os;
    os << "sensors " << a.sensor_id << " and " << b.sensor_id << " are not aligned: "
       << a.samples.samples() << " vs " << b.samples.samples() << " samples";
    throw AlignmentError(os.str());
  }
}

}  // namespace

double pairwise_error(const SensorSamples& source, const SensorSamples& target, Estimator method,
                      const PairwiseOptions& opts) {
  require_aligned(source, target);
  const Index n = source.samples.samples();
  if (!(opts.holdout_fraction >= 0.0 && opts.holdout_fraction < 1.0))
    throw ArgumentError("pairwise_error: holdout_fraction must be in [0, 1)");
  const auto held = static_cast<Index>(std::lround(opts.holdout_fraction * static_cast<double>(n)));
  const Index n_fit = n - held;

  const Matrix<double>& xs = source.samples.values();
  const Matrix<double>& ys = target.samples.values();
  const DataMatrix<double> x_fit(xs.leftCols(n_fit));
  const DataMatrix<double> y_fit(ys.leftCols(n_fit));
  const auto result = fit(method, x_fit, y_fit, opts.fit);

  const Index first = held > 0 ? n_fit : 0;
  const Index count = held > 0 ? held : n;
  const DataMatrix<double> x_eval(xs.middleCols(first, count), SampleCheck::ApplyOnly);
  const auto predicted = apply_transform(result.transform, x_eval);
  return (predicted.values() - ys.middleCols(first, count)).colwise().norm().mean();
}

double direct_distance(const SensorSamples& source, const SensorSamples& target) {
  require_aligned(source, target);
  return (source.samples.values() - target.samples.values()).colwise().norm().mean();
}

std::vector<PairwiseErrorTable> evaluate_board(const std::vector<SensorSamples>& sensors,
                                               const std::vector<Estimator>& methods,
                                               const BoardOptions& opts) {
  const auto k = static_cast<Index>(sensors.size());
  if (k < 2) throw ArgumentError("evaluate_board: needs at least 2 sensors");
  for (const auto& s : sensors) require_aligned(sensors.front(), s);

  std::vector<SensorSamples> normalized;
  normalized.reserve(sensors.size());
  for (const auto& s : sensors) normalized.push_back(normalize_featurewise(s));
  const auto& fit_inputs = opts.normalize_inputs ? normalized : sensors;

  const std::size_t n_tables = methods.size() + 1;
  std::vector<PairwiseErrorTable> tables(n_tables);
  for (std::size_t t = 0; t < n_tables; ++t) {
    tables[t].method = t < methods.size() ? std::string(estimator_name(methods[t]))
                                          : std::string(kBaselineName);
    tables[t].errors = Matrix<double>::Zero(k, k);
    for (const auto& s : sensors) tables[t].sensor_ids.push_back(s.sensor_id);
  }

  const auto kk = static_cast<std::size_t>(k * k);
  const std::size_t n_tasks = n_tables * kk;
  auto run_task = [&](std::size_t task) {
    const std::size_t t = task / kk;
    const auto j = static_cast<Index>((task % kk) / static_cast<std::size_t>(k));
    const auto c = static_cast<Index>(task % static_cast<std::size_t>(k));
    const auto& src = t < methods.size() ? fit_inputs : normalized;
    try {
      tables[t].errors(j, c) =
          t < methods.size()
              ? pairwise_error(src[static_cast<std::size_t>(j)], src[static_cast<std::size_t>(c)],
                               methods[t], opts.pairwise)
              : direct_distance(src[static_cast<std::size_t>(j)], src[static_cast<std::size_t>(c)]);
    } catch (const SingularMatrixError& e) {
      std::ostringstream os;
      os << tables[t].method << " sensor " << sensors[static_cast<std::size_t>(j)].sensor_id
         << " -> sensor " << sensors[static_cast<std::size_t>(c)].sensor_id << ": " << e.what();
      throw SingularMatrixError(os.str(), e.pivot_index());
    } catch (const NumericalError& e) {
      std::ostringstream os;
      os << tables[t].method << " sensor " << sensors[static_cast<std::size_t>(j)].sensor_id
         << " -> sensor " << sensors[static_cast<std::size_t>(c)].sensor_id << ": " << e.what();
      throw NumericalError(os.str());
    } catch (const ArgumentError& e) {
      std::ostringstream os;
      os << tables[t].method << " sensor " << sensors[static_cast<std::size_t>(j)].sensor_id
         << " -> sensor " << sensors[static_cast<std::size_t>(c)].sensor_id << ": " << e.what();
      throw ArgumentError(os.str());
    }
  };

  const unsigned threads = std::max(1u, opts.threads);
  if (threads == 1) {
    for (std::size_t task = 0; task < n_tasks; ++task) run_task(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t task = next++; task < n_tasks && !failed; task = next++) {
          try {
            run_task(task);
          } catch (...) {
            if (!failed.exchange(true)) failure = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (auto& table : tables) {
    table.per_source = table.errors.rowwise().mean();
    lo = std::min(lo, table.per_source.minCoeff());
    hi = std::max(hi, table.per_source.maxCoeff());
  }
  for (auto& table : tables) {
    table.min = lo;
    table.max = hi;
    table.normalized = hi > lo ? Vector<double>((table.per_source.array() - lo) / (hi - lo))
                               : Vector<double>(Vector<double>::Zero(k));
  }
  return tables;
}

std::string table_csv(const PairwiseErrorTable& table) {
  std::ostringstream os;
  os << "source";
  for (int id : table.sensor_ids) os << ",target_" << id;
  os << ",mean,normalized\n";
  for (Index j = 0; j < table.errors.rows(); ++j) {
    os << table.sensor_ids[static_cast<std::size_t>(j)];
    for (Index c = 0; c < table.errors.cols(); ++c) os << ',' << io::format_double(table.errors(j, c));
    os << ',' << io::format_double(table.per_source(j)) << ','
       << io::format_double(table.normalized(j)) << '\n';
  }
  os << "min," << io::format_double(table.min) << "\nmax," << io::format_double(table.max) << '\n';
  return os.str();
}

std::string summary_csv(const std::vector<PairwiseErrorTable>& tables) {
  std::ostringstream os;
  os << "source";
  for (const auto& t : tables) os << ',' << t.method;
  os << '\n';
  if (tables.empty()) return os.str();
  for (std::size_t j = 0; j < tables.front().sensor_ids.size(); ++j) {
    os << tables.front().sensor_ids[j];
    for (const auto& t : tables) os << ',' << io::format_double(t.normalized(static_cast<Index>(j)));
    os << '\n';
  }
  return os.str();
}

nlohmann::json tables_json(const std::vector<PairwiseErrorTable>& tables) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : tables) {
    nlohmann::json errors = nlohmann::json::array();
    for (Index j = 0; j < t.errors.rows(); ++j) {
      std::vector<double> row(t.errors.row(j).begin(), t.errors.row(j).end());
      errors.push_back(row);
    }
    out.push_back({{"method", t.method},
                   {"sensor_ids", t.sensor_ids},
                   {"errors", std::move(errors)},
                   {"per_source", std::vector<double>(t.per_source.begin(), t.per_source.end())},
                   {"normalized", std::vector<double>(t.normalized.begin(), t.normalized.end())},
                   {"min", t.min},
                   {"max", t.max}});
  }
  return out;
}

SyntheticBoard synthetic_board(const SyntheticBoardSpec& spec) {
  if (spec.sensors < 2 || spec.cycles < 6)
    throw ArgumentError("synthetic_board: needs >= 2 sensors and >= 6 cycles");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);

  const Index n = spec.cycles;
  Matrix<double> base(2, n);
  for (Index i = 0; i < n; ++i) {
    const double u = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    base(0, i) = 0.30 + 0.40 * u + 0.05 * std::sin(7.0 * u);
    base(1, i) = 0.60 - 0.20 * u + 0.08 * std::cos(5.0 * u);
  }

  SyntheticBoard board{{}, {}, DataMatrix<double>(base, SampleCheck::ApplyOnly)};
  for (int s = 0; s < spec.sensors; ++s) {
    Matrix<double> a(2, 2);
    a << 1.0 + 0.3 * uniform(rng), 0.4 * uniform(rng), 0.4 * uniform(rng), 1.0 + 0.3 * uniform(rng);
    Vector<double> b(2);
    b << 0.2 * uniform(rng), 0.2 * uniform(rng);
    AffineTransform<double> map(a, b);
    Matrix<double> features = apply_transform(map, board.base).values();
    for (Index i = 0; i < n; ++i)
      for (Index f = 0; f < 2; ++f) features(f, i) += spec.noise * normal(rng);

    RawRecording rec;
    rec.sensor_id = s + 1;
    rec.label = spec.label;
    for (Index i = 0; i < n; ++i) {
      for (int half = 0; half < 2; ++half) {
        double jitter[kLowTempSteps];
        double mean = 0.0;
        for (double& j : jitter) {
          j = spec.step_jitter * normal(rng);
          mean += j / kLowTempSteps;
        }
        for (int st = 0; st < kLowTempSteps; ++st) {
          const int step = half * kLowTempSteps + st + 1;
          HeaterReading r;
          r.timestamp_ms = static_cast<std::int64_t>(i) * kStepsPerCycle * 1260 + (step - 1) * 1260;
          r.heater_step = step;
          r.raw_value = features(half, i) + (jitter[st] - mean);
          rec.readings.push_back(r);
        }
      }
    }
    board.maps.push_back(std::move(map));
    board.recordings.push_back(std::move(rec));
  }
  return board;
}

std::vector<RawRecording> convert_bme_export(const nlohmann::json& doc) {
  const nlohmann::json* body = nullptr;
  try {
    body = &doc.at("rawDataBody");
  } catch (const nlohmann::json::exception&) {
    throw InputError("BME export: missing rawDataBody");
  }
  const auto& columns = body->value("dataColumns", nlohmann::json::array());
  const auto& block = body->value("dataBlock", nlohmann::json::array());

  auto column = [&columns](std::string_view name, bool required) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].value("name", std::string()) == name) return i;
    if (required) throw InputError("BME export: no column named '" + std::string(name) + "'");
    return std::nullopt;
  };
  const auto c_sensor = *column("Sensor Index", true);
  const auto c_time = *column("Time Since PowerOn", true);
  const auto c_step = *column("Heater Profile Step Index", true);
  const auto c_value = *column("Resistance Gassensor", true);
  const auto c_label = column("Label Tag", false);

  std::map<int, RawRecording> by_sensor;
  for (std::size_t row = 0; row < block.size(); ++row) {
    const auto& cells = block[row];
    try {
      const int sensor = cells.at(c_sensor).get<int>() + 1;
      HeaterReading r;
      r.timestamp_ms = cells.at(c_time).get<std::int64_t>();
      r.heater_step = cells.at(c_step).get<int>() + 1;
      r.raw_value = cells.at(c_value).get<double>();
      auto& rec = by_sensor[sensor];
      rec.sensor_id = sensor;
      if (rec.label.empty() && c_label) {
        const auto& l = cells.at(*c_label);
        rec.label = l.is_string() ? l.get<std::string>() : l.dump();
      }
      rec.readings.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("BME export: dataBlock row " + std::to_string(row) + ": " + e.what(), row + 1);
    }
  }
  std::vector<RawRecording> out;
  for (auto& [id, rec] : by_sensor) out.push_back(std::move(rec));
  return out;
}

}  // namespace affcal::board
