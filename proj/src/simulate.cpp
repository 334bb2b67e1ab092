#include "affcal/simulate.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "affcal/io.hpp"

namespace affcal::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Matrix<double> standard_normal(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> out(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) out(r, c) = normal(rng);
  return out;
}

struct Accumulated {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

Accumulated summarize(const std::vector<double>& values) {
  Accumulated acc;
  double sum = 0.0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    ++acc.count;
  }
  if (acc.count == 0) {
    acc.mean = std::numeric_limits<double>::quiet_NaN();
    acc.stddev = std::numeric_limits<double>::quiet_NaN();
    return acc;
  }
  acc.mean = sum / static_cast<double>(acc.count);
  if (acc.count > 1) {
    double ss = 0.0;
    for (double v : values)
      if (!std::isnan(v)) ss += (v - acc.mean) * (v - acc.mean);
    acc.stddev = std::sqrt(ss / static_cast<double>(acc.count - 1));
  }
  return acc;
}

}  // namespace

void McConfig::validate() const {
  if (runs < 1) throw ArgumentError("McConfig: runs must be >= 1");
  if (dim < 1) throw ArgumentError("McConfig: dim must be >= 1");
  if (samples < 2 * (dim + 1)) {
    std::ostringstream os;
    os << "McConfig: samples must be >= 2(q+1) = " << 2 * (dim + 1);
    throw ArgumentError(os.str());
  }
  if (transform.dim() != dim) throw ArgumentError("McConfig: transform dimension differs from dim");
  if (sigmas.empty()) throw ArgumentError("McConfig: no sigma values");
  for (double s : sigmas)
    if (!std::isfinite(s) || s < 0.0) throw ArgumentError("McConfig: sigma must be finite and >= 0");
  if (methods.empty()) throw ArgumentError("McConfig: no methods");
  if (!(box.lo < box.hi) || !std::isfinite(box.lo) || !std::isfinite(box.hi))
    throw ArgumentError("McConfig: origin box needs lo < hi");
  if (denoise_rank && (*denoise_rank < 1 || *denoise_rank > samples))
    throw ArgumentError("McConfig: denoise_rank outside [1, samples]");
}

const MethodStats& ErrorReport::at(double sigma, Estimator method) const {
  for (const auto& row : rows)
    if (row.sigma == sigma && row.method == method) return row;
  throw ArgumentError("ErrorReport: no row for sigma " + io::format_double(sigma) + " method " +
                      std::string(estimator_name(method)));
}

AffineTransform<double> reference_transform() {
  Matrix<double> a(2, 2);
  a << 0.3430, 0.3430, 0.1715, 0.8575;
  Vector<double> b(2);
  b << 52.0, -58.0;
  return AffineTransform<double>(std::move(a), std::move(b));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t trial, std::uint64_t channel) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ splitmix64(trial));
  return splitmix64(s ^ splitmix64(channel + 0x632be59bd9b4e019ULL));
}

DataMatrix<double> generate_origins(Index n, Index q, std::uint64_t seed, OriginBox box) {
  if (n < 1 || q < 1) throw ArgumentError("generate_origins: n and q must be positive");
  if (!(box.lo < box.hi)) throw ArgumentError("generate_origins: box needs lo < hi");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(box.lo, box.hi);
  Matrix<double> out(q, n);
  for (Index c = 0; c < n; ++c)
    for (Index r = 0; r < q; ++r) out(r, c) = uniform(rng);
  return DataMatrix<double>(std::move(out), SampleCheck::ApplyOnly);
}

DataMatrix<double> add_noise(const DataMatrix<double>& data, const NoiseSpec& spec) {
  if (!std::isfinite(spec.sigma) || spec.sigma < 0.0)
    throw ArgumentError("add_noise: sigma must be finite and >= 0");
  if (spec.sigma == 0.0) return data;
  Matrix<double> out = data.values() + spec.sigma * standard_normal(data.dim(), data.samples(), spec.seed);
  return DataMatrix<double>(std::move(out), SampleCheck::ApplyOnly);
}

double error_ex(const DataMatrix<double>& theta_est, const DataMatrix<double>& theta_true) {
  if (theta_est.dim() != theta_true.dim() || theta_est.samples() != theta_true.samples())
    throw ArgumentError("error_ex: shape mismatch");
  return (theta_est.values() - theta_true.values()).colwise().norm().mean();
}

double error_ey(const CalibrationResult<double>& result, const DataMatrix<double>& origins,
                const AffineTransform<double>& truth) {
  const auto& est = result.theta_e;
  if (est.dim() != origins.dim() || est.samples() != origins.samples() ||
      truth.dim() != origins.dim() || result.transform.dim() != origins.dim())
    throw ArgumentError("error_ey: shape mismatch");
  const auto predicted = apply_transform(result.transform, est);
  const auto target = apply_transform(truth, origins);
  return (predicted.values() - target.values()).colwise().norm().mean();
}

ErrorReport run_monte_carlo(const McConfig& cfg) {
  cfg.validate();
  const std::size_t n_sigma = cfg.sigmas.size();
  const std::size_t n_method = cfg.methods.size();
  const std::size_t n_cells = n_sigma * n_method;
  const auto runs = static_cast<std::size_t>(cfg.runs);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // cell-major storage: ex[cell * runs + trial]
  std::vector<double> ex(n_cells * runs, nan);
  std::vector<double> ey(n_cells * runs, nan);
  FitOptions opts;
  opts.denoise_rank = cfg.denoise_rank;

  auto run_trial = [&](std::size_t trial) {
    const auto t = static_cast<std::uint64_t>(trial);
    const auto origins = generate_origins(cfg.samples, cfg.dim, derive_seed(cfg.seed, t, 0), cfg.box);
    const auto clean_y = apply_transform(cfg.transform, origins);
    const Matrix<double> noise_x = standard_normal(cfg.dim, cfg.samples, derive_seed(cfg.seed, t, 1));
    const Matrix<double> noise_y = standard_normal(cfg.dim, cfg.samples, derive_seed(cfg.seed, t, 2));
    for (std::size_t si = 0; si < n_sigma; ++si) {
      const double sigma = cfg.sigmas[si];
      const DataMatrix<double> x(origins.values() + sigma * noise_x);
      const DataMatrix<double> y(clean_y.values() + sigma * noise_y);
      for (std::size_t mi = 0; mi < n_method; ++mi) {
        const std::size_t slot = (si * n_method + mi) * runs + trial;
        try {
          const auto result = fit(cfg.methods[mi], x, y, opts);
          ex[slot] = error_ex(result.theta_e, origins);
          ey[slot] = error_ey(result, origins, cfg.transform);
        } catch (const NumericalError&) {
          // left as NaN: counted as a skip
        }
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(runs)));
  if (threads == 1) {
    for (std::size_t t = 0; t < runs; ++t) run_trial(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < runs; t = next++) run_trial(t);
      });
    for (auto& th : pool) th.join();
  }

  ErrorReport report{cfg, {}};
  report.rows.reserve(n_cells);
  for (std::size_t si = 0; si < n_sigma; ++si) {
    for (std::size_t mi = 0; mi < n_method; ++mi) {
      const std::size_t cell = si * n_method + mi;
      std::vector<double> cx(ex.begin() + static_cast<std::ptrdiff_t>(cell * runs),
                             ex.begin() + static_cast<std::ptrdiff_t>((cell + 1) * runs));
      std::vector<double> cy(ey.begin() + static_cast<std::ptrdiff_t>(cell * runs),
                             ey.begin() + static_cast<std::ptrdiff_t>((cell + 1) * runs));
      const auto ax = summarize(cx);
      const auto ay = summarize(cy);
      MethodStats row;
      row.sigma = cfg.sigmas[si];
      row.method = cfg.methods[mi];
      row.mean_ex = ax.mean;
      row.mean_ey = ay.mean;
      row.std_ex = ax.stddev;
      row.std_ey = ay.stddev;
      row.runs = ay.count;
      row.skips = runs - ay.count;
      if (cfg.retain_runs) {
        row.run_ex = std::move(cx);
        row.run_ey = std::move(cy);
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string report_csv(const ErrorReport& report) {
  std::ostringstream os;
  os << "sigma,method,mean_ex,mean_ey,std_ex,std_ey,skips\n";
  for (const auto& r : report.rows) {
    os << io::format_double(r.sigma) << ',' << estimator_name(r.method) << ','
       << io::format_double(r.mean_ex) << ',' << io::format_double(r.mean_ey) << ','
       << io::format_double(r.std_ex) << ',' << io::format_double(r.std_ey) << ',' << r.skips
       << '\n';
  }
  return os.str();
}

nlohmann::json report_json(const ErrorReport& report) {
  const auto& cfg = report.config;
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : cfg.methods) methods.push_back(std::string(estimator_name(m)));
  nlohmann::json a = nlohmann::json::array();
  for (Index r = 0; r < cfg.transform.dim(); ++r)
    for (Index c = 0; c < cfg.transform.dim(); ++c) a.push_back(cfg.transform.a()(r, c));
  nlohmann::json b = nlohmann::json::array();
  for (Index r = 0; r < cfg.transform.dim(); ++r) b.push_back(cfg.transform.b()(r));

  nlohmann::json config{{"runs", cfg.runs},
                        {"samples", cfg.samples},
                        {"dim", cfg.dim},
                        {"a", std::move(a)},
                        {"b", std::move(b)},
                        {"sigmas", cfg.sigmas},
                        {"methods", std::move(methods)},
                        {"seed", cfg.seed},
                        {"origin_box", {cfg.box.lo, cfg.box.hi}}};
  if (cfg.denoise_rank) config["denoise_rank"] = *cfg.denoise_rank;

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"sigma", r.sigma},   {"method", std::string(estimator_name(r.method))},
                       {"mean_ex", r.mean_ex}, {"mean_ey", r.mean_ey},
                       {"std_ex", r.std_ex},   {"std_ey", r.std_ey},
                       {"runs", r.runs},       {"skips", r.skips}};
    if (cfg.retain_runs) {
      row["run_ex"] = r.run_ex;
      row["run_ey"] = r.run_ey;
    }
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"config", std::move(config)}, {"results", std::move(rows)}};
}

}  // namespace affcal::sim
