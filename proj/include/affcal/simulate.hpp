#pragma once

// Monte Carlo harness for the estimators.
//
// Each trial draws origins Theta, forms X = Theta + M and
// Y = A Theta + b + N with i.i.d. N(0, sigma^2) entries in M and N, fits every
// requested estimator, and records
//
//     e_x = mean_i ||theta~_i - theta_i||
//     e_y = mean_i ||(A~ theta~_i + b~) - (A theta_i + b)||
//
// Random streams: every stream is a std::mt19937_64 seeded with
// derive_seed(master, trial, channel), where channel 0 draws origins, 1 the
// noise on X and 2 the noise on Y. Trials are therefore reproducible in
// isolation, and every sigma and method in a trial sees the same draws
// (noise is sigma times one shared standard-normal field).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affcal/calib.hpp"

namespace affcal::sim {

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Origins are drawn uniformly from [lo, hi]^q.
struct OriginBox {
  double lo = 40.0;
  double hi = 140.0;
};

/// The fixed transform of the reference experiment:
/// A = [0.3430 0.3430; 0.1715 0.8575], b = (52, -58).
AffineTransform<double> reference_transform();

struct McConfig {
  Index runs = 1000;
  Index samples = 1000;
  Index dim = 2;
  AffineTransform<double> transform = reference_transform();
  std::vector<double> sigmas;
  std::vector<Estimator> methods;
  std::uint64_t seed = 0;
  OriginBox box;
  std::optional<Index> denoise_rank;  // hybrid only
  unsigned threads = 1;
  bool retain_runs = false;

  void validate() const;
};

struct MethodStats {
  double sigma = 0.0;
  Estimator method = Estimator::LeastSquares;
  double mean_ex = 0.0;
  double mean_ey = 0.0;
  double std_ex = 0.0;
  double std_ey = 0.0;
  std::size_t runs = 0;   // trials that contributed
  std::size_t skips = 0;  // trials aborted by a numerical failure
  std::vector<double> run_ex;  // filled when retain_runs; NaN marks a skipped trial
  std::vector<double> run_ey;
};

struct ErrorReport {
  McConfig config;
  std::vector<MethodStats> rows;  // sigma-major, methods in config order

  const MethodStats& at(double sigma, Estimator method) const;
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t trial, std::uint64_t channel);

DataMatrix<double> generate_origins(Index n, Index q, std::uint64_t seed, OriginBox box = {});
DataMatrix<double> add_noise(const DataMatrix<double>& data, const NoiseSpec& spec);

double error_ex(const DataMatrix<double>& theta_est, const DataMatrix<double>& theta_true);
double error_ey(const CalibrationResult<double>& result, const DataMatrix<double>& origins,
                const AffineTransform<double>& truth);

ErrorReport run_monte_carlo(const McConfig& cfg);

/// Columns: sigma,method,mean_ex,mean_ey,std_ex,std_ey,skips
std::string report_csv(const ErrorReport& report);
nlohmann::json report_json(const ErrorReport& report);

}  // namespace affcal::sim
