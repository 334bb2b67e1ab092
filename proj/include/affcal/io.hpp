#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "affcal/calib.hpp"

namespace affcal::io {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Whole file as text. Files ending in .gz are inflated.
std::string read_text(const std::filesystem::path& path);

/// A sample table read from CSV: header row, then one sample per row with
/// one column per feature. Stored transposed (features x samples).
struct DataTable {
  std::vector<std::string> header;
  Matrix<double> values;  // q x n
};

DataTable parse_data_csv(std::string_view text);
DataTable read_data_csv(const std::filesystem::path& path);
void write_data_csv(std::ostream& out, const std::vector<std::string>& header,
                    const Matrix<double>& values);

/// Transform document: {"q", "a" (row-major), "b", "method", "denoise_rank"}.
struct TransformRecord {
  AffineTransform<double> transform;
  std::string method;
  Index denoise_rank = 0;
};

nlohmann::json transform_to_json(const TransformRecord& rec);
TransformRecord transform_from_json(const nlohmann::json& doc);
TransformRecord read_transform(const std::filesystem::path& path);

}  // namespace affcal::io
