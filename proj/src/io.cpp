#include "affcal/io.hpp"

#include <zlib.h>

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace affcal::io {

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw ArgumentError("format_double: conversion failed");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw InputError("not a number: '" + std::string(text) + "'");
  return v;
}

namespace {

bool has_gz_extension(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::string read_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw InputError("cannot open " + path.string());
  std::string out;
  std::array<char, 1 << 15> buf{};
  int got = 0;
  while ((got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
    out.append(buf.data(), static_cast<std::size_t>(got));
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw InputError("corrupt gzip stream in " + path.string());
  return out;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("no such file: " + path.string());
  if (has_gz_extension(path)) return read_gzip(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DataTable parse_data_csv(std::string_view text) {
  DataTable table;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (table.header.empty()) {
      for (auto c : cells) table.header.emplace_back(trim(c));
      continue;
    }
    if (cells.size() != table.header.size()) {
      std::ostringstream os;
      os << "line " << line_no << ": expected " << table.header.size() << " columns, got "
         << cells.size();
      throw InputError(os.str(), line_no);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) {
      try {
        row.push_back(parse_double(c));
      } catch (const InputError& e) {
        throw InputError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
      }
    }
    rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw InputError("data CSV is empty");
  if (rows.empty()) throw InputError("data CSV has a header but no samples");

  const auto q = static_cast<Index>(table.header.size());
  table.values.resize(q, static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index f = 0; f < q; ++f)
      table.values(f, static_cast<Index>(i)) = rows[i][static_cast<std::size_t>(f)];
  return table;
}

DataTable read_data_csv(const std::filesystem::path& path) { return parse_data_csv(read_text(path)); }

void write_data_csv(std::ostream& out, const std::vector<std::string>& header,
                    const Matrix<double>& values) {
  if (static_cast<Index>(header.size()) != values.rows())
    throw ArgumentError("write_data_csv: header width does not match feature count");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Index s = 0; s < values.cols(); ++s) {
    for (Index f = 0; f < values.rows(); ++f) out << (f ? "," : "") << format_double(values(f, s));
    out << '\n';
  }
}

nlohmann::json transform_to_json(const TransformRecord& rec) {
  const auto& t = rec.transform;
  nlohmann::json a = nlohmann::json::array();
  for (Index r = 0; r < t.dim(); ++r)
    for (Index c = 0; c < t.dim(); ++c) a.push_back(t.a()(r, c));
  nlohmann::json b = nlohmann::json::array();
  for (Index r = 0; r < t.dim(); ++r) b.push_back(t.b()(r));
  return nlohmann::json{{"q", t.dim()},
                        {"a", std::move(a)},
                        {"b", std::move(b)},
                        {"method", rec.method},
                        {"denoise_rank", rec.denoise_rank}};
}

TransformRecord transform_from_json(const nlohmann::json& doc) {
  try {
    const Index q = doc.at("q").get<Index>();
    const auto& a = doc.at("a");
    const auto& b = doc.at("b");
    if (q < 1 || !a.is_array() || !b.is_array() || static_cast<Index>(a.size()) != q * q ||
        static_cast<Index>(b.size()) != q)
      throw InputError("transform JSON: 'a' must hold q*q and 'b' q numbers");
    Matrix<double> am(q, q);
    Vector<double> bv(q);
    for (Index r = 0; r < q; ++r) {
      for (Index c = 0; c < q; ++c) am(r, c) = a.at(static_cast<std::size_t>(r * q + c)).get<double>();
      bv(r) = b.at(static_cast<std::size_t>(r)).get<double>();
    }
    TransformRecord rec{AffineTransform<double>(std::move(am), std::move(bv)),
                        doc.value("method", std::string("unknown")),
                        doc.value("denoise_rank", Index(0))};
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("transform JSON: ") + e.what());
  }
}

TransformRecord read_transform(const std::filesystem::path& path) {
  const auto text = read_text(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return transform_from_json(doc);
}

}  // namespace affcal::io
