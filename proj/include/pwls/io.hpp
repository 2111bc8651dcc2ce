#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"

namespace pwls {

struct CsvOptions {
  std::string response;
  std::vector<std::string> predictors;  // empty: every column except the response
  bool intercept = true;
  char delimiter = ',';
};

struct LoadedData {
  Dataset data;
  std::vector<std::string> columns;  // predictor names in X order, "(intercept)" first if added
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delimiter) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view field, double& value) {
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  return ec == std::errc() && ptr == end && std::isfinite(value);
}

}  // namespace detail

/**
 * Reads a header-bearing delimited file into a Dataset. Row numbers in error
 * messages count data rows from 1 (the header is row 0).
 */
inline LoadedData load_csv(const std::string& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open input file '" + path + "'");
  require(!opt.response.empty(), "load_csv: response column not given");

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::Parse, "input file '" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto field : detail::split(line, opt.delimiter)) header.emplace_back(field);

  auto column_of = [&](const std::string& name) {
    std::ptrdiff_t found = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] != name) continue;
      if (found >= 0) fail(ErrorCode::Parse, "column '" + name + "' appears twice in the header");
      found = static_cast<std::ptrdiff_t>(j);
    }
    if (found < 0) fail(ErrorCode::InvalidArgument, "unknown column '" + name + "'");
    return static_cast<std::size_t>(found);
  };

  const std::size_t response = column_of(opt.response);
  std::vector<std::size_t> selected;
  std::vector<std::string> names;
  if (opt.predictors.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == response) continue;
      selected.push_back(j);
      names.push_back(header[j]);
    }
  } else {
    for (const auto& name : opt.predictors) {
      const std::size_t j = column_of(name);
      if (j == response) fail(ErrorCode::InvalidArgument, "column '" + name + "' is the response");
      for (std::size_t prev : selected) {
        if (prev == j) fail(ErrorCode::InvalidArgument, "column selected twice: '" + name + "'");
      }
      selected.push_back(j);
      names.push_back(name);
    }
  }
  require(!selected.empty() || opt.intercept, "load_csv: no predictor columns selected");

  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, opt.delimiter);
    if (fields.size() != header.size()) {
      fail(ErrorCode::Parse, "row " + std::to_string(row) + ": expected " +
                                 std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
    }
    auto number = [&](std::size_t j) {
      double v = 0.0;
      if (!detail::parse_double(fields[j], v)) {
        fail(ErrorCode::Parse, "row " + std::to_string(row) + ", column '" + header[j] +
                                   "': missing or non-numeric value");
      }
      return v;
    };
    std::vector<double> xs;
    xs.reserve(selected.size());
    for (std::size_t j : selected) xs.push_back(number(j));
    ys.push_back(number(response));
    rows.push_back(std::move(xs));
  }

  const Index p = static_cast<Index>(selected.size()) + (opt.intercept ? 1 : 0);
  const auto n = static_cast<Index>(rows.size());
  if (n < p + 1) {
    fail(ErrorCode::InvalidArgument, "too few rows: " + std::to_string(n) + " usable rows for " +
                                         std::to_string(p) + " predictors");
  }
  Matrix x(n, p);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    Index col = 0;
    if (opt.intercept) x(i, col++) = 1.0;
    for (double v : r) x(i, col++) = v;
    y(i) = ys[static_cast<std::size_t>(i)];
  }
  if (opt.intercept) names.insert(names.begin(), "(intercept)");
  return {Dataset(std::move(x), std::move(y)), std::move(names)};
}

}  // namespace pwls
