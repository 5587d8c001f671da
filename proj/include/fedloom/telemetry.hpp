/**
 * Copyright 2026 The Fedloom Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedloom/errors.hpp"
#include "fedloom/selection.hpp"

namespace fedloom {

/// One completed aggregation. `round_index` equals the server version after it.
struct RoundRecord {
  std::uint64_t round_index = 0;
  double started_at = 0.0;
  double finished_at = 0.0;
  double accuracy = 0.0;
  WorkerSet selected;
  std::size_t responses_used = 0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

inline constexpr std::string_view kRecordsHeader = "round,started_at,finished_at,accuracy,selected,responses_used";

namespace detail {

// Shortest text that parses back to the same double.
inline std::string exact_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string accuracy_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, const char* field, int line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(std::string("bad ") + field + " '" + std::string(text) + "'", line);
  }
  return value;
}

}  // namespace detail

/// CSV with one row per record. Worker sets are written as ids joined by ';'.
inline std::string export_records(const std::vector<RoundRecord>& records) {
  std::string out(kRecordsHeader);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.round_index);
    out += ',';
    out += detail::exact_double(r.started_at);
    out += ',';
    out += detail::exact_double(r.finished_at);
    out += ',';
    out += detail::accuracy_text(r.accuracy);
    out += ',';
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      if (i) out += ';';
      out += std::to_string(r.selected[i]);
    }
    out += ',';
    out += std::to_string(r.responses_used);
    out += '\n';
  }
  return out;
}

/// Inverse of export_records. Throws ConfigError naming the line on bad input.
inline std::vector<RoundRecord> parse_records(std::string_view csv) {
  std::vector<RoundRecord> records;
  int line_no = 0;
  bool header_seen = false;
  for (auto line : detail::split(csv, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kRecordsHeader) throw ConfigError("unexpected CSV header", line_no);
      header_seen = true;
      continue;
    }
    const auto cols = detail::split(line, ',');
    if (cols.size() != 6) throw ConfigError("expected 6 columns, got " + std::to_string(cols.size()), line_no);
    RoundRecord r;
    r.round_index = detail::parse_number<std::uint64_t>(cols[0], "round", line_no);
    r.started_at = detail::parse_number<double>(cols[1], "started_at", line_no);
    r.finished_at = detail::parse_number<double>(cols[2], "finished_at", line_no);
    r.accuracy = detail::parse_number<double>(cols[3], "accuracy", line_no);
    if (!cols[4].empty()) {
      for (auto id : detail::split(cols[4], ';')) {
        r.selected.push_back(detail::parse_number<WorkerId>(id, "selected", line_no));
      }
    }
    r.responses_used = detail::parse_number<std::size_t>(cols[5], "responses_used", line_no);
    records.push_back(std::move(r));
  }
  if (!header_seen) throw ConfigError("missing CSV header");
  return records;
}

/// finished_at of the first record reaching `target`; nullopt when never reached.
inline std::optional<double> time_to_accuracy(const std::vector<RoundRecord>& records, double target) {
  for (const auto& r : records) {
    if (r.accuracy >= target) return r.finished_at;
  }
  return std::nullopt;
}

}  // namespace fedloom
