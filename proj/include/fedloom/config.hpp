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

// Key-value configuration files.
//
//   # comment
//   key = value
//   worker = 127.0.0.1:7100     # keys may repeat where a list makes sense
//
// Errors carry the line number of the offending entry.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedloom/aggregation.hpp"
#include "fedloom/errors.hpp"
#include "fedloom/selection.hpp"
#include "fedloom/warehouse.hpp"

namespace fedloom {

class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(start, end - start);
      ++line_no;
      start = end + 1;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no);
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key", line_no);
      for (char c : key) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) {
          throw ConfigError("bad character in key '" + std::string(key) + "'", line_no);
        }
      }
      cfg.entries_[std::string(key)].push_back({std::string(value), line_no});
      if (end == text.size()) break;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  /// Every value given for a repeatable key, in file order.
  std::vector<Entry> all(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? std::vector<Entry>{} : it->second;
  }

  std::optional<Entry> entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    if (it->second.size() > 1) throw ConfigError("key '" + key + "' given more than once", it->second[1].line);
    return it->second.front();
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto e = entry(key);
    return e ? e->value : fallback;
  }

  std::string required(const std::string& key) const {
    auto e = entry(key);
    if (!e) throw ConfigError("missing required key '" + key + "'");
    return e->value;
  }

  template <typename T>
  T number(const std::string& key, T fallback) const {
    auto e = entry(key);
    if (!e) return fallback;
    return to_number<T>(e->value, key, e->line);
  }

  /// Rejects keys outside `known`, so typos surface instead of being ignored.
  void check_known(const std::set<std::string>& known) const {
    for (const auto& [key, list] : entries_) {
      if (!known.count(key)) throw ConfigError("unknown key '" + key + "'", list.front().line);
    }
  }

  template <typename T>
  static T to_number(std::string_view text, const std::string& key, int line) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || text.empty()) {
      throw ConfigError("key '" + key + "': '" + std::string(text) + "' is not a valid number", line);
    }
    return value;
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

 private:
  std::map<std::string, std::vector<Entry>> entries_;
};

// ---------------------------------------------------------------------------
// Value grammars shared by the runtime and the simulator.

namespace detail {

inline std::vector<std::string_view> split_list(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(KeyValueConfig::trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// "host:port"
inline Address parse_address(std::string_view text, int line = 0) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw ConfigError("address '" + std::string(text) + "' must be host:port", line);
  }
  const auto port = KeyValueConfig::to_number<std::uint32_t>(text.substr(colon + 1), "port", line);
  if (port == 0 || port > 65535) throw ConfigError("port " + std::to_string(port) + " out of range 1-65535", line);
  return Address{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

/// all | random:K | rminmax:RMIN,RMAX | timebased:R,A
inline SelectorConfig parse_selector(std::string_view text, int line = 0) {
  const auto colon = text.find(':');
  const auto name = text.substr(0, colon);
  const auto args = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  const auto parts = args.empty() ? std::vector<std::string_view>{} : detail::split_list(args, ',');
  auto arg = [&](std::size_t i, const char* what) -> std::string_view {
    if (i >= parts.size()) throw ConfigError("selector '" + std::string(name) + "' needs " + what, line);
    return parts[i];
  };
  if (name == "all") return SelectAll{};
  if (name == "random") {
    SelectRandom r;
    r.k = KeyValueConfig::to_number<std::size_t>(arg(0, "k"), "selector", line);
    if (r.k == 0) throw ConfigError("random selector needs k >= 1", line);
    return r;
  }
  if (name == "rminmax") {
    SelectRMinMax r;
    if (!parts.empty()) {
      r.state.rmin = KeyValueConfig::to_number<double>(arg(0, "rmin"), "selector", line);
      r.state.rmax = KeyValueConfig::to_number<double>(arg(1, "rmax"), "selector", line);
    }
    if (!(r.state.rmin > 0.0) || r.state.rmax < r.state.rmin) {
      throw ConfigError("rminmax needs 0 < rmin <= rmax", line);
    }
    return r;
  }
  if (name == "timebased") {
    SelectTimeBased t;
    if (!parts.empty()) t.state.r = KeyValueConfig::to_number<std::uint32_t>(arg(0, "r"), "selector", line);
    if (parts.size() > 1) t.state.threshold_a = KeyValueConfig::to_number<double>(parts[1], "selector", line);
    if (t.state.r == 0) throw ConfigError("timebased needs r >= 1", line);
    return t;
  }
  throw ConfigError("unknown selector '" + std::string(name) + "'", line);
}

inline std::string to_string(const SelectorConfig& s) {
  char buf[96];
  switch (s.index()) {
    case 0:
      return "all";
    case 1:
      return "random:" + std::to_string(std::get<SelectRandom>(s).k);
    case 2: {
      const auto& st = std::get<SelectRMinMax>(s).state;
      std::snprintf(buf, sizeof buf, "rminmax:%g,%g", st.rmin, st.rmax);
      return buf;
    }
    default: {
      const auto& st = std::get<SelectTimeBased>(s).state;
      std::snprintf(buf, sizeof buf, "timebased:%u,%g", st.r, st.threshold_a);
      return buf;
    }
  }
}

/// fedavg | linear | polynomial[:A] | exponential[:A]
inline AggregationPolicy parse_policy(std::string_view text, int line = 0) {
  const auto colon = text.find(':');
  const auto name = text.substr(0, colon);
  std::optional<double> a;
  if (colon != std::string_view::npos) a = KeyValueConfig::to_number<double>(text.substr(colon + 1), "policy", line);
  if (name == "fedavg") return FedAvg{};
  Weighted w;
  if (name == "linear") {
    w.scheme = StalenessScheme::Linear;
  } else if (name == "polynomial") {
    w.scheme = StalenessScheme::Polynomial;
  } else if (name == "exponential") {
    w.scheme = StalenessScheme::Exponential;
  } else {
    throw ConfigError("unknown policy '" + std::string(name) + "'", line);
  }
  if (a) w.a = *a;
  if (w.scheme != StalenessScheme::Linear && !(w.a > 0.0)) throw ConfigError("staleness parameter must be > 0", line);
  return w;
}

inline Mode parse_mode(std::string_view text, int line = 0) {
  if (text == "sync") return Mode::Sync;
  if (text == "async") return Mode::Async;
  throw ConfigError("mode must be sync or async, got '" + std::string(text) + "'", line);
}

/// Comma-separated unsigned integers, e.g. an allocation row "1,0,3".
inline std::vector<std::uint32_t> parse_uint_list(std::string_view text, const std::string& key, int line = 0) {
  std::vector<std::uint32_t> out;
  for (auto part : detail::split_list(text, ',')) out.push_back(KeyValueConfig::to_number<std::uint32_t>(part, key, line));
  return out;
}

}  // namespace fedloom
