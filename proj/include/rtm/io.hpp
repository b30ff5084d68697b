#pragma once

// CSV input/output, column transforms, atomic file writes and provenance hashing.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "rtm/dataset.hpp"
#include "rtm/errors.hpp"

namespace rtm {

inline constexpr const char* kArtifactName = "rtm";
inline constexpr const char* kArtifactVersion = "1.0.0";

/// Shortest decimal text that parses back to the same double; empty for NaN.
inline std::string format_double(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[h & 0xF];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ConfigError("failed writing '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ConfigError("cannot move output into place at '" + path.string() + "'");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

/// Splits one CSV record; double quotes delimit fields that contain commas or quotes.
inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quoted field");
  out.push_back(std::move(cur));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

/// Comma-separated file with a header row; empty fields are missing (NaN).
inline Dataset load_csv(const std::filesystem::path& path, std::ostream* log = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read data file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("data file '" + path.string() + "' is empty (no header)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto& h : detail::split_csv_line(line, 1)) header.emplace_back(detail::trim(h));
  {
    std::set<std::string> seen;
    for (const auto& h : header) {
      if (h.empty()) throw DataError("empty column name in header of '" + path.string() + "'");
      if (!seen.insert(h).second) throw DataError("duplicate column '" + h + "' in header of '" + path.string() + "'");
    }
  }
  std::vector<std::vector<double>> cols(header.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = detail::trim(fields[c]);
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!f.empty()) {
        const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
        if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v))
          throw DataError("line " + std::to_string(line_no) + ", column '" + header[c] + "': cannot parse '" +
                          std::string(f) + "' as a number");
      }
      cols[c].push_back(v);
    }
  }
  Dataset d;
  for (std::size_t c = 0; c < header.size(); ++c) d.add_column(header[c], std::move(cols[c]));
  if (log) {
    *log << "loaded " << d.rows() << " rows x " << d.cols() << " columns from " << path.string() << "\n";
    for (const auto& name : d.names()) {
      const auto& col = d.column(name);
      const auto missing = std::count_if(col.begin(), col.end(), [](double v) { return std::isnan(v); });
      if (missing > 0) *log << "  column '" << name << "': " << missing << " missing\n";
    }
  }
  return d;
}

inline std::string to_csv(const Dataset& d) {
  std::string out;
  const auto& names = d.names();
  for (std::size_t c = 0; c < names.size(); ++c) out += (c ? "," : "") + detail::csv_field(names[c]);
  out += "\n";
  std::vector<const std::vector<double>*> cols;
  for (const auto& n : names) cols.push_back(&d.column(n));
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out += ',';
      out += format_double((*cols[c])[r]);
    }
    out += "\n";
  }
  return out;
}

inline void write_csv(const Dataset& d, const std::filesystem::path& path) { atomic_write(path, to_csv(d)); }

// ---------------------------------------------------------------------------------------------
// transforms

enum class TransformOp { log, dummy, standardize };

struct Transform {
  std::string source;
  TransformOp op = TransformOp::log;
  std::string target;
  std::optional<double> reference;  // dummy: level left out
};

inline const char* to_string(TransformOp op) {
  switch (op) {
    case TransformOp::log: return "log";
    case TransformOp::dummy: return "dummy";
    case TransformOp::standardize: return "standardize";
  }
  return "?";
}

inline TransformOp transform_op_from_string(const std::string& s) {
  if (s == "log") return TransformOp::log;
  if (s == "dummy") return TransformOp::dummy;
  if (s == "standardize") return TransformOp::standardize;
  throw ConfigError("unknown transform op '" + s + "' (expected log, dummy or standardize)");
}

/// Column name of the dummy for `level` produced from target `t`.
inline std::string dummy_column_name(const std::string& t, double level) { return t + "_" + format_double(level); }

/// Applies transforms in order. Sources must already exist (raw or produced by an earlier
/// transform) and targets must be new, so the dependency graph is acyclic by construction.
inline void apply_transforms(Dataset& d, const std::vector<Transform>& transforms) {
  for (const auto& t : transforms) {
    if (!d.has(t.source))
      throw SpecError("transform source column '" + t.source + "' does not exist (transforms run in listed order)");
    const auto& src = d.column(t.source);
    auto claim = [&](const std::string& name) {
      if (d.has(name)) throw SpecError("transform target '" + name + "' already exists");
    };
    switch (t.op) {
      case TransformOp::log: {
        claim(t.target);
        std::vector<double> out(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
          if (!std::isnan(src[i]) && !(src[i] > 0.0))
            throw DataError("log transform of '" + t.source + "' needs strictly positive values (row " +
                            std::to_string(i + 1) + " is " + format_double(src[i]) + ")");
          out[i] = std::log(src[i]);
        }
        d.add_column(t.target, std::move(out));
        break;
      }
      case TransformOp::standardize: {
        claim(t.target);
        double sum = 0.0, n = 0.0;
        for (double v : src)
          if (!std::isnan(v)) sum += v, n += 1.0;
        if (n < 2.0) throw DataError("standardize of '" + t.source + "' needs at least two values");
        const double mean = sum / n;
        double ss = 0.0;
        for (double v : src)
          if (!std::isnan(v)) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / (n - 1.0));
        if (!(sd > 0.0)) throw DataError("standardize of '" + t.source + "': column is constant");
        std::vector<double> out(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) out[i] = (src[i] - mean) / sd;
        d.add_column(t.target, std::move(out));
        break;
      }
      case TransformOp::dummy: {
        if (!t.reference) throw ConfigError("dummy transform of '" + t.source + "' needs a reference level");
        std::set<double> levels;
        for (double v : src)
          if (!std::isnan(v)) levels.insert(v);
        if (!levels.contains(*t.reference))
          throw DataError("reference level " + format_double(*t.reference) + " does not occur in '" + t.source + "'");
        std::vector<std::pair<std::string, std::vector<double>>> made;
        for (double level : levels) {
          if (level == *t.reference) continue;
          const std::string name = dummy_column_name(t.target, level);
          claim(name);
          std::vector<double> out(src.size());
          for (std::size_t i = 0; i < src.size(); ++i)
            out[i] = std::isnan(src[i]) ? src[i] : (src[i] == level ? 1.0 : 0.0);
          made.emplace_back(name, std::move(out));
        }
        for (auto& [name, col] : made) d.add_column(name, std::move(col));
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------------------------
// descriptive summaries

/// Maps the distinct values of an ordinal column onto 1..k in sorted order unless they already lie
/// in {1, ..., levels}. Returns true when the column was rewritten.
inline bool remap_ordinal_labels(Dataset& d, const std::string& name, int levels, std::ostream* log = nullptr) {
  const auto& col = d.column(name);
  std::set<double> distinct;
  for (double v : col)
    if (!std::isnan(v)) distinct.insert(v);
  const bool already = std::all_of(distinct.begin(), distinct.end(), [&](double v) {
    return v >= 1.0 && v <= static_cast<double>(levels) && v == std::floor(v);
  });
  if (already) return false;
  if (distinct.size() > static_cast<std::size_t>(levels))
    throw DataError("ordinal column '" + name + "' has " + std::to_string(distinct.size()) + " distinct values but " +
                    std::to_string(levels) + " levels are configured");
  std::map<double, double> rank;
  for (double v : distinct) rank.emplace(v, static_cast<double>(rank.size() + 1));
  std::vector<double> out(col.size());
  for (std::size_t r = 0; r < col.size(); ++r) out[r] = std::isnan(col[r]) ? col[r] : rank.at(col[r]);
  d.set_column(name, std::move(out));
  if (log) {
    *log << "ordinal column '" << name << "' relabelled:";
    for (const auto& [from, to] : rank) *log << " " << format_double(from) << "->" << format_double(to);
    *log << "\n";
  }
  return true;
}

struct ColumnSummary {
  std::string name;
  std::size_t count = 0;  // non-missing
  std::size_t missing = 0;
  bool binary = false;
  double share = std::numeric_limits<double>::quiet_NaN();  // share of ones for 0/1 columns
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<ColumnSummary> describe(const Dataset& d) {
  std::vector<ColumnSummary> out;
  for (const auto& name : d.names()) {
    ColumnSummary s;
    s.name = name;
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool binary = true;
    for (double v : d.column(name)) {
      if (std::isnan(v)) {
        ++s.missing;
        continue;
      }
      ++s.count;
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      binary = binary && (v == 0.0 || v == 1.0);
    }
    if (s.count > 0) {
      s.mean = sum / static_cast<double>(s.count);
      s.min = lo;
      s.max = hi;
      double ss = 0.0;
      for (double v : d.column(name))
        if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
      s.sd = s.count > 1 ? std::sqrt(ss / static_cast<double>(s.count - 1)) : 0.0;
      s.binary = binary;
      if (binary) s.share = s.mean;
    }
    out.push_back(s);
  }
  return out;
}

inline std::string render_description(const std::vector<ColumnSummary>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %8s %8s %9s %10s %10s %10s %10s\n", "column", "count", "missing", "share(%)",
                "mean", "sd", "min", "max");
  os << buf;
  for (const auto& s : rows) {
    char sh[32] = "";
    if (s.binary) std::snprintf(sh, sizeof sh, "%.2f", 100.0 * s.share);
    std::snprintf(buf, sizeof buf, "%-28s %8zu %8zu %9s %10.4f %10.4f %10.4f %10.4f\n", s.name.c_str(), s.count,
                  s.missing, sh, s.mean, s.sd, s.min, s.max);
    os << buf;
  }
  return os.str();
}

}  // namespace rtm
