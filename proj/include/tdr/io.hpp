#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/rng.hpp"

namespace tdr {

inline constexpr const char* kArtifactVersion = "tdr-0.1.0";

// Fixed-format double rendering so result files are byte-stable across runs.
inline std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    require(row.size() == header.size(), "CsvTable: row width != header width");
    rows.push_back(std::move(row));
  }

  std::string to_string() const {
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << ',';
        os << csv_escape(cells[i]);
      }
      os << '\n';
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return os.str();
  }
};

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("ensure_dir: cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_text_file: cannot open " + path.string());
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw DataError("write_text_file: write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_text_file: cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Version string for run artifacts: library version plus a hash of the
// canonical config text, so an output directory pins exactly what produced it.
inline std::string version_string(std::string_view canonical_config) {
  const std::uint64_t h = detail::fnv1a64(canonical_config);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(kArtifactVersion) + "+" + buf;
}

}  // namespace tdr
