#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rainmrf/common.hpp"

namespace rainmrf::csv {

// Minimal reader for the unquoted, comma-separated files this project
// writes: a header line followed by numeric rows.
class Reader {
 public:
  Reader(const std::filesystem::path& path, std::vector<std::string> expected_header)
      : path_(path.string()), in_(path) {
    if (!in_) throw IoError("cannot open " + path_);
    std::string header;
    if (!next_line(header)) throw ParseError(path_, 1, "missing header");
    const auto got = split(header);
    if (got != expected_header) {
      std::string want;
      for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
      throw ParseError(path_, line_, "expected header '" + want + "', got '" + header + "'");
    }
    width_ = expected_header.size();
  }

  // Reads the next data row into fields; returns false at end of file.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (next_line(line)) {
      if (line.empty()) continue;
      fields = split(line);
      if (fields.size() != width_)
        fail("expected " + std::to_string(width_) + " fields, got " +
             std::to_string(fields.size()));
      return true;
    }
    return false;
  }

  template <typename T>
  T get(const std::vector<std::string>& fields, std::size_t i) const {
    const std::string& f = fields[i];
    T value{};
    const char* first = f.data();
    const char* last = f.data() + f.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) fail("cannot parse field " + std::to_string(i + 1) + " '" + f + "'");
    return value;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, line_, what); }

  std::size_t line() const { return line_; }
  const std::string& path() const { return path_; }

 private:
  bool next_line(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  static std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      out.emplace_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return out;
  }

  std::string path_;
  std::ifstream in_;
  std::size_t line_ = 0;
  std::size_t width_ = 0;
};

// Shortest representation that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace rainmrf::csv
