#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "depthprobe/errors.hpp"

namespace depthprobe {

// All CSV numbers are printed at 9 significant digits, which round-trips
// through decimal text (parse then re-print reproduces the field).
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

inline std::string csv_num(long long v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw FormatError("cannot open CSV for writing: " + path);
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace depthprobe
