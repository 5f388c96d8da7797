#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbo::cli {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CSV with one '#'-prefixed header line carrying the run id and column names.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& run_id, std::vector<std::string> columns)
      : path_(path), out_(path), ncols_(columns.size()) {
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
    out_ << "# run_id=" << run_id << " columns=";
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }

  void row(std::span<const double> values) {
    if (values.size() != ncols_) throw IoError("csv row width mismatch in '" + path_.string() + "'");
    char buf[40];
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      out_ << (i ? "," : "") << buf;
    }
    out_ << "\n";
  }
  void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t ncols_;
};

// run_id recorded in a CSV header, or empty when absent.
inline std::string csv_run_id(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return {};
  const std::string tag = "# run_id=";
  if (line.rfind(tag, 0) != 0) return {};
  const auto end = line.find(' ', tag.size());
  return line.substr(tag.size(), end == std::string::npos ? std::string::npos : end - tag.size());
}

}  // namespace cbo::cli
