#ifndef SHAKEDROP_METRICS_HPP_
#define SHAKEDROP_METRICS_HPP_

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "shakedrop/tensor.hpp"

namespace shakedrop {

struct MetricsRecord {
  int epoch = 0;
  Real train_loss = 0.0;
  Real train_top1 = 0.0;  // percent
  Real eval_loss = 0.0;
  Real eval_top1 = 0.0;  // percent
  Real lr = 0.0;
  Real wall_time_s = 0.0;
};

struct MetricsSink {
  virtual ~MetricsSink() = default;
  virtual void append(const MetricsRecord& r) = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "epoch,train_loss,train_top1,eval_loss,eval_top1,lr,wall_time_s";

namespace detail {

inline std::string format_g6(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline std::string metrics_csv_string(const std::vector<MetricsRecord>& records) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const MetricsRecord& r : records) {
    out += std::to_string(r.epoch);
    for (Real v : {r.train_loss, r.train_top1, r.eval_loss, r.eval_top1, r.lr, r.wall_time_s}) {
      out += ',';
      out += detail::format_g6(v);
    }
    out += '\n';
  }
  return out;
}

inline void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::binary);  // binary keeps LF endings everywhere
  if (!f) throw std::runtime_error("metrics csv: cannot open " + path + " for writing");
  f << metrics_csv_string(records);
  if (!f) throw std::runtime_error("metrics csv: write failed for " + path);
}

inline std::vector<MetricsRecord> parse_metrics_csv_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsCsvHeader) throw std::runtime_error("metrics csv: unexpected header: " + line);
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw std::runtime_error("metrics csv: bad row: " + line);
    MetricsRecord r;
    r.epoch = std::stoi(cells[0]);
    r.train_loss = std::stod(cells[1]);
    r.train_top1 = std::stod(cells[2]);
    r.eval_loss = std::stod(cells[3]);
    r.eval_top1 = std::stod(cells[4]);
    r.lr = std::stod(cells[5]);
    r.wall_time_s = std::stod(cells[6]);
    records.push_back(r);
  }
  return records;
}

inline std::vector<MetricsRecord> parse_metrics_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("metrics csv: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_metrics_csv_string(ss.str());
}

// In-memory sink used by tests and the CLI.
struct MetricsBuffer : MetricsSink {
  std::vector<MetricsRecord> records;
  void append(const MetricsRecord& r) override { records.push_back(r); }
};

}  // namespace shakedrop

#endif  // SHAKEDROP_METRICS_HPP_
