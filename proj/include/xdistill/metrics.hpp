#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdistill/common.hpp"

namespace xdistill {

// One line per optimizer step. loss_total must reconstruct from the
// components and weights: (1-α-β)·ce + α·T²·kd + β·frob/√numel (T² subject to
// the run's t_squared flag).
struct MetricsRecord {
  int64_t epoch = 0;  // 1-based
  int64_t step = 0;   // 0-based within the epoch
  double alpha_k = 0.0;
  double temp_k = 0.0;
  double beta_k = 0.0;
  double loss_ce = 0.0;
  double loss_kd = 0.0;
  double loss_frob = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;

  std::string to_json_line() const;
  static MetricsRecord from_json_line(const std::string& line);
};

// Line-delimited JSON records, written to a temp file and renamed into place
// on close.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::string path) : path_(std::move(path)) {}
  void append(const MetricsRecord& record) { lines_.push_back(record.to_json_line()); }
  void close();

 private:
  std::string path_;
  std::vector<std::string> lines_;
};

std::vector<MetricsRecord> read_metrics_file(const std::string& path);

}  // namespace xdistill
