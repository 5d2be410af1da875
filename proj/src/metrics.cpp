#include "xdistill/metrics.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace xdistill {

using nlohmann::json;

std::string MetricsRecord::to_json_line() const {
  json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["alpha_k"] = alpha_k;
  j["temp_k"] = temp_k;
  j["beta_k"] = beta_k;
  j["loss_ce"] = loss_ce;
  j["loss_kd"] = loss_kd;
  j["loss_frob"] = loss_frob;
  j["loss_total"] = loss_total;
  j["grad_norm"] = grad_norm;
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

MetricsRecord MetricsRecord::from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(std::string("metrics: bad record line: ") + e.what());
  }
  MetricsRecord r;
  r.epoch = j.at("epoch").get<int64_t>();
  r.step = j.at("step").get<int64_t>();
  r.alpha_k = j.at("alpha_k").get<double>();
  r.temp_k = j.at("temp_k").get<double>();
  r.beta_k = j.at("beta_k").get<double>();
  r.loss_ce = j.at("loss_ce").get<double>();
  r.loss_kd = j.at("loss_kd").get<double>();
  r.loss_frob = j.at("loss_frob").get<double>();
  r.loss_total = j.at("loss_total").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.lr = j.at("lr").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

void MetricsWriter::close() {
  const std::string tmp = path_ + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    check(f.good(), "metrics: cannot open '" + tmp + "' for writing");
    for (const auto& line : lines_) f << line << "\n";
    check(f.good(), "metrics: write to '" + tmp + "' failed");
  }
  check(std::rename(tmp.c_str(), path_.c_str()) == 0,
        "metrics: rename to '" + path_ + "' failed");
}

std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "metrics: cannot open '" + path + "'");
  std::vector<MetricsRecord> records;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) records.push_back(MetricsRecord::from_json_line(line));
  }
  return records;
}

}  // namespace xdistill
