#include "copo/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace copo {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // prefer the shortest representation that round-trips
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    double back = std::strtod(shorter, nullptr);
    if (back == v) return shorter;
  }
  return buf;
}

const char* MetricsWriter::header() {
  return "step,episode_return,final_distance,normalized_final_distance,success,wall_clock";
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) : path_(path) {
  bool exists = std::filesystem::exists(path);
  std::FILE* f = std::fopen(path.string().c_str(), append && exists ? "ab" : "wb");
  if (!f) throw std::runtime_error("metrics: cannot open " + path.string());
  file_ = f;
  if (!(append && exists)) {
    std::fprintf(f, "%s\n", header());
    rows_ = 0;
  } else {
    std::ifstream in(path);
    std::string line;
    std::int64_t count = -1;  // skip header
    while (std::getline(in, line))
      if (!line.empty()) ++count;
    rows_ = std::max<std::int64_t>(count, 0);
  }
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

void MetricsWriter::append(const MetricsRecord& r) {
  std::FILE* f = static_cast<std::FILE*>(file_);
  std::fprintf(f, "%" PRId64 ",%s,%s,%s,%d,%s\n", r.step, format_double(r.episode_return).c_str(),
               format_double(r.final_distance).c_str(),
               format_double(r.normalized_final_distance).c_str(), r.success,
               format_double(r.wall_clock).c_str());
  ++rows_;
}

void MetricsWriter::flush() {
  std::fflush(static_cast<std::FILE*>(file_));
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics: empty file " + path.string());
  if (line != MetricsWriter::header()) throw std::runtime_error("metrics: unexpected header in " + path.string());
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MetricsRecord r;
    std::getline(ss, field, ',');
    r.step = std::stoll(field);
    std::getline(ss, field, ',');
    r.episode_return = std::stod(field);
    std::getline(ss, field, ',');
    r.final_distance = std::stod(field);
    std::getline(ss, field, ',');
    r.normalized_final_distance = std::stod(field);
    std::getline(ss, field, ',');
    r.success = std::stoi(field);
    std::getline(ss, field, ',');
    r.wall_clock = std::stod(field);
    out.push_back(r);
  }
  return out;
}

void truncate_metrics(const std::filesystem::path& path, std::int64_t rows) {
  std::vector<MetricsRecord> all = read_metrics(path);
  if (static_cast<std::int64_t>(all.size()) < rows)
    throw std::runtime_error("metrics: cannot truncate " + path.string() + " to " +
                             std::to_string(rows) + " rows, only " + std::to_string(all.size()));
  MetricsWriter w(path, false);
  for (std::int64_t i = 0; i < rows; ++i) w.append(all[static_cast<std::size_t>(i)]);
}

}  // namespace copo
