#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace copo {

// One evaluation episode row. wall_clock is written as 0 in files so that
// identical (config, seed) runs produce byte-identical output; measured
// timings go to the console instead.
struct MetricsRecord {
  std::int64_t step = 0;
  double episode_return = 0.0;
  double final_distance = 0.0;
  double normalized_final_distance = 0.0;  // divided by the initial distance
  int success = 0;
  double wall_clock = 0.0;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path, bool append = false);
  ~MetricsWriter();
  void append(const MetricsRecord& r);
  void flush();
  std::int64_t rows_written() const { return rows_; }
  void set_rows_written(std::int64_t rows) { rows_ = rows; }

  static const char* header();

 private:
  std::filesystem::path path_;
  std::int64_t rows_ = 0;
  void* file_;  // FILE*
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

// Truncate a metrics file to its header plus the first `rows` data rows
// (checkpoint resume rewinds partially written output).
void truncate_metrics(const std::filesystem::path& path, std::int64_t rows);

std::string format_double(double v);  // shortest round-trip text, locale-free

}  // namespace copo
