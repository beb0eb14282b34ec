#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "copo/nets.hpp"
#include "json.hpp"

namespace copo {

// Checkpoint format: one flat little-endian binary of doubles plus a JSON
// manifest listing {name, shape, offset} per entry and a free-form "extra"
// object (rng states, counters, env state). Files are written to a temp name
// and renamed, so a crash mid-write leaves the previous checkpoint intact.
class CheckpointWriter {
 public:
  void add_params(const NamedParams& params);
  void add_matrix(const std::string& name, const Matrix& m);
  void add_blob(const std::string& name, const std::vector<double>& data);
  nlohmann::json& extra() { return extra_; }

  // Writes <dir>/<bin_name> and <dir>/manifest.json atomically.
  void write(const std::filesystem::path& dir, const std::string& bin_name) const;

 private:
  struct Entry {
    std::string name;
    Index rows, cols;
    std::vector<double> data;
  };
  std::vector<Entry> entries_;
  nlohmann::json extra_ = nlohmann::json::object();
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& dir);

  bool has(const std::string& name) const;
  // Copies the stored tensor into `dst`; name or shape mismatch is an error
  // that names the offending field.
  void load_into(const std::string& name, Tensor& dst) const;
  void load_params(const NamedParams& params) const;
  Matrix matrix(const std::string& name) const;
  std::vector<double> blob(const std::string& name) const;
  const nlohmann::json& extra() const { return extra_; }

 private:
  struct Entry {
    Index rows, cols;
    std::size_t offset;
  };
  Entry entry(const std::string& name) const;
  std::map<std::string, Entry> entries_;
  std::vector<double> data_;
  nlohmann::json extra_;
};

// FNV-1a over the raw bytes of the parameter values, for change detection.
std::uint64_t param_hash(const std::vector<Tensor>& params);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace copo
