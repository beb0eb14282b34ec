#include "copo/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace copo {

void CheckpointWriter::add_params(const NamedParams& params) {
  for (const auto& [name, t] : params) add_matrix(name, t.value());
}

void CheckpointWriter::add_matrix(const std::string& name, const Matrix& m) {
  Entry e;
  e.name = name;
  e.rows = m.rows();
  e.cols = m.cols();
  e.data.assign(m.data(), m.data() + m.size());
  entries_.push_back(std::move(e));
}

void CheckpointWriter::add_blob(const std::string& name, const std::vector<double>& data) {
  Entry e;
  e.name = name;
  e.rows = 1;
  e.cols = static_cast<Index>(data.size());
  e.data = data;
  entries_.push_back(std::move(e));
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

void CheckpointWriter::write(const std::filesystem::path& dir, const std::string& bin_name) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "copo-checkpoint-v1";
  manifest["binary"] = bin_name;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;

  std::filesystem::path bin_tmp = dir / (bin_name + ".tmp");
  {
    std::ofstream out(bin_tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + bin_tmp.string());
    for (const Entry& e : entries_) {
      tensors.push_back({{"name", e.name}, {"shape", {e.rows, e.cols}}, {"offset", offset}});
      out.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(double)));
      offset += e.data.size();
    }
  }
  std::filesystem::rename(bin_tmp, dir / bin_name);

  manifest["tensors"] = std::move(tensors);
  manifest["extra"] = extra_;
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

CheckpointReader::CheckpointReader(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  in >> manifest;

  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!manifest.contains(name))
      throw std::runtime_error("checkpoint: manifest missing field '" + std::string(name) + "'");
    return manifest[name];
  };
  if (field("format").get<std::string>() != "copo-checkpoint-v1")
    throw std::runtime_error("checkpoint: manifest field 'format' has unknown value");
  std::string bin_name = field("binary").get<std::string>();
  extra_ = field("extra");

  std::size_t total = 0;
  for (const auto& t : field("tensors")) {
    for (const char* key : {"name", "shape", "offset"})
      if (!t.contains(key))
        throw std::runtime_error("checkpoint: manifest tensor entry missing field '" +
                                 std::string(key) + "'");
    Entry e;
    e.rows = t["shape"][0].get<Index>();
    e.cols = t["shape"][1].get<Index>();
    e.offset = t["offset"].get<std::size_t>();
    entries_[t["name"].get<std::string>()] = e;
    total = std::max(total, e.offset + static_cast<std::size_t>(e.rows * e.cols));
  }

  std::ifstream bin(dir / bin_name, std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open " + (dir / bin_name).string());
  data_.resize(total);
  bin.read(reinterpret_cast<char*>(data_.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (static_cast<std::size_t>(bin.gcount()) != total * sizeof(double))
    throw std::runtime_error("checkpoint: binary shorter than manifest field 'tensors' describes");
}

bool CheckpointReader::has(const std::string& name) const { return entries_.count(name) > 0; }

CheckpointReader::Entry CheckpointReader::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

void CheckpointReader::load_into(const std::string& name, Tensor& dst) const {
  Entry e = entry(name);
  if (e.rows != dst.rows() || e.cols != dst.cols())
    throw std::runtime_error("checkpoint: tensor '" + name + "' has shape (" + std::to_string(e.rows) +
                             "x" + std::to_string(e.cols) + "), expected " + shape_str(dst));
  std::memcpy(dst.value().data(), data_.data() + e.offset,
              static_cast<std::size_t>(e.rows * e.cols) * sizeof(double));
}

void CheckpointReader::load_params(const NamedParams& params) const {
  for (const auto& [name, t] : params) {
    Tensor mutable_t = t;
    load_into(name, mutable_t);
  }
}

Matrix CheckpointReader::matrix(const std::string& name) const {
  Entry e = entry(name);
  Matrix m(e.rows, e.cols);
  std::memcpy(m.data(), data_.data() + e.offset,
              static_cast<std::size_t>(e.rows * e.cols) * sizeof(double));
  return m;
}

std::vector<double> CheckpointReader::blob(const std::string& name) const {
  Entry e = entry(name);
  return std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(e.offset),
                             data_.begin() + static_cast<std::ptrdiff_t>(e.offset) +
                                 static_cast<std::ptrdiff_t>(e.rows * e.cols));
}

std::uint64_t param_hash(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : params) {
    const double* p = t.value().data();
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace copo
