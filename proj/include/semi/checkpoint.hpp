#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semi/mlp.hpp"
#include "semi/tensor.hpp"

namespace semi {

// Named tensors plus key/value metadata. On disk: `manifest.txt` with one
// `key: value` line per entry, and `params.bin`, the little-endian float64
// values of every tensor concatenated in manifest order.
class Checkpoint {
 public:
  static constexpr const char* kManifestName = "manifest.txt";
  static constexpr const char* kBlobName = "params.bin";

  void set_meta(const std::string& key, const std::string& value);
  const std::string& meta(const std::string& key) const;
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }

  void add(const std::string& name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<std::string> names() const;

  // Stores an MLP as `<section>.w<i>` / `<section>.b<i>` plus a spec line.
  void add_mlp(const std::string& section, const MlpSpec& spec, const ParameterSet& params);
  ParameterSet get_mlp(const std::string& section, const MlpSpec& expected) const;
  MlpSpec mlp_spec(const std::string& section) const;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::string> meta_;
  std::map<std::string, MlpSpec> specs_;
};

}  // namespace semi
