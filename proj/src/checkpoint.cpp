#include "semi/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semi {

namespace {

std::uint64_t to_little_endian(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) {
    return x;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

std::vector<std::size_t> parse_shape(const std::string& s) {
  std::vector<std::size_t> shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

std::string widths_string(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(w[i]);
  }
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("checkpoint meta key/value contains a reserved character");
  }
  meta_[key] = value;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw std::out_of_range("checkpoint has no meta key '" + key + "'");
  return it->second;
}

void Checkpoint::add(const std::string& name, Tensor tensor) {
  if (name.empty() || name.find_first_of(" \n") != std::string::npos) {
    throw std::invalid_argument("invalid checkpoint tensor name '" + name + "'");
  }
  if (contains(name)) throw std::invalid_argument("duplicate checkpoint tensor '" + name + "'");
  index_[name] = tensors_.size();
  tensors_.emplace_back(name, std::move(tensor));
}

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  return tensors_[it->second].second;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : tensors_) out.push_back(n);
  return out;
}

void Checkpoint::add_mlp(const std::string& section, const MlpSpec& spec,
                         const ParameterSet& params) {
  if (!params.matches(spec)) throw std::invalid_argument("add_mlp: parameters do not match spec");
  specs_[section] = spec;
  const auto& layers = params.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    add(section + ".w" + std::to_string(i), layers[i].weight);
    add(section + ".b" + std::to_string(i), layers[i].bias);
  }
}

MlpSpec Checkpoint::mlp_spec(const std::string& section) const {
  auto it = specs_.find(section);
  if (it == specs_.end()) throw std::out_of_range("checkpoint has no MLP section '" + section + "'");
  return it->second;
}

ParameterSet Checkpoint::get_mlp(const std::string& section, const MlpSpec& expected) const {
  if (!(mlp_spec(section) == expected)) {
    throw std::invalid_argument("checkpoint MLP '" + section + "' has a different spec");
  }
  auto params = ParameterSet::zeros(expected);
  for (std::size_t i = 0; i < params.layers().size(); ++i) {
    auto& layer = params.layers()[i];
    const auto& w = get(section + ".w" + std::to_string(i));
    const auto& b = get(section + ".b" + std::to_string(i));
    if (w.shape() != layer.weight.shape() || b.shape() != layer.bias.shape()) {
      throw std::invalid_argument("checkpoint MLP '" + section + "' tensor shape mismatch");
    }
    layer.weight = w;
    layer.bias = b;
  }
  return params;
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kManifestName, std::ios::trunc);
  std::ofstream blob(dir / kBlobName, std::ios::binary | std::ios::trunc);
  if (!manifest || !blob) throw std::runtime_error("cannot write checkpoint in " + dir.string());
  manifest << "format: semi-checkpoint 1\n";
  manifest << "blob: " << kBlobName << "\n";
  for (const auto& [k, v] : meta_) manifest << "meta: " << k << "=" << v << "\n";
  for (const auto& [section, spec] : specs_) {
    manifest << "spec: " << section << " " << widths_string(spec.widths) << " "
             << to_string(spec.activation) << "\n";
  }
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    manifest << "tensor: " << name << " shape=" << t.shape_string() << " offset=" << offset
             << " count=" << t.size() << "\n";
    for (double x : t.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &x, sizeof bits);
      bits = to_little_endian(bits);
      blob.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += t.size() * sizeof(double);
  }
  if (!manifest || !blob) throw std::runtime_error("failed writing checkpoint in " + dir.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kManifestName);
  if (!manifest) throw std::runtime_error("cannot open checkpoint manifest in " + dir.string());
  Checkpoint ck;
  std::string blob_name = kBlobName;
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;
    std::size_t count = 0;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw std::runtime_error("checkpoint manifest line " + std::to_string(lineno) +
                               ": missing ':'");
    }
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    if (key == "format") {
      if (value != "semi-checkpoint 1") throw std::runtime_error("unsupported checkpoint format '" + value + "'");
    } else if (key == "blob") {
      blob_name = value;
    } else if (key == "meta") {
      const auto eq = value.find('=');
      if (eq == std::string::npos) throw std::runtime_error("malformed meta line " + std::to_string(lineno));
      ck.meta_[value.substr(0, eq)] = value.substr(eq + 1);
    } else if (key == "spec") {
      std::stringstream ss(value);
      std::string section, widths, act;
      ss >> section >> widths >> act;
      MlpSpec spec;
      std::stringstream ws(widths);
      std::string w;
      while (std::getline(ws, w, ',')) spec.widths.push_back(std::stoull(w));
      spec.activation = activation_from_string(act);
      ck.specs_[section] = spec;
    } else if (key == "tensor") {
      std::stringstream ss(value);
      Entry e;
      std::string tok;
      ss >> e.name;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        const auto k = tok.substr(0, eq);
        const auto v = tok.substr(eq + 1);
        if (k == "shape") e.shape = parse_shape(v);
        else if (k == "offset") e.offset = std::stoull(v);
        else if (k == "count") e.count = std::stoull(v);
      }
      entries.push_back(std::move(e));
    } else {
      throw std::runtime_error("unknown checkpoint manifest key '" + key + "' on line " +
                               std::to_string(lineno));
    }
  }
  std::ifstream blob(dir / blob_name, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob in " + dir.string());
  for (const auto& e : entries) {
    std::vector<double> data(e.count);
    blob.seekg(static_cast<std::streamoff>(e.offset));
    for (auto& x : data) {
      std::uint64_t bits = 0;
      blob.read(reinterpret_cast<char*>(&bits), sizeof bits);
      bits = to_little_endian(bits);
      std::memcpy(&x, &bits, sizeof bits);
    }
    if (!blob) throw std::runtime_error("checkpoint blob truncated at tensor '" + e.name + "'");
    ck.add(e.name, Tensor(e.shape, std::move(data)));
  }
  return ck;
}

}  // namespace semi
