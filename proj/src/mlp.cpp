#include "semi/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace semi {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("MlpSpec needs at least 2 widths");
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("MlpSpec widths must be positive");
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += widths[i + 1] * (widths[i] + 1);
  return n;
}

ParameterSet ParameterSet::zeros(const MlpSpec& spec) {
  spec.validate();
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
    layers.push_back({Tensor({spec.widths[i + 1], spec.widths[i]}), Tensor({spec.widths[i + 1]})});
  }
  return ParameterSet(std::move(layers));
}

ParameterSet ParameterSet::glorot(const MlpSpec& spec, std::mt19937_64& rng) {
  auto p = zeros(spec);
  for (auto& layer : p.layers_) {
    const auto fan_out = static_cast<double>(layer.weight.shape()[0]);
    const auto fan_in = static_cast<double>(layer.weight.shape()[1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : layer.weight.data()) w = dist(rng);
  }
  return p;
}

std::size_t ParameterSet::size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(layers_.size() * 2);
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void ParameterSet::assign(std::span<const Tensor> tensors) {
  if (tensors.size() != layers_.size() * 2) {
    throw std::invalid_argument("ParameterSet::assign: expected " +
                                std::to_string(layers_.size() * 2) + " tensors");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (tensors[2 * i].shape() != layers_[i].weight.shape() ||
        tensors[2 * i + 1].shape() != layers_[i].bias.shape()) {
      throw std::invalid_argument("ParameterSet::assign: shape mismatch at layer " +
                                  std::to_string(i));
    }
    layers_[i].weight = tensors[2 * i];
    layers_[i].bias = tensors[2 * i + 1];
  }
}

std::vector<double> ParameterSet::flatten() const {
  const auto ts = tensors();
  return semi::flatten(ts);
}

void ParameterSet::unflatten(std::span<const double> flat) {
  auto ts = tensors();
  semi::unflatten(flat, ts);
  assign(ts);
}

bool ParameterSet::matches(const MlpSpec& spec) const {
  if (layers_.size() + 1 != spec.widths.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].weight.shape() != std::vector<std::size_t>{spec.widths[i + 1], spec.widths[i]})
      return false;
    if (layers_[i].bias.size() != spec.widths[i + 1]) return false;
  }
  return true;
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

}  // namespace

Tensor mlp_forward(const ParameterSet& params, const MlpSpec& spec, const Tensor& input) {
  spec.validate();
  if (!params.matches(spec)) throw std::invalid_argument("mlp_forward: parameters do not match spec");
  if (input.cols() != spec.input_width()) {
    throw std::invalid_argument("mlp_forward: input width " + std::to_string(input.cols()) +
                                " does not match spec input width " +
                                std::to_string(spec.input_width()));
  }
  const std::size_t batch = input.rows();
  std::vector<double> cur(input.data().begin(), input.data().end());
  std::vector<double> next;
  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    next.assign(batch * out, 0.0);
    const bool hidden = l + 1 < layers.size();
    const auto W = layers[l].weight.data();
    const auto b = layers[l].bias.data();
    for (std::size_t r = 0; r < batch; ++r) {
      const double* x = cur.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = W.data() + o * in;
        double s = 0.0;
        for (std::size_t k = 0; k < in; ++k) s += x[k] * w[k];
        s += b[o];
        next[r * out + o] = hidden ? activate(spec.activation, s) : s;
      }
    }
    cur.swap(next);
  }
  if (input.rank() == 1) return Tensor({spec.output_width()}, std::move(cur));
  return Tensor({batch, spec.output_width()}, std::move(cur));
}

std::vector<double> mlp_forward(const ParameterSet& params, const MlpSpec& spec,
                                std::span<const double> input) {
  Tensor in({input.size()}, std::vector<double>(input.begin(), input.end()));
  return mlp_forward(params, spec, in).values();
}

MlpVars bind_mlp(std::span<const Var> leaves) {
  if (leaves.size() % 2 != 0) throw std::invalid_argument("bind_mlp: odd number of leaves");
  MlpVars v;
  for (std::size_t i = 0; i < leaves.size(); i += 2) {
    v.weights.push_back(leaves[i]);
    v.biases.push_back(leaves[i + 1]);
  }
  return v;
}

Var mlp_apply(Graph& g, const MlpVars& vars, const MlpSpec& spec, Var input) {
  if (vars.weights.size() + 1 != spec.widths.size()) {
    throw std::invalid_argument("mlp_apply: layer count does not match spec");
  }
  Var h = input;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    h = g.add_row(g.matmul_bt(h, vars.weights[l]), vars.biases[l]);
    if (l + 1 < vars.weights.size()) {
      if (spec.activation == Activation::relu) h = g.relu(h);
      else if (spec.activation == Activation::tanh) h = g.tanh(h);
    }
  }
  return h;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw std::invalid_argument("softmax: expected a 1-D tensor");
  return Tensor::vector(softmax(logits.data()));
}

}  // namespace semi
