#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semi/graph.hpp"
#include "semi/tensor.hpp"

namespace semi {

enum class Activation { relu, tanh, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Layer widths, input first. The activation applies to hidden layers only;
// the output layer is always linear.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;

  void validate() const;
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t parameter_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct Layer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Weights and biases of one MLP, flattened layer by layer as weight then bias.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  static ParameterSet zeros(const MlpSpec& spec);
  // uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases
  static ParameterSet glorot(const MlpSpec& spec, std::mt19937_64& rng);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  std::vector<Tensor> tensors() const;
  void assign(std::span<const Tensor> tensors);

  bool matches(const MlpSpec& spec) const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<Layer> layers_;
};

// Plain forward pass. `input` is a single vector or a [batch x in] matrix.
Tensor mlp_forward(const ParameterSet& params, const MlpSpec& spec, const Tensor& input);
// Single-vector convenience overload.
std::vector<double> mlp_forward(const ParameterSet& params, const MlpSpec& spec,
                                std::span<const double> input);

// Leaves for one MLP inside a Graph, in ParameterSet tensor order.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars bind_mlp(std::span<const Var> leaves);
Var mlp_apply(Graph& g, const MlpVars& vars, const MlpSpec& spec, Var input);

Tensor softmax(const Tensor& logits);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace semi
