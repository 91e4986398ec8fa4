#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "semi/graph.hpp"
#include "semi/mlp.hpp"
#include "semi/tensor.hpp"

namespace semi {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState fresh(std::size_t parameter_count, double lr);
};

// Bias-corrected Adam update applied in place.
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state);
void adam_step(ParameterSet& params, std::span<const double> grad, AdamState& state);
void adam_step(std::vector<Tensor>& params, std::span<const double> grad, AdamState& state);

// Rescales grad so its L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

// A scalar loss built on a Graph from parameter leaves given in order.
using LossFn = std::function<Var(Graph&, std::span<const Var>)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

ValueAndGrad value_and_grad(const LossFn& loss, std::span<const Tensor> params);
double evaluate_loss(const LossFn& loss, std::span<const Tensor> params);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences against value_and_grad; relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check_report(const LossFn& loss, std::span<const Tensor> params, double eps);
double grad_check(const LossFn& loss, std::span<const Tensor> params, double eps);

}  // namespace semi
