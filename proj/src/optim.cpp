#include "semi/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace semi {

AdamState AdamState::fresh(std::size_t parameter_count, double lr) {
  AdamState s;
  s.m.assign(parameter_count, 0.0);
  s.v.assign(parameter_count, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient length " + std::to_string(grad.size()) +
                                " != parameter count " + std::to_string(params.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state length does not match parameters");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

void adam_step(ParameterSet& params, std::span<const double> grad, AdamState& state) {
  auto flat = params.flatten();
  adam_step(std::span<double>(flat), grad, state);
  params.unflatten(flat);
}

void adam_step(std::vector<Tensor>& params, std::span<const double> grad, AdamState& state) {
  auto flat = flatten(params);
  adam_step(std::span<double>(flat), grad, state);
  unflatten(flat, params);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grad) g *= s;
  }
  return norm;
}

namespace {

std::vector<Var> make_leaves(Graph& g, std::span<const Tensor> params, bool trainable) {
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& t : params) leaves.push_back(trainable ? g.parameter(t) : g.constant(t));
  return leaves;
}

}  // namespace

ValueAndGrad value_and_grad(const LossFn& loss, std::span<const Tensor> params) {
  Graph g;
  auto leaves = make_leaves(g, params, true);
  Var out = loss(g, leaves);
  ValueAndGrad r;
  r.value = g.scalar(out);
  g.backward(out);
  r.grad.reserve(total_size(params));
  for (auto leaf : leaves) {
    const Tensor gr = g.grad(leaf);
    r.grad.insert(r.grad.end(), gr.data().begin(), gr.data().end());
  }
  return r;
}

double evaluate_loss(const LossFn& loss, std::span<const Tensor> params) {
  Graph g;
  auto leaves = make_leaves(g, params, false);
  return g.scalar(loss(g, leaves));
}

GradCheckReport grad_check_report(const LossFn& loss, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  const auto analytic = value_and_grad(loss, params).grad;
  std::vector<Tensor> work(params.begin(), params.end());
  GradCheckReport rep;
  std::size_t flat = 0;
  for (auto& t : work) {
    for (std::size_t i = 0; i < t.size(); ++i, ++flat) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = evaluate_loss(loss, work);
      t[i] = orig - eps;
      const double down = evaluate_loss(loss, work);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[flat]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[flat] - numeric) / denom;
      if (flat == 0 || rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_index = flat;
        rep.analytic = analytic[flat];
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

double grad_check(const LossFn& loss, std::span<const Tensor> params, double eps) {
  return grad_check_report(loss, params, eps).max_rel_error;
}

}  // namespace semi
