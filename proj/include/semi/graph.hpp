#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "semi/tensor.hpp"

namespace semi {

// Raised when an op produces NaN/Inf; names the first offending node.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op, std::size_t node);
  const std::string& op() const { return op_; }
  std::size_t node() const { return node_; }

 private:
  std::string op_;
  std::size_t node_;
};

struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape over a closed set of batched tensor ops. Values are
// computed eagerly; backward() walks the tape once in reverse.
class Graph {
 public:
  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target; zeros if the node was unreached.
  Tensor grad(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

  // a[n x k] * b[k x m]
  Var matmul(Var a, Var b);
  // a[n x k] * b[m x k]^T, the layout used for weight matrices stored [out x in]
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // adds a length-m row to every row of a[n x m]
  Var add_row(Var a, Var row);
  // repeats a length-m row n times
  Var broadcast_row(Var row, std::size_t n);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var minimum(Var a, Var b);
  // gradient passes only where lo < a < hi
  Var clamp(Var a, double lo, double hi);
  Var sum(Var a);
  Var mean(Var a);
  // per-row sum of a[n x m] -> [n]
  Var sum_rows(Var a);
  Var softmax_rows(Var a);
  // Row-wise log-softmax. Entries flagged in `exclude` (same size as a) are
  // left out of the normalizer, get output 0 and receive no gradient.
  Var log_softmax_rows(Var a, std::vector<std::uint8_t> exclude = {});
  // pairwise cosine similarities of rows: a[n x d], b[m x d] -> [n x m];
  // rows with norm < 1e-12 have similarity 0 with everything
  Var cosine(Var a, Var b);
  // stacks matrices with equal column counts vertically
  Var concat_rows(std::span<const Var> parts);
  // picks flat-indexed entries of a -> [k]
  Var gather(Var a, std::vector<std::size_t> indices);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char* op = "";
    std::vector<std::size_t> parents;
    std::function<void(Graph&, std::size_t)> back;
  };

  Var push(const char* op, Tensor value, std::vector<std::size_t> parents,
           std::function<void(Graph&, std::size_t)> back);
  Tensor& grad_ref(std::size_t id);
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

  std::vector<Node> nodes_;
};

}  // namespace semi
