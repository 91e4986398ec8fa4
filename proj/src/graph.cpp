#include "semi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semi {

namespace {

constexpr double kNormFloor = 1e-12;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                                " vs " + b.shape_string());
  }
}

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

Tensor scalar_tensor(double x) { return Tensor({1}, std::vector<double>{x}); }

}  // namespace

NonFiniteError::NonFiniteError(std::string op, std::size_t node)
    : std::runtime_error("non-finite value produced by op '" + op + "' at node " +
                         std::to_string(node)),
      op_(std::move(op)),
      node_(node) {}

Var Graph::push(const char* op, Tensor value, std::vector<std::size_t> parents,
                std::function<void(Graph&, std::size_t)> back) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) throw NonFiniteError(op, id);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{id};
}

Var Graph::constant(Tensor value) { return push("constant", std::move(value), {}, nullptr); }

Var Graph::parameter(Tensor value) {
  Var v = push("parameter", std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Tensor& Graph::grad_ref(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = like(n.value);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.size() != n.value.size()) return like(n.value);
  return n.grad;
}

double Graph::scalar(Var v) const {
  const auto& t = value(v);
  if (t.size() != 1) throw std::invalid_argument("scalar(): tensor has " + t.shape_string());
  return t[0];
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward target must be a scalar, got " +
                                value(loss).shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.requires_grad || !n.back || n.grad.size() == 0) continue;
    n.back(*this, id);
  }
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + A.shape_string() + " * " +
                                B.shape_string());
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  }
  return push("matmul", std::move(out), {a.id, b.id}, [a, b, n, k, m](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    if (g.needs(a.id)) {
      const Tensor& B = g.value(b);
      Tensor& dA = g.grad_ref(a.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += G.at(i, j) * B.at(p, j);
          dA[i * k + p] += s;
        }
    }
    if (g.needs(b.id)) {
      const Tensor& A = g.value(a);
      Tensor& dB = g.grad_ref(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          for (std::size_t j = 0; j < m; ++j) dB[p * m + j] += aip * G.at(i, j);
        }
    }
  });
}

Var Graph::matmul_bt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  if (B.cols() != k) {
    throw std::invalid_argument("matmul_bt: inner dimensions differ " + A.shape_string() +
                                " * (" + B.shape_string() + ")^T");
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const auto ai = A.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto bj = B.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      out.at(i, j) = s;
    }
  }
  return push("matmul_bt", std::move(out), {a.id, b.id},
              [a, b, n, k, m](Graph& g, std::size_t self) {
                const Tensor& G = g.nodes_[self].grad;
                if (g.needs(a.id)) {
                  const Tensor& B = g.value(b);
                  Tensor& dA = g.grad_ref(a.id);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                      const double gij = G.at(i, j);
                      if (gij == 0.0) continue;
                      const auto bj = B.row(j);
                      for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += gij * bj[p];
                    }
                }
                if (g.needs(b.id)) {
                  const Tensor& A = g.value(a);
                  Tensor& dB = g.grad_ref(b.id);
                  for (std::size_t i = 0; i < n; ++i) {
                    const auto ai = A.row(i);
                    for (std::size_t j = 0; j < m; ++j) {
                      const double gij = G.at(i, j);
                      if (gij == 0.0) continue;
                      for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += gij * ai[p];
                    }
                  }
                }
              });
}

Var Graph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return push("add", std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    for (auto id : {a.id, b.id}) {
      if (!g.needs(id)) continue;
      Tensor& d = g.grad_ref(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return push("sub", std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    if (g.needs(a.id)) {
      Tensor& d = g.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (g.needs(b.id)) {
      Tensor& d = g.grad_ref(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= G[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return push("mul", std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    if (g.needs(a.id)) {
      const Tensor& B = g.value(b);
      Tensor& d = g.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * B[i];
    }
    if (g.needs(b.id)) {
      const Tensor& A = g.value(a);
      Tensor& d = g.grad_ref(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * A[i];
    }
  });
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.size() != A.cols()) {
    throw std::invalid_argument("add_row: row of size " + std::to_string(R.size()) +
                                " cannot broadcast over " + A.shape_string());
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += R[j];
  return push("add_row", std::move(out), {a.id, row.id}, [a, row, n, m](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    if (g.needs(a.id)) {
      Tensor& d = g.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
    }
    if (g.needs(row.id)) {
      Tensor& d = g.grad_ref(row.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) d[j] += G[i * m + j];
    }
  });
}

Var Graph::broadcast_row(Var row, std::size_t n) {
  const Tensor& R = value(row);
  const std::size_t m = R.size();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = R[j];
  return push("broadcast_row", std::move(out), {row.id}, [row, n, m](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    Tensor& d = g.grad_ref(row.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) d[j] += G[i * m + j];
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (auto& x : out.data()) x *= s;
  return push("scale", std::move(out), {a.id}, [a, s](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * G[i];
  });
}

Var Graph::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (auto& x : out.data()) x += s;
  return push("add_scalar", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  return push("relu", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& A = g.value(a);
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (A[i] > 0.0) d[i] += G[i];
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = std::tanh(x);
  return push("tanh", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& Y = g.nodes_[self].value;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * (1.0 - Y[i] * Y[i]);
  });
}

Var Graph::exp(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = std::exp(x);
  return push("exp", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& Y = g.nodes_[self].value;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * Y[i];
  });
}

Var Graph::log(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = std::log(x);
  return push("log", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& A = g.value(a);
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] / A[i];
  });
}

Var Graph::square(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = x * x;
  return push("square", std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& A = g.value(a);
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * A[i] * G[i];
  });
}

Var Graph::minimum(Var a, Var b) {
  require_same_shape(value(a), value(b), "minimum");
  Tensor out = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], B[i]);
  return push("minimum", std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    // ties route the gradient to the first argument
    if (g.needs(a.id)) {
      Tensor& d = g.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i)
        if (A[i] <= B[i]) d[i] += G[i];
    }
    if (g.needs(b.id)) {
      Tensor& d = g.grad_ref(b.id);
      for (std::size_t i = 0; i < d.size(); ++i)
        if (B[i] < A[i]) d[i] += G[i];
    }
  });
}

Var Graph::clamp(Var a, double lo, double hi) {
  Tensor out = value(a);
  for (auto& x : out.data()) x = std::clamp(x, lo, hi);
  return push("clamp", std::move(out), {a.id}, [a, lo, hi](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& A = g.value(a);
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (A[i] > lo && A[i] < hi) d[i] += G[i];
  });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double x : value(a).data()) s += x;
  return push("sum", scalar_tensor(s), {a.id}, [a](Graph& g, std::size_t self) {
    const double G = g.nodes_[self].grad[0];
    Tensor& d = g.grad_ref(a.id);
    for (auto& x : d.data()) x += G;
  });
}

Var Graph::mean(Var a) {
  const auto n = static_cast<double>(value(a).size());
  double s = 0.0;
  for (double x : value(a).data()) s += x;
  return push("mean", scalar_tensor(s / n), {a.id}, [a, n](Graph& g, std::size_t self) {
    const double G = g.nodes_[self].grad[0] / n;
    Tensor& d = g.grad_ref(a.id);
    for (auto& x : d.data()) x += G;
  });
}

Var Graph::sum_rows(Var a) {
  const Tensor& A = value(a);
  const std::size_t n = A.rows(), m = A.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += A.at(i, j);
    out[i] = s;
  }
  return push("sum_rows", std::move(out), {a.id}, [a, n, m](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) d[i * m + j] += G[i];
  });
}

Var Graph::softmax_rows(Var a) {
  const Tensor& A = value(a);
  const std::size_t n = A.rows(), m = A.cols();
  Tensor out = A;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (auto& x : r) {
      x = std::exp(x - mx);
      z += x;
    }
    for (auto& x : r) x /= z;
  }
  return push("softmax_rows", std::move(out), {a.id}, [a, n, m](Graph& g, std::size_t self) {
    const Tensor& G = g.nodes_[self].grad;
    const Tensor& Y = g.nodes_[self].value;
    Tensor& d = g.grad_ref(a.id);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += G.at(i, j) * Y.at(i, j);
      for (std::size_t j = 0; j < m; ++j) d[i * m + j] += Y.at(i, j) * (G.at(i, j) - dot);
    }
  });
}

Var Graph::log_softmax_rows(Var a, std::vector<std::uint8_t> exclude) {
  const Tensor& A = value(a);
  const std::size_t n = A.rows(), m = A.cols();
  if (!exclude.empty() && exclude.size() != A.size()) {
    throw std::invalid_argument("log_softmax_rows: exclusion mask size mismatch");
  }
  auto skip = [&exclude](std::size_t idx) { return !exclude.empty() && exclude[idx]; };
  Tensor out = A;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (!skip(i * m + j)) mx = std::max(mx, A.at(i, j));
    if (!std::isfinite(mx)) throw std::invalid_argument("log_softmax_rows: row fully excluded");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (!skip(i * m + j)) z += std::exp(A.at(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = skip(i * m + j) ? 0.0 : A.at(i, j) - lse;
  }
  return push("log_softmax_rows", std::move(out), {a.id},
              [a, n, m, exclude = std::move(exclude)](Graph& g, std::size_t self) {
                auto skip = [&exclude](std::size_t idx) { return !exclude.empty() && exclude[idx]; };
                const Tensor& G = g.nodes_[self].grad;
                const Tensor& Y = g.nodes_[self].value;
                Tensor& d = g.grad_ref(a.id);
                for (std::size_t i = 0; i < n; ++i) {
                  double gsum = 0.0;
                  for (std::size_t j = 0; j < m; ++j)
                    if (!skip(i * m + j)) gsum += G.at(i, j);
                  for (std::size_t j = 0; j < m; ++j) {
                    if (skip(i * m + j)) continue;
                    d[i * m + j] += G.at(i, j) - std::exp(Y.at(i, j)) * gsum;
                  }
                }
              });
}

Var Graph::cosine(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t n = A.rows(), m = B.rows(), k = A.cols();
  if (B.cols() != k) {
    throw std::invalid_argument("cosine: widths differ " + A.shape_string() + " vs " +
                                B.shape_string());
  }
  auto norms = [k](const Tensor& T) {
    std::vector<double> out(T.rows());
    for (std::size_t i = 0; i < T.rows(); ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += T.at(i, p) * T.at(i, p);
      out[i] = std::sqrt(s);
    }
    return out;
  };
  auto na = norms(A);
  auto nb = norms(B);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    if (na[i] < kNormFloor) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (nb[j] < kNormFloor) continue;
      double dot = 0.0;
      for (std::size_t p = 0; p < k; ++p) dot += A.at(i, p) * B.at(j, p);
      out.at(i, j) = dot / (na[i] * nb[j]);
    }
  }
  return push("cosine", std::move(out), {a.id, b.id},
              [a, b, n, m, k, na = std::move(na), nb = std::move(nb)](Graph& g, std::size_t self) {
                const Tensor& G = g.nodes_[self].grad;
                const Tensor& C = g.nodes_[self].value;
                const Tensor& A = g.value(a);
                const Tensor& B = g.value(b);
                // d cos(x,y)/dx = y/(|x||y|) - cos * x/|x|^2
                const bool need_a = g.needs(a.id), need_b = g.needs(b.id);
                for (std::size_t i = 0; i < n; ++i) {
                  if (na[i] < kNormFloor) continue;
                  for (std::size_t j = 0; j < m; ++j) {
                    if (nb[j] < kNormFloor) continue;
                    const double gij = G.at(i, j);
                    if (gij == 0.0) continue;
                    const double c = C.at(i, j);
                    const double inv = 1.0 / (na[i] * nb[j]);
                    if (need_a) {
                      Tensor& dA = g.grad_ref(a.id);
                      const double ca = c / (na[i] * na[i]);
                      for (std::size_t p = 0; p < k; ++p)
                        dA[i * k + p] += gij * (B.at(j, p) * inv - ca * A.at(i, p));
                    }
                    if (need_b) {
                      Tensor& dB = g.grad_ref(b.id);
                      const double cb = c / (nb[j] * nb[j]);
                      for (std::size_t p = 0; p < k; ++p)
                        dB[j * k + p] += gij * (A.at(i, p) * inv - cb * B.at(j, p));
                    }
                  }
                }
              });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t m = value(parts[0]).cols();
  std::size_t rows = 0;
  for (auto p : parts) {
    if (value(p).cols() != m) throw std::invalid_argument("concat_rows: column counts differ");
    rows += value(p).rows();
  }
  std::vector<double> data;
  data.reserve(rows * m);
  std::vector<std::size_t> ids;
  for (auto p : parts) {
    data.insert(data.end(), value(p).data().begin(), value(p).data().end());
    ids.push_back(p.id);
  }
  return push("concat_rows", Tensor({rows, m}, std::move(data)), ids,
              [ids](Graph& g, std::size_t self) {
                const Tensor& G = g.nodes_[self].grad;
                std::size_t offset = 0;
                for (auto id : ids) {
                  const std::size_t n = g.nodes_[id].value.size();
                  if (g.needs(id)) {
                    Tensor& d = g.grad_ref(id);
                    for (std::size_t i = 0; i < n; ++i) d[i] += G[offset + i];
                  }
                  offset += n;
                }
              });
}

Var Graph::gather(Var a, std::vector<std::size_t> indices) {
  const Tensor& A = value(a);
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= A.size()) throw std::out_of_range("gather: index out of range");
    out[i] = A[indices[i]];
  }
  return push("gather", std::move(out), {a.id},
              [a, indices = std::move(indices)](Graph& g, std::size_t self) {
                const Tensor& G = g.nodes_[self].grad;
                Tensor& d = g.grad_ref(a.id);
                for (std::size_t i = 0; i < indices.size(); ++i) d[indices[i]] += G[i];
              });
}

}  // namespace semi
