#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "rahfl/tensor.hpp"

namespace rahfl::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  long id = 0;
  std::vector<NodePtr> parents;
  std::function<void(const Node&)> backprop;

  Tensor& grad_buffer() {
    if (!grad_alloc) {
      grad = Tensor(value.shape(), 0.0);
      grad_alloc = true;
    }
    return grad;
  }
};

inline long next_node_id() {
  static std::atomic<long> counter{0};
  return ++counter;
}

/// Handle to a node in the computation graph. Cheap to copy.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor v) { return make(std::move(v), false); }
  static Var leaf(Tensor v) { return make(std::move(v), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros if the node was never reached.
  Tensor grad() const {
    if (!node_->grad_alloc) return Tensor(node_->value.shape(), 0.0);
    return node_->grad;
  }

  double scalar() const {
    if (node_->value.size() != 1) throw std::logic_error("Var::scalar: not a scalar");
    return node_->value[0];
  }

  Node* raw() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

  /// Value-only copy with no graph history.
  Var detach() const { return constant(node_->value); }

  static Var wrap(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  static Var make(Tensor v, bool rg) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = rg;
    n->id = next_node_id();
    return wrap(std::move(n));
  }
  NodePtr node_;
};

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(const Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = next_node_id();
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.ptr());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var::wrap(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. Throws if the root is not a scalar.
inline void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: differentiated value must be a scalar");
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.raw()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  // Node ids increase with creation order, so descending id is a valid
  // topological order of the DAG.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  root.raw()->grad_buffer()[0] = 1.0;
  for (Node* n : order) {
    if (n->backprop && n->grad_alloc) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  ensure_same_shape(a.value(), b.value(), "ad::add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  ensure_same_shape(a.value(), b.value(), "ad::sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  ensure_same_shape(a.value(), b.value(), "ad::mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, s](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pa->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Var vexp(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  Node* pa = a.raw();
  auto selfval = out;
  return detail::make_op(std::move(out), {a}, [pa](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

/// log(max(x, floor)); zero gradient where the floor is active.
inline Var log_floored(const Var& a, double floor = 1e-12) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::log(v > floor ? v : floor);
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, floor](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pa->value[i] > floor) g[i] += self.grad[i] / pa->value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw std::invalid_argument("ad::matmul: dimension mismatch " + shape_string(A) + " * " +
                                shape_string(B));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A.at(i, l);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(l, j);
    }
  }
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb, m, k, n](const Node& self) {
    if (pa->requires_grad) {  // dA = G * B^T
      auto& gA = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad.at(i, j);
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < k; ++l) gA.at(i, l) += gv * pb->value.at(l, j);
        }
      }
    }
    if (pb->requires_grad) {  // dB = A^T * G
      auto& gB = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          const double av = pa->value.at(i, l);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gB.at(l, j) += av * self.grad.at(i, j);
        }
      }
    }
  });
}

/// a * b^T, for pairwise similarity matrices.
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    throw std::invalid_argument("ad::matmul_nt: dimension mismatch " + shape_string(A) + " * " +
                                shape_string(B) + "^T");
  }
  const std::size_t m = A.rows(), d = A.cols(), n = B.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += A.at(i, l) * B.at(j, l);
      out.at(i, j) = s;
    }
  }
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb, m, d, n](const Node& self) {
    if (pa->requires_grad) {  // dA = G * B
      auto& gA = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad.at(i, j);
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < d; ++l) gA.at(i, l) += gv * pb->value.at(j, l);
        }
      }
    }
    if (pb->requires_grad) {  // dB = G^T * A
      auto& gB = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = self.grad.at(i, j);
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < d; ++l) gB.at(j, l) += gv * pa->value.at(i, l);
        }
      }
    }
  });
}

/// Broadcast-add a length-n bias vector to every row of an m x n matrix.
inline Var add_rowvec(const Var& m, const Var& bias) {
  const Tensor& M = m.value();
  const Tensor& B = bias.value();
  if (M.rank() != 2 || B.size() != M.cols()) {
    throw std::invalid_argument("ad::add_rowvec: dimension mismatch");
  }
  Tensor out = M;
  for (std::size_t i = 0; i < M.rows(); ++i) {
    for (std::size_t j = 0; j < M.cols(); ++j) out.at(i, j) += B[j];
  }
  Node* pm = m.raw();
  Node* pb = bias.raw();
  return detail::make_op(std::move(out), {m, bias}, [pm, pb](const Node& self) {
    if (pm->requires_grad) {
      auto& g = pm->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      const std::size_t n = g.size();
      for (std::size_t i = 0; i < self.grad.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad.at(i, j);
      }
    }
  });
}

/// out(i, j) = m(i, j) - col(i, 0); broadcast a column over each row.
inline Var sub_colvec(const Var& m, const Var& col) {
  const Tensor& M = m.value();
  const Tensor& C = col.value();
  if (M.rank() != 2 || C.rank() != 2 || C.cols() != 1 || C.rows() != M.rows()) {
    throw std::invalid_argument("ad::sub_colvec: dimension mismatch");
  }
  Tensor out = M;
  for (std::size_t i = 0; i < M.rows(); ++i) {
    for (std::size_t j = 0; j < M.cols(); ++j) out.at(i, j) -= C.at(i, 0);
  }
  Node* pm = m.raw();
  Node* pc = col.raw();
  return detail::make_op(std::move(out), {m, col}, [pm, pc](const Node& self) {
    if (pm->requires_grad) {
      auto& g = pm->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pc->requires_grad) {
      auto& g = pc->grad_buffer();
      for (std::size_t i = 0; i < self.grad.rows(); ++i) {
        for (std::size_t j = 0; j < self.grad.cols(); ++j) g.at(i, 0) -= self.grad.at(i, j);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations
// ---------------------------------------------------------------------------

inline Var softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  Tensor out = A;
  const std::size_t r = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double den = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      den += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= den;
  }
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, r, c](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
      }
    }
  });
}

inline Var log_softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  Tensor out = A;
  const std::size_t r = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double den = 0.0;
    for (std::size_t j = 0; j < c; ++j) den += std::exp(out.at(i, j) - mx);
    const double lse = mx + std::log(den);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) -= lse;
  }
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, r, c](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += self.grad.at(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g.at(i, j) += self.grad.at(i, j) - std::exp(self.value.at(i, j)) * gsum;
      }
    }
  });
}

/// Row-wise x / sqrt(|x|^2 + eps^2); smooth at zero so finite differences agree.
inline Var l2_normalize_rows(const Var& a, double eps = 1e-12) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out = A;
  std::vector<double> inv_norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = eps * eps;
    for (std::size_t j = 0; j < c; ++j) ss += A.at(i, j) * A.at(i, j);
    inv_norms[i] = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= inv_norms[i];
  }
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, r, c, inv_norms](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;  // g . y
      for (std::size_t j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        g.at(i, j) += inv_norms[i] * (self.grad.at(i, j) - self.value.at(i, j) * dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and gathers
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Node* pa = a.raw();
  return detail::make_op(Tensor::scalar(s), {a}, [pa](const Node& self) {
    auto& g = pa->grad_buffer();
    for (auto& v : g.data()) v += self.grad[0];
  });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var row_sum(const Var& a) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A.at(i, j);
    out.at(i, 0) = s;
  }
  Node* pa = a.raw();
  return detail::make_op(std::move(out), {a}, [pa, r, c](const Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g.at(i, j) += self.grad.at(i, 0);
    }
  });
}

struct WeightedEntry {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// Scalar sum_e w_e * M[r_e, c_e]; the workhorse behind gathers.
inline Var weighted_entry_sum(const Var& a, std::vector<WeightedEntry> entries) {
  const Tensor& A = a.value();
  double s = 0.0;
  for (const auto& e : entries) {
    if (e.row >= A.rows() || e.col >= A.cols()) {
      throw std::out_of_range("ad::weighted_entry_sum: entry out of range");
    }
    s += e.weight * A.at(e.row, e.col);
  }
  Node* pa = a.raw();
  return detail::make_op(Tensor::scalar(s), {a},
                         [pa, entries = std::move(entries)](const Node& self) {
                           auto& g = pa->grad_buffer();
                           for (const auto& e : entries) {
                             g.at(e.row, e.col) += e.weight * self.grad[0];
                           }
                         });
}

inline Var concat_rows(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) throw std::invalid_argument("ad::concat_rows: column mismatch");
  const std::size_t ra = A.rows(), rb = B.rows(), c = A.cols();
  Tensor out({ra + rb, c});
  for (std::size_t i = 0; i < ra; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = A.at(i, j);
  for (std::size_t i = 0; i < rb; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(ra + i, j) = B.at(i, j);
  Node* pa = a.raw();
  Node* pb = b.raw();
  return detail::make_op(std::move(out), {a, b}, [pa, pb, ra, rb, c](const Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < ra; ++i)
        for (std::size_t j = 0; j < c; ++j) g.at(i, j) += self.grad.at(i, j);
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < rb; ++i)
        for (std::size_t j = 0; j < c; ++j) g.at(i, j) += self.grad.at(ra + i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient estimate, one coordinate at a time.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& loss_fn, std::vector<double> params,
    double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double up = loss_fn(params);
    params[i] = orig - h;
    const double dn = loss_fn(params);
    params[i] = orig;
    grad[i] = (up - dn) / (2.0 * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_rel_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace rahfl::ad
