#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Values are computed eagerly; when the tape is recording, each
// op also stores a closure that pushes its output gradient to its inputs.
// The scalar type is a template parameter so gradients can be checked in
// extended precision.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace tndp::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Matrix<T> value) { return push(std::move(value), nullptr); }

  /// Leaf bound to externally owned storage. Backward adds this leaf's
  /// gradient into `*grad` when non-null.
  Var parameter(const Matrix<T>& value, Matrix<T>* grad) {
    Node node;
    node.external = &value;
    node.param_grad = recording_ ? grad : nullptr;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix<T>& value(Var v) const {
    const Node& node = nodes_[static_cast<std::size_t>(v.id)];
    return node.external != nullptr ? *node.external : node.value;
  }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Matrix<T>& grad(Var v) {
    Node& node = nodes_[static_cast<std::size_t>(v.id)];
    if (node.grad.size() == 0) {
      const auto& val = value(v);
      node.grad = Matrix<T>::Zero(val.rows(), val.cols());
    }
    return node.grad;
  }

  using Backward = std::function<void(Tape&, Var self)>;

  Var push(Matrix<T> value, Backward backward) {
    Node node;
    node.value = std::move(value);
    if (recording_) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(output)/d(output) = seed for a 1x1 output and propagates.
  void backward(Var output, T seed = T(1)) {
    if (!recording_) throw std::logic_error("backward on a non-recording tape");
    if (value(output).size() != 1) throw std::logic_error("backward needs a scalar output");
    grad(output)(0, 0) += seed;
    for (int id = output.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (node.grad.size() == 0) continue;
      if (node.backward) node.backward(*this, Var{id});
      if (node.param_grad != nullptr) *node.param_grad += node.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Matrix<T> grad;
    Backward backward;
    Matrix<T>* param_grad = nullptr;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  Matrix<T> out = t.value(a) * t.value(b);
  return t.push(std::move(out), [a, b](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    tp.grad(a).noalias() += g * tp.value(b).transpose();
    tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  Matrix<T> out = t.value(a) + t.value(b);
  return t.push(std::move(out), [a, b](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    tp.grad(a) += g;
    tp.grad(b) += g;
  });
}

/// Adds the 1 x d row `row` to every row of `a`.
template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
  Matrix<T> out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.push(std::move(out), [a, row](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    tp.grad(a) += g;
    tp.grad(row) += g.colwise().sum();
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T factor) {
  Matrix<T> out = t.value(a) * factor;
  return t.push(std::move(out), [a, factor](Tape<T>& tp, Var self) {
    tp.grad(a) += tp.grad(self) * factor;
  });
}

template <typename T>
Var leaky_relu(Tape<T>& t, Var a, T slope) {
  Matrix<T> out = t.value(a).unaryExpr([slope](T x) { return x > T(0) ? x : slope * x; });
  return t.push(std::move(out), [a, slope](Tape<T>& tp, Var self) {
    const Matrix<T> mask =
        tp.value(a).unaryExpr([slope](T x) { return x > T(0) ? T(1) : slope; });
    tp.grad(a) += tp.grad(self).cwiseProduct(mask);
  });
}

template <typename T>
Var relu(Tape<T>& t, Var a) {
  return leaky_relu(t, a, T(0));
}

/// z[i*n + j] = p[i] + q[j] + e[i*n + j] for n x d inputs p, q and n^2 x d e.
template <typename T>
Var pair_sum(Tape<T>& t, Var p, Var q, Var e) {
  const auto& P = t.value(p);
  const auto& Q = t.value(q);
  const Eigen::Index n = P.rows();
  Matrix<T> out = t.value(e);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) += P.row(i) + Q.row(j);
  }
  return t.push(std::move(out), [p, q, e, n](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    auto& gp = tp.grad(p);
    auto& gq = tp.grad(q);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        gp.row(i) += g.row(i * n + j);
        gq.row(j) += g.row(i * n + j);
      }
    }
    tp.grad(e) += g;
  });
}

/// Multi-head attention aggregation over a fully connected graph.
/// `logits` is n^2 x H (row i*n + j scores neighbour j for node i), `values`
/// is n x d with d divisible by H; head h reads and writes columns
/// [h*d/H, (h+1)*d/H). Softmax runs over j for each (i, h).
template <typename T>
Var attend(Tape<T>& t, Var logits, Var values, int heads) {
  const auto& L = t.value(logits);
  const auto& V = t.value(values);
  const Eigen::Index n = V.rows();
  const Eigen::Index d = V.cols();
  const Eigen::Index dh = d / heads;
  if (dh * heads != d || L.rows() != n * n || L.cols() != heads) {
    throw std::invalid_argument("attend: shape mismatch");
  }
  Matrix<T> weights(n * n, heads);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      auto block = L.block(i * n, h, n, 1);
      const T m = block.maxCoeff();
      T z = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        weights(i * n + j, h) = std::exp(block(j, 0) - m);
        z += weights(i * n + j, h);
      }
      for (Eigen::Index j = 0; j < n; ++j) weights(i * n + j, h) /= z;
    }
  }
  Matrix<T> out = Matrix<T>::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      for (Eigen::Index j = 0; j < n; ++j) {
        out.block(i, h * dh, 1, dh) += weights(i * n + j, h) * V.block(j, h * dh, 1, dh);
      }
    }
  }
  return t.push(std::move(out), [logits, values, heads, n, dh,
                                 weights = std::move(weights)](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    const auto& Vv = tp.value(values);
    auto& gl = tp.grad(logits);
    auto& gv = tp.grad(values);
    std::vector<T> ga(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int h = 0; h < heads; ++h) {
        T dot = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
          const T w = weights(i * n + j, h);
          gv.block(j, h * dh, 1, dh) += w * g.block(i, h * dh, 1, dh);
          ga[static_cast<std::size_t>(j)] =
              (g.block(i, h * dh, 1, dh).array() * Vv.block(j, h * dh, 1, dh).array()).sum();
          dot += w * ga[static_cast<std::size_t>(j)];
        }
        for (Eigen::Index j = 0; j < n; ++j) {
          gl(i * n + j, h) += weights(i * n + j, h) * (ga[static_cast<std::size_t>(j)] - dot);
        }
      }
    }
  });
}

/// Per-row standardisation without affine parameters.
template <typename T>
Var layer_norm(Tape<T>& t, Var a, T eps = T(1e-5)) {
  const auto& X = t.value(a);
  const Eigen::Index rows = X.rows();
  const Eigen::Index cols = X.cols();
  Matrix<T> out(rows, cols);
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = X.row(r).mean();
    const T var = (X.row(r).array() - mean).square().mean();
    const T s = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = s;
    out.row(r) = (X.row(r).array() - mean) * s;
  }
  Matrix<T> normed = out;
  return t.push(std::move(out), [a, cols, inv_std = std::move(inv_std),
                                 normed = std::move(normed)](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T mean_g = g.row(r).mean();
      const T mean_gy = (g.row(r).array() * normed.row(r).array()).sum() / T(cols);
      ga.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                           (g.row(r).array() - mean_g - normed.row(r).array() * mean_gy);
    }
  });
}

/// 1 x d mean over rows.
template <typename T>
Var mean_rows(Tape<T>& t, Var a) {
  const Eigen::Index rows = t.value(a).rows();
  Matrix<T> out = t.value(a).colwise().mean();
  return t.push(std::move(out), [a, rows](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    tp.grad(a).rowwise() += g.row(0) / T(rows);
  });
}

/// Row k of the output is the mean of rows groups[k] of `a` (zero when the
/// group is empty).
template <typename T>
Var group_mean_rows(Tape<T>& t, Var a, std::vector<std::vector<int>> groups) {
  const auto& A = t.value(a);
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(groups.size()), A.cols());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) continue;
    for (int r : groups[k]) out.row(static_cast<Eigen::Index>(k)) += A.row(r);
    out.row(static_cast<Eigen::Index>(k)) /= T(groups[k].size());
  }
  return t.push(std::move(out), [a, groups = std::move(groups)](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      if (groups[k].empty()) continue;
      const T w = T(1) / T(groups[k].size());
      for (int r : groups[k]) ga.row(r) += w * g.row(static_cast<Eigen::Index>(k));
    }
  });
}

template <typename T>
Var gather_rows(Tape<T>& t, Var a, std::vector<int> rows) {
  std::vector<std::vector<int>> groups;
  groups.reserve(rows.size());
  for (int r : rows) groups.push_back({r});
  return group_mean_rows(t, a, std::move(groups));
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  const Eigen::Index rows = t.value(parts.front()).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.block(0, c, rows, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  return t.push(std::move(out), [parts](Tape<T>& tp, Var self) {
    const Matrix<T> g = tp.grad(self);
    Eigen::Index col = 0;
    for (Var p : parts) {
      const Eigen::Index w = tp.value(p).cols();
      tp.grad(p) += g.block(0, col, g.rows(), w);
      col += w;
    }
  });
}

/// log softmax(logits)[index] for a k x 1 column of logits.
template <typename T>
Var log_softmax_pick(Tape<T>& t, Var logits, std::size_t index) {
  const auto& L = t.value(logits);
  const T m = L.maxCoeff();
  const T lse = m + std::log((L.array() - m).exp().sum());
  Matrix<T> out(1, 1);
  out(0, 0) = L(static_cast<Eigen::Index>(index), 0) - lse;
  return t.push(std::move(out), [logits, index, lse](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)(0, 0);
    auto& gl = tp.grad(logits);
    const auto& Lv = tp.value(logits);
    for (Eigen::Index k = 0; k < Lv.rows(); ++k) gl(k, 0) -= g * std::exp(Lv(k, 0) - lse);
    gl(static_cast<Eigen::Index>(index), 0) += g;
  });
}

/// log sigmoid(sign * x) for a 1 x 1 input.
template <typename T>
Var log_sigmoid(Tape<T>& t, Var x, T sign) {
  const T z = sign * t.value(x)(0, 0);
  Matrix<T> out(1, 1);
  // log(sigmoid(z)) = -softplus(-z)
  out(0, 0) = z >= T(0) ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  return t.push(std::move(out), [x, sign, z](Tape<T>& tp, Var self) {
    const T sig_neg = T(1) / (T(1) + std::exp(z));  // sigmoid(-z)
    tp.grad(x)(0, 0) += tp.grad(self)(0, 0) * sign * sig_neg;
  });
}

/// Sum of the given 1 x 1 values.
template <typename T>
Var sum_scalars(Tape<T>& t, const std::vector<Var>& parts) {
  Matrix<T> out = Matrix<T>::Zero(1, 1);
  for (Var p : parts) out(0, 0) += t.value(p)(0, 0);
  return t.push(std::move(out), [parts](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)(0, 0);
    for (Var p : parts) tp.grad(p)(0, 0) += g;
  });
}

/// (a - target)^2 for a 1 x 1 input.
template <typename T>
Var squared_error(Tape<T>& t, Var a, T target) {
  const T diff = t.value(a)(0, 0) - target;
  Matrix<T> out(1, 1);
  out(0, 0) = diff * diff;
  return t.push(std::move(out), [a, diff](Tape<T>& tp, Var self) {
    tp.grad(a)(0, 0) += tp.grad(self)(0, 0) * T(2) * diff;
  });
}

}  // namespace tndp::ad
