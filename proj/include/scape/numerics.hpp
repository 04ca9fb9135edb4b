#pragma once

// Dense 2-D tensors with reverse-mode differentiation, the Adam optimizer,
// a central-finite-difference gradient checker, and the binary checkpoint
// format shared by every learnable module.
//
// Conventions:
//   - every Tensor is rows x cols; vectors are 1 x n rows, scalars 1 x 1
//   - all math in 64-bit floats
//   - every primitive validates shapes and rejects non-finite outputs

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scape/common.hpp"

namespace scape {

// =========================================================================
// Tensor
// =========================================================================

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), data(std::move(v)) {
    if (data.size() != rows * cols) throw ShapeError("tensor data does not match extents");
  }

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(1, n, std::move(v));
  }
  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }

  static Tensor filled(std::size_t r, std::size_t c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  // Glorot-style uniform init, deterministic given the rng state
  static Tensor glorot(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t(r, c);
    const double bound = std::sqrt(6.0 / static_cast<double>(r + c));
    for (double& x : t.data) x = rng.uniform(-bound, bound);
    return t;
  }

  std::size_t size() const { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

// plain c = a * b, used by both the tape and value-only code paths
inline Tensor matmul_value(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Tensor c(a.rows, b.cols);
  const std::size_t m = a.rows, k = a.cols, n = b.cols;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * k;
    double* crow = c.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Tensor transpose_value(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// =========================================================================
// Named parameter store
// =========================================================================

// std::map keeps iteration order deterministic, which the seeded init,
// Adam updates, and checkpoint bytes all rely on.
using ParamStore = std::map<std::string, Tensor>;

inline std::size_t param_count(const ParamStore& store) {
  std::size_t n = 0;
  for (const auto& [name, t] : store) n += t.size();
  return n;
}

// =========================================================================
// Reverse-mode tape
// =========================================================================

class Tape {
 public:
  using Id = std::uint32_t;

  Id input(Tensor value, bool trainable) {
    return push(std::move(value), trainable, {}, nullptr);
  }
  Id constant(Tensor value) { return input(std::move(value), false); }
  Id constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& val(Id id) const { return nodes_[id].value; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

  // ---- primitives -------------------------------------------------------

  Id matmul(Id a, Id b) {
    Tensor out = matmul_value(val(a), val(b));
    return push(std::move(out), false, {a, b}, [this](Node& n) {
      const Id a = n.parents[0], b = n.parents[1];
      if (nodes_[a].needs_grad) accumulate(a, matmul_value(n.grad, transpose_value(val(b))));
      if (nodes_[b].needs_grad) accumulate(b, matmul_value(transpose_value(val(a)), n.grad));
    });
  }

  Id transpose(Id a) {
    return push(transpose_value(val(a)), false, {a}, [this](Node& n) {
      accumulate(n.parents[0], transpose_value(n.grad));
    });
  }

  // add: same shape, or b a 1 x cols row that broadcasts over a's rows
  Id add(Id a, Id b) { return add_like(a, b, +1.0); }
  Id sub(Id a, Id b) { return add_like(a, b, -1.0); }

  // elementwise product; b may be a broadcast 1 x cols row
  Id mul(Id a, Id b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    const bool bcast = bv.rows == 1 && av.rows != 1 && bv.cols == av.cols;
    if (!bcast && !av.same_shape(bv))
      throw ShapeError("mul: " + shape_str(av) + " vs " + shape_str(bv));
    Tensor out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t j = 0; j < av.cols; ++j)
        out.at(i, j) = av.at(i, j) * (bcast ? bv.at(0, j) : bv.at(i, j));
    return push(std::move(out), false, {a, b}, [this, bcast](Node& n) {
      const Id a = n.parents[0], b = n.parents[1];
      const Tensor& av = val(a);
      const Tensor& bv = val(b);
      if (nodes_[a].needs_grad) {
        Tensor ga(av.rows, av.cols);
        for (std::size_t i = 0; i < av.rows; ++i)
          for (std::size_t j = 0; j < av.cols; ++j)
            ga.at(i, j) = n.grad.at(i, j) * (bcast ? bv.at(0, j) : bv.at(i, j));
        accumulate(a, ga);
      }
      if (nodes_[b].needs_grad) {
        Tensor gb(bv.rows, bv.cols);
        for (std::size_t i = 0; i < av.rows; ++i)
          for (std::size_t j = 0; j < av.cols; ++j)
            gb.at(bcast ? 0 : i, j) += n.grad.at(i, j) * av.at(i, j);
        accumulate(b, gb);
      }
    });
  }

  Id scale(Id a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    return push(std::move(out), false, {a}, [this, c](Node& n) {
      Tensor g = n.grad;
      for (double& v : g.data) v *= c;
      accumulate(n.parents[0], g);
    });
  }

  Id sigmoid(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = stable_sigmoid(v);
    Id id = push(std::move(out), false, {a}, [this](Node& n) {
      Tensor g(n.value.rows, n.value.cols);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double s = n.value.data[i];
        g.data[i] = n.grad.data[i] * s * (1.0 - s);
      }
      accumulate(n.parents[0], g);
    });
    return id;
  }

  Id tanh(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::tanh(v);
    return push(std::move(out), false, {a}, [this](Node& n) {
      Tensor g(n.value.rows, n.value.cols);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double t = n.value.data[i];
        g.data[i] = n.grad.data[i] * (1.0 - t * t);
      }
      accumulate(n.parents[0], g);
    });
  }

  Id relu(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), false, {a}, [this](Node& n) {
      const Tensor& in = val(n.parents[0]);
      Tensor g(in.rows, in.cols);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = in.data[i] > 0.0 ? n.grad.data[i] : 0.0;
      accumulate(n.parents[0], g);
    });
  }

  // row-wise softmax; rows sum to 1 within 1e-12
  Id softmax(Id a) {
    const Tensor& av = val(a);
    Tensor out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < av.cols; ++j) mx = std::max(mx, av.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j) {
        const double e = std::exp(av.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) /= sum;
    }
    return push(std::move(out), false, {a}, [this](Node& n) {
      const Tensor& y = n.value;
      Tensor g(y.rows, y.cols);
      for (std::size_t i = 0; i < y.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols; ++j) dot += n.grad.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < y.cols; ++j)
          g.at(i, j) = y.at(i, j) * (n.grad.at(i, j) - dot);
      }
      accumulate(n.parents[0], g);
    });
  }

  // row-wise layer normalization without affine terms
  Id layernorm(Id a, double eps = 1e-5) {
    const Tensor& av = val(a);
    Tensor out(av.rows, av.cols);
    const auto n_cols = static_cast<double>(av.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j) mean += av.at(i, j);
      mean /= n_cols;
      double var = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j) {
        const double d = av.at(i, j) - mean;
        var += d * d;
      }
      var /= n_cols;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = (av.at(i, j) - mean) * inv;
    }
    return push(std::move(out), false, {a}, [this, eps](Node& n) {
      const Tensor& x = val(n.parents[0]);
      const Tensor& y = n.value;
      Tensor g(x.rows, x.cols);
      const auto d = static_cast<double>(x.cols);
      for (std::size_t i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
        mean /= d;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
          const double dv = x.at(i, j) - mean;
          var += dv * dv;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        double gsum = 0.0, gysum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
          gsum += n.grad.at(i, j);
          gysum += n.grad.at(i, j) * y.at(i, j);
        }
        for (std::size_t j = 0; j < x.cols; ++j)
          g.at(i, j) = inv * (n.grad.at(i, j) - gsum / d - y.at(i, j) * gysum / d);
      }
      accumulate(n.parents[0], g);
    });
  }

  // mean over all entries -> 1x1
  Id mean(Id a) {
    const Tensor& av = val(a);
    if (av.size() == 0) throw DomainError("mean of empty tensor");
    double m = 0.0;
    for (double v : av.data) m += v;
    m /= static_cast<double>(av.size());
    return push(Tensor::scalar(m), false, {a}, [this](Node& n) {
      const Tensor& in = val(n.parents[0]);
      const double g = n.grad.data[0] / static_cast<double>(in.size());
      Tensor gi = Tensor::filled(in.rows, in.cols, g);
      accumulate(n.parents[0], gi);
    });
  }

  // sqrt(sum (a-b)^2) over two same-shape tensors -> 1x1
  Id euclidean_distance(Id a, Id b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
      throw ShapeError("euclidean_distance: " + shape_str(av) + " vs " + shape_str(bv));
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = av.data[i] - bv.data[i];
      s += d * d;
    }
    const double dist = std::sqrt(s);
    return push(Tensor::scalar(dist), false, {a, b}, [this](Node& n) {
      const Id a = n.parents[0], b = n.parents[1];
      const Tensor& av = val(a);
      const Tensor& bv = val(b);
      const double dist = std::max(n.value.data[0], 1e-12);  // guard d -> 0
      const double g = n.grad.data[0] / dist;
      if (nodes_[a].needs_grad) {
        Tensor ga(av.rows, av.cols);
        for (std::size_t i = 0; i < av.size(); ++i) ga.data[i] = g * (av.data[i] - bv.data[i]);
        accumulate(a, ga);
      }
      if (nodes_[b].needs_grad) {
        Tensor gb(av.rows, av.cols);
        for (std::size_t i = 0; i < av.size(); ++i) gb.data[i] = g * (bv.data[i] - av.data[i]);
        accumulate(b, gb);
      }
    });
  }

  Id concat_cols(Id a, Id b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.rows != bv.rows)
      throw ShapeError("concat_cols: " + shape_str(av) + " vs " + shape_str(bv));
    Tensor out(av.rows, av.cols + bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = av.at(i, j);
      for (std::size_t j = 0; j < bv.cols; ++j) out.at(i, av.cols + j) = bv.at(i, j);
    }
    return push(std::move(out), false, {a, b}, [this](Node& n) {
      const Id a = n.parents[0], b = n.parents[1];
      const Tensor& av = val(a);
      const Tensor& bv = val(b);
      if (nodes_[a].needs_grad) {
        Tensor ga(av.rows, av.cols);
        for (std::size_t i = 0; i < av.rows; ++i)
          for (std::size_t j = 0; j < av.cols; ++j) ga.at(i, j) = n.grad.at(i, j);
        accumulate(a, ga);
      }
      if (nodes_[b].needs_grad) {
        Tensor gb(bv.rows, bv.cols);
        for (std::size_t i = 0; i < bv.rows; ++i)
          for (std::size_t j = 0; j < bv.cols; ++j) gb.at(i, j) = n.grad.at(i, av.cols + j);
        accumulate(b, gb);
      }
    });
  }

  // stack 1 x n rows into a k x n matrix
  Id stack_rows(const std::vector<Id>& rows) {
    if (rows.empty()) throw DomainError("stack_rows of empty list");
    const std::size_t n = val(rows[0]).cols;
    Tensor out(rows.size(), n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Tensor& r = val(rows[i]);
      if (r.rows != 1 || r.cols != n) throw ShapeError("stack_rows: inconsistent row shapes");
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = r.at(0, j);
    }
    return push(std::move(out), false, rows, [this](Node& n) {
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        const Id p = n.parents[i];
        if (!nodes_[p].needs_grad) continue;
        Tensor g(1, n.value.cols);
        for (std::size_t j = 0; j < n.value.cols; ++j) g.at(0, j) = n.grad.at(i, j);
        accumulate(p, g);
      }
    });
  }

  Id slice_rows(Id a, std::size_t start, std::size_t count) {
    const Tensor& av = val(a);
    if (start + count > av.rows) throw ShapeError("slice_rows out of range");
    Tensor out(count, av.cols);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = av.at(start + i, j);
    return push(std::move(out), false, {a}, [this, start, count](Node& n) {
      const Tensor& av = val(n.parents[0]);
      Tensor g(av.rows, av.cols);
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < av.cols; ++j) g.at(start + i, j) = n.grad.at(i, j);
      accumulate(n.parents[0], g);
    });
  }

  Id slice_cols(Id a, std::size_t start, std::size_t count) {
    const Tensor& av = val(a);
    if (start + count > av.cols) throw ShapeError("slice_cols out of range");
    Tensor out(av.rows, count);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t j = 0; j < count; ++j) out.at(i, j) = av.at(i, start + j);
    return push(std::move(out), false, {a}, [this, start, count](Node& n) {
      const Tensor& av = val(n.parents[0]);
      Tensor g(av.rows, av.cols);
      for (std::size_t i = 0; i < av.rows; ++i)
        for (std::size_t j = 0; j < count; ++j) g.at(i, start + j) = n.grad.at(i, j);
      accumulate(n.parents[0], g);
    });
  }

  // rows of a selected by index, with scatter-add backward
  Id gather_rows(Id a, std::vector<std::size_t> indices) {
    const Tensor& av = val(a);
    for (std::size_t idx : indices)
      if (idx >= av.rows) throw ShapeError("gather_rows: index out of range");
    Tensor out(indices.size(), av.cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = av.at(indices[i], j);
    return push(std::move(out), false, {a},
                [this, indices = std::move(indices)](Node& n) {
                  const Tensor& av = val(n.parents[0]);
                  Tensor g(av.rows, av.cols);
                  for (std::size_t i = 0; i < indices.size(); ++i)
                    for (std::size_t j = 0; j < av.cols; ++j)
                      g.at(indices[i], j) += n.grad.at(i, j);
                  accumulate(n.parents[0], g);
                });
  }

  // mean negative log-likelihood over positions where mask is nonzero
  Id cross_entropy(Id logits, std::vector<std::size_t> targets, std::vector<char> mask) {
    const Tensor& lv = val(logits);
    if (targets.size() != lv.rows || mask.size() != lv.rows)
      throw ShapeError("cross_entropy: targets/mask length must equal logit rows");
    std::size_t active = 0;
    for (char m : mask)
      if (m) ++active;
    if (active == 0) throw DomainError("cross_entropy: no unmasked positions");
    // softmax probabilities, cached for the backward pass
    auto probs = std::make_shared<Tensor>(lv.rows, lv.cols);
    double loss = 0.0;
    for (std::size_t i = 0; i < lv.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < lv.cols; ++j) mx = std::max(mx, lv.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < lv.cols; ++j) {
        const double e = std::exp(lv.at(i, j) - mx);
        probs->at(i, j) = e;
        sum += e;
      }
      for (std::size_t j = 0; j < lv.cols; ++j) probs->at(i, j) /= sum;
      if (mask[i]) {
        if (targets[i] >= lv.cols) throw ShapeError("cross_entropy: target id out of range");
        loss -= (lv.at(i, targets[i]) - mx) - std::log(sum);
      }
    }
    loss /= static_cast<double>(active);
    return push(Tensor::scalar(loss), false, {logits},
                [this, probs, targets = std::move(targets), mask = std::move(mask),
                 active](Node& n) {
                  const Tensor& lv = val(n.parents[0]);
                  Tensor g(lv.rows, lv.cols);
                  const double s = n.grad.data[0] / static_cast<double>(active);
                  for (std::size_t i = 0; i < lv.rows; ++i) {
                    if (!mask[i]) continue;
                    for (std::size_t j = 0; j < lv.cols; ++j) g.at(i, j) = s * probs->at(i, j);
                    g.at(i, targets[i]) -= s;
                  }
                  accumulate(n.parents[0], g);
                });
  }

  // ---- backward ----------------------------------------------------------

  void backward(Id root) {
    const Tensor& rv = val(root);
    if (rv.rows != 1 || rv.cols != 1) throw ShapeError("backward needs a 1x1 root");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Tensor::zeros(n.value.rows, n.value.cols);
    if (!nodes_[root].needs_grad) return;  // nothing trainable feeds the root
    nodes_[root].grad = Tensor::scalar(1.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad) n.back(n);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::vector<Id> parents;
    std::function<void(Node&)> back;
  };

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  Id add_like(Id a, Id b, double sign) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    const bool bcast = bv.rows == 1 && av.rows != 1 && bv.cols == av.cols;
    if (!bcast && !av.same_shape(bv))
      throw ShapeError("add/sub: " + shape_str(av) + " vs " + shape_str(bv));
    Tensor out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t j = 0; j < av.cols; ++j)
        out.at(i, j) = av.at(i, j) + sign * (bcast ? bv.at(0, j) : bv.at(i, j));
    return push(std::move(out), false, {a, b}, [this, bcast, sign](Node& n) {
      const Id a = n.parents[0], b = n.parents[1];
      if (nodes_[a].needs_grad) accumulate(a, n.grad);
      if (nodes_[b].needs_grad) {
        const Tensor& bv = val(b);
        Tensor gb(bv.rows, bv.cols);
        for (std::size_t i = 0; i < n.grad.rows; ++i)
          for (std::size_t j = 0; j < n.grad.cols; ++j)
            gb.at(bcast ? 0 : i, j) += sign * n.grad.at(i, j);
        accumulate(b, gb);
      }
    });
  }

  Id push(Tensor value, bool trainable, std::vector<Id> parents,
          std::function<void(Node&)> back) {
    if (!value.all_finite())
      throw NumericError("non-finite value produced at tape node " +
                         std::to_string(nodes_.size()));
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    n.needs_grad = trainable;
    for (Id p : n.parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  void accumulate(Id id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }

  std::vector<Node> nodes_;
};

// =========================================================================
// Adam optimizer
// =========================================================================

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamStore m;  // first moments
  ParamStore v;  // second moments
  std::uint64_t step = 0;
};

// standard Adam with bias correction; only parameters present in `grads`
// are touched, so frozen groups stay bit-identical
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state,
                      const AdamConfig& cfg) {
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("adam_step: unknown parameter " + name);
    Tensor& p = it->second;
    if (!p.same_shape(g))
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.rows, p.cols)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// =========================================================================
// Gradient checker
// =========================================================================

// A differentiable scalar function of a parameter store. When `grads` is
// non-null the call must also fill analytic gradients for every parameter.
using ScalarFn = std::function<double(const ParamStore&, ParamStore* grads)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool passed = false;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// central differences (f(x+eps e) - f(x-eps e)) / 2eps against the analytic
// gradients; relative error |a-n| / max(1e-8, |a|+|n|)
inline GradCheckResult check_gradients(const ScalarFn& f, ParamStore point,
                                       double eps = 1e-4, double tol = 1e-4) {
  ParamStore analytic;
  for (const auto& [name, t] : point) analytic[name] = Tensor::zeros(t.rows, t.cols);
  const double base = f(point, &analytic);
  if (!std::isfinite(base)) throw NumericError("gradient check: non-finite base value");

  GradCheckResult result;
  for (auto& [name, t] : point) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + eps;
      const double fp = f(point, nullptr);
      t.data[i] = saved - eps;
      const double fm = f(point, nullptr);
      t.data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradient check: non-finite probe at " + name + "[" +
                           std::to_string(i) + "]");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.at(name).data[i];
      const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  result.passed = result.max_rel_err <= tol;
  return result;
}

// =========================================================================
// Checkpoint format
//
//   magic "SCKP", u8 version = 1, u64 entry count, then per entry:
//   u16 name byte-length, name UTF-8 bytes, u64 rows, u64 cols,
//   rows*cols f64 little-endian payload.
// =========================================================================

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  // this code targets little-endian hosts; the format is little-endian
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& off, const std::string& what) {
  if (off + sizeof(T) > in.size())
    throw FormatError("truncated " + what + " at offset " + std::to_string(off));
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_params(const ParamStore& store) {
  std::string out;
  out += "SCKP";
  out.push_back(static_cast<char>(1));  // version
  detail::put_le<std::uint64_t>(out, store.size());
  for (const auto& [name, t] : store) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    detail::put_le<std::uint64_t>(out, t.rows);
    detail::put_le<std::uint64_t>(out, t.cols);
    for (double v : t.data) detail::put_le<double>(out, v);
  }
  return out;
}

inline ParamStore deserialize_params(const std::string& in) {
  std::size_t off = 0;
  if (in.size() < 5 || in.compare(0, 4, "SCKP") != 0)
    throw FormatError("bad checkpoint magic at offset 0");
  off = 4;
  const auto version = static_cast<unsigned char>(in[off++]);
  if (version != 1)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint64_t>(in, off, "entry count");
  ParamStore store;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = detail::get_le<std::uint16_t>(in, off, "name length");
    if (off + name_len > in.size())
      throw FormatError("truncated name at offset " + std::to_string(off));
    std::string name = in.substr(off, name_len);
    off += name_len;
    const auto rows = detail::get_le<std::uint64_t>(in, off, "rows");
    const auto cols = detail::get_le<std::uint64_t>(in, off, "cols");
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i)
      t.data[i] = detail::get_le<double>(in, off, "payload of " + name);
    store.emplace(std::move(name), std::move(t));
  }
  return store;
}

inline void save_params(const ParamStore& store, const std::string& path) {
  write_file_atomic(path, serialize_params(store));
}

inline ParamStore load_params(const std::string& path) {
  return deserialize_params(read_file(path));
}

}  // namespace scape
