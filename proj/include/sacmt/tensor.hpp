#pragma once

// Tape-based reverse-mode differentiation over dense row-major tensors.
//
// Every op returns a fresh Tensor. When grad mode is on and any input
// requires a gradient, the result keeps its parents plus a closure that
// pushes its own gradient back into them. The graph is rebuilt each step and
// freed when the last Tensor referencing it goes away.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sacmt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Scoped switch that stops ops from recording graph edges.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
    for (auto d : shape)
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  /// Leading dimensions flattened; a rank-1 tensor is one row.
  std::size_t rows() const { return numel() / cols(); }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }

  /// Accumulated gradient; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const Tensor* t : inputs) n.parents.push_back(t->node());
  n.backward = std::move(backward);
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& t : inputs) n.parents.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

// Accumulation target for a parent, or nullptr when it does not need one.
inline double* grad_sink(Node& parent) {
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return parent.grad.data();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {&a}, [df](Node& self) {
    double* ga = grad_sink(*self.parents[0]);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

// Two-way 2-D broadcasting: each dimension must match or be 1.
struct Broadcast {
  std::size_t rows, cols, ar, ac, br, bc;
  std::size_t ai(std::size_t r, std::size_t c) const { return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c); }
  std::size_t bi(std::size_t r, std::size_t c) const { return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c); }
};

inline Broadcast broadcast_dims(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast d{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto fit = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument(std::string(op) + ": cannot broadcast shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  };
  d.rows = fit(d.ar, d.br);
  d.cols = fit(d.ac, d.bc);
  return d;
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  Broadcast d = broadcast_dims(a, b, op);
  Shape shape;
  if (a.shape() == b.shape())
    shape = a.shape();
  else if (d.rows == a.rows() && d.cols == a.cols())
    shape = a.shape();
  else if (d.rows == b.rows() && d.cols == b.cols())
    shape = b.shape();
  else
    shape = {d.rows, d.cols};
  std::vector<double> out(d.rows * d.cols);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < d.rows; ++r)
    for (std::size_t c = 0; c < d.cols; ++c) out[r * d.cols + c] = f(av[d.ai(r, c)], bv[d.bi(r, c)]);
  return make_result(std::move(shape), std::move(out), {&a, &b}, [d, da, db](Node& self) {
    double* ga = grad_sink(*self.parents[0]);
    double* gb = grad_sink(*self.parents[1]);
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t c = 0; c < d.cols; ++c) {
        double g = self.grad[r * d.cols + c];
        if (g == 0.0) continue;
        double xv = x[d.ai(r, c)], yv = y[d.bi(r, c)];
        if (ga) ga[d.ai(r, c)] += g * da(xv, yv);
        if (gb) gb[d.bi(r, c)] += g * db(xv, yv);
      }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}
inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]; rank-1 operands act as a single row.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw std::invalid_argument("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  std::vector<double> out(m * n);
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::ConstMap g(self.grad.data(), m, n);
    if (double* ga = detail::grad_sink(*self.parents[0]))
      detail::MutMap(ga, m, k).noalias() += g * detail::ConstMap(self.parents[1]->value.data(), k, n).transpose();
    if (double* gb = detail::grad_sink(*self.parents[1]))
      detail::MutMap(gb, k, n).noalias() += detail::ConstMap(self.parents[0]->value.data(), m, k).transpose() * g;
  });
}

/// [m,k] x [n,k]^T -> [m,n]. Used for projections tied to an embedding table.
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw std::invalid_argument("matmul_bt: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) + "^T");
  std::vector<double> out(m * n);
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), n, k).transpose();
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::ConstMap g(self.grad.data(), m, n);
    if (double* ga = detail::grad_sink(*self.parents[0]))
      detail::MutMap(ga, m, k).noalias() += g * detail::ConstMap(self.parents[1]->value.data(), n, k);
    if (double* gb = detail::grad_sink(*self.parents[1]))
      detail::MutMap(gb, n, k).noalias() += g.transpose() * detail::ConstMap(self.parents[0]->value.data(), m, k);
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalisation

inline Tensor softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    double mx = *std::max_element(x, x + n);
    double s = 0;
    for (std::size_t c = 0; c < n; ++c) s += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= s;
  }
  return detail::make_result(a.shape(), std::move(out), {&a}, [m, n](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[c] * (g[c] - dot);
    }
  });
}

inline Tensor log_softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = av.data() + r * n;
    double mx = *std::max_element(x, x + n);
    double s = 0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(x[c] - mx);
    double lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[c] - lse;
  }
  return detail::make_result(a.shape(), std::move(out), {&a}, [m, n](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double total = 0;
      for (std::size_t c = 0; c < n; ++c) total += g[c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c] - std::exp(y[c]) * total;
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Picks rows of `table` by id: [V,D] -> [ids.size(), D]. Also serves as a
/// general row gather.
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t v = table.rows(), d = table.cols();
  if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
  std::vector<double> out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v)
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of shape " +
                              shape_str(table.shape()));
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make_result({ids.size(), d}, std::move(out), {&table}, [idx = std::move(idx), d](detail::Node& self) {
    double* gt = detail::grad_sink(*self.parents[0]);
    if (!gt) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gt[idx[i] * d + c] += self.grad[i * d + c];
  });
}
inline Tensor embedding(const Tensor& table, std::initializer_list<std::size_t> ids) {
  std::vector<std::size_t> v(ids);
  return embedding(table, std::span<const std::size_t>(v));
}
inline Tensor index_rows(const Tensor& a, std::span<const std::size_t> rows) { return embedding(a, rows); }

/// One element per row: [m,n] -> [m,1].
inline Tensor gather(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t m = a.rows(), n = a.cols();
  if (index.size() != m)
    throw std::invalid_argument("gather: " + std::to_string(index.size()) + " indices for shape " +
                                shape_str(a.shape()));
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (index[r] >= n) throw std::out_of_range("gather: index " + std::to_string(index[r]) + " >= " + std::to_string(n));
    out[r] = a.values()[r * n + index[r]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::make_result({m, 1}, std::move(out), {&a}, [idx = std::move(idx), n](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += self.grad[r];
  });
}

/// Columns [begin, begin+count) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || begin + count > n)
    throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                ") outside shape " + shape_str(a.shape()));
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.values().data() + r * n + begin, count, out.data() + r * count);
  return detail::make_result({m, count}, std::move(out), {&a}, [m, n, begin, count](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) ga[r * n + begin + c] += self.grad[r * count + c];
  });
}

/// axis 0 stacks rows (equal column counts); axis 1 joins columns (equal row counts).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  std::vector<std::size_t> extent;
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0].cols();
    for (const auto& p : parts) {
      if (p.cols() != cols)
        throw std::invalid_argument("concat(axis=0): column mismatch " + shape_str(parts[0].shape()) + " vs " +
                                    shape_str(p.shape()));
      extent.push_back(p.rows());
      rows += p.rows();
    }
  } else {
    rows = parts[0].rows();
    for (const auto& p : parts) {
      if (p.rows() != rows)
        throw std::invalid_argument("concat(axis=1): row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                    shape_str(p.shape()));
      extent.push_back(p.cols());
      cols += p.cols();
    }
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto v = parts[i].values();
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + offset * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.data() + r * extent[i], extent[i], out.data() + r * cols + offset);
    }
    offset += extent[i];
  }
  return detail::make_result({rows, cols}, std::move(out), parts, [extent, rows, cols, axis](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < extent.size(); ++i) {
      double* gp = detail::grad_sink(*self.parents[i]);
      if (gp) {
        if (axis == 0) {
          for (std::size_t j = 0; j < extent[i] * cols; ++j) gp[j] += self.grad[off * cols + j];
        } else {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < extent[i]; ++c) gp[r * extent[i] + c] += self.grad[r * cols + off + c];
        }
      }
      off += extent[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double x : a.values()) s += x;
  return detail::make_result({1}, {s}, {&a}, [](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) ga[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// axis 0 -> [1,n] column sums, axis 1 -> [m,1] row sums.
inline Tensor sum_axis(const Tensor& a, int axis) {
  const std::size_t m = a.rows(), n = a.cols();
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  auto av = a.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[axis == 0 ? c : r] += av[r * n + c];
  return detail::make_result(std::move(shape), std::move(out), {&a}, [m, n, axis](detail::Node& self) {
    double* ga = detail::grad_sink(*self.parents[0]);
    if (!ga) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += self.grad[axis == 0 ? c : r];
  });
}

inline Tensor mean_axis(const Tensor& a, int axis) {
  double count = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return scale(sum_axis(a, axis), 1.0 / count);
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("dot: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Interior gradients are reset first, so calling this twice on the
/// same graph doubles the leaf gradients.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace sacmt
