#pragma once

// Central finite-difference oracle for gradient checks. Independent of the
// backward closures: it only evaluates the forward function.

#include "sacmt/params.hpp"
#include "sacmt/tensor.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sacmt::test {

struct GradCheckResult {
  double worst_relative_error = 0.0;
  double worst_absolute_error = 0.0;
  std::size_t checked = 0;
  bool passed(double tol) const { return worst_relative_error < tol; }
};

/// Relative error with an absolute floor so exact-zero gradients compare sanely.
inline double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff < 1e-9) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares backward() against central differences with step h for every
/// scalar of every input.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                  double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult r;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + h;
      const double up = loss_fn().item();
      values[j] = orig - h;
      const double down = loss_fn().item();
      values[j] = orig;
      const double numeric = (up - down) / (2 * h);
      r.worst_relative_error = std::max(r.worst_relative_error, relative_error(analytic[i][j], numeric));
      r.worst_absolute_error = std::max(r.worst_absolute_error, std::abs(analytic[i][j] - numeric));
      ++r.checked;
    }
  }
  return r;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum with fixed random weights: exercises the full Jacobian.
inline Tensor project(const Tensor& t, const Tensor& weights) { return sum(mul(t, weights)); }

struct PrimitiveCase {
  std::string name;
  // Builds inputs and a loss closure for one random instance.
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(std::mt19937_64&)> make;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using Inputs = std::vector<Tensor>;
  using Fn = std::function<Tensor()>;
  auto dims = [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    return std::pair{d(rng), d(rng)};
  };
  std::vector<PrimitiveCase> cases;
  auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op, int bcast,
                    double lo = -1.0) {
    cases.push_back({name, [=](std::mt19937_64& rng) {
                       auto [m, n] = dims(rng);
                       Tensor a = random_tensor({m, n}, rng, lo);
                       Shape bs = bcast == 0 ? Shape{m, n} : bcast == 1 ? Shape{n} : Shape{m, 1};
                       Tensor b = random_tensor(bs, rng, lo);
                       Tensor w = random_tensor({m, n}, rng, -1, 1, false);
                       return std::pair{Inputs{a, b}, Fn([=] { return project(op(a, b), w); })};
                     }});
  };
  binary("add", [](auto& a, auto& b) { return add(a, b); }, 0);
  binary("add_row_broadcast", [](auto& a, auto& b) { return add(a, b); }, 1);
  binary("add_col_broadcast", [](auto& a, auto& b) { return add(a, b); }, 2);
  binary("sub", [](auto& a, auto& b) { return sub(a, b); }, 0);
  binary("mul", [](auto& a, auto& b) { return mul(a, b); }, 0);
  binary("mul_col_broadcast", [](auto& a, auto& b) { return mul(a, b); }, 2);

  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> op, double lo, double hi) {
    cases.push_back({name, [=](std::mt19937_64& rng) {
                       auto [m, n] = dims(rng);
                       Tensor a = random_tensor({m, n}, rng, lo, hi);
                       Tensor w = random_tensor({m, n}, rng, -1, 1, false);
                       return std::pair{Inputs{a}, Fn([=] { return project(op(a), w); })};
                     }});
  };
  unary("scale", [](auto& a) { return scale(a, -1.7); }, -1, 1);
  unary("tanh", [](auto& a) { return tanh(a); }, -2, 2);
  unary("sigmoid", [](auto& a) { return sigmoid(a); }, -3, 3);
  unary("exp", [](auto& a) { return exp(a); }, -1, 1);
  unary("log", [](auto& a) { return log(a); }, 0.5, 2);
  unary("square", [](auto& a) { return square(a); }, -1, 1);
  unary("softmax", [](auto& a) { return softmax(a); }, -2, 2);
  unary("log_softmax", [](auto& a) { return log_softmax(a); }, -2, 2);
  unary("slice_cols", [](auto& a) { return slice_cols(a, a.cols() - 1, 1); }, -1, 1);

  cases.push_back({"sum", [=](std::mt19937_64& rng) {
                     auto [m, n] = dims(rng);
                     Tensor a = random_tensor({m, n}, rng);
                     return std::pair{Inputs{a}, Fn([=] { return square(sum(a)); })};
                   }});
  cases.push_back({"mean", [=](std::mt19937_64& rng) {
                     auto [m, n] = dims(rng);
                     Tensor a = random_tensor({m, n}, rng);
                     return std::pair{Inputs{a}, Fn([=] { return square(mean(a)); })};
                   }});
  for (int axis : {0, 1})
    cases.push_back({"mean_axis" + std::to_string(axis), [=](std::mt19937_64& rng) {
                       auto [m, n] = dims(rng);
                       Tensor a = random_tensor({m, n}, rng);
                       Shape ws = axis == 0 ? Shape{1, n} : Shape{m, 1};
                       Tensor w = random_tensor(ws, rng, -1, 1, false);
                       return std::pair{Inputs{a}, Fn([=] { return project(mean_axis(a, axis), w); })};
                     }});
  cases.push_back({"matmul", [=](std::mt19937_64& rng) {
                     auto [m, k] = dims(rng);
                     auto n = dims(rng).first;
                     Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
                     Tensor w = random_tensor({m, n}, rng, -1, 1, false);
                     return std::pair{Inputs{a, b}, Fn([=] { return project(matmul(a, b), w); })};
                   }});
  cases.push_back({"matmul_bt", [=](std::mt19937_64& rng) {
                     auto [m, k] = dims(rng);
                     auto n = dims(rng).first;
                     Tensor a = random_tensor({m, k}, rng), b = random_tensor({n, k}, rng);
                     Tensor w = random_tensor({m, n}, rng, -1, 1, false);
                     return std::pair{Inputs{a, b}, Fn([=] { return project(matmul_bt(a, b), w); })};
                   }});
  cases.push_back({"embedding", [=](std::mt19937_64& rng) {
                     auto [v, d] = dims(rng);
                     Tensor table = random_tensor({v + 1, d}, rng);
                     std::uniform_int_distribution<std::size_t> pick(0, v);
                     std::vector<std::size_t> ids{pick(rng), pick(rng), pick(rng)};
                     Tensor w = random_tensor({3, d}, rng, -1, 1, false);
                     return std::pair{Inputs{table}, Fn([=] { return project(embedding(table, ids), w); })};
                   }});
  cases.push_back({"gather", [=](std::mt19937_64& rng) {
                     auto [m, n] = dims(rng);
                     Tensor a = random_tensor({m, n}, rng);
                     std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                     std::vector<std::size_t> idx(m);
                     for (auto& i : idx) i = pick(rng);
                     Tensor w = random_tensor({m, 1}, rng, -1, 1, false);
                     return std::pair{Inputs{a}, Fn([=] { return project(gather(a, idx), w); })};
                   }});
  for (int axis : {0, 1})
    cases.push_back({"concat_axis" + std::to_string(axis), [=](std::mt19937_64& rng) {
                       auto [m, n] = dims(rng);
                       auto k = dims(rng).first;
                       Tensor a = random_tensor({m, n}, rng);
                       Tensor b = random_tensor(axis == 0 ? Shape{k, n} : Shape{m, k}, rng);
                       Tensor w = random_tensor(axis == 0 ? Shape{m + k, n} : Shape{m, n + k}, rng, -1, 1, false);
                       return std::pair{Inputs{a, b}, Fn([=] { return project(concat({a, b}, axis), w); })};
                     }});
  return cases;
}

}  // namespace sacmt::test
