#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance suites. It never touches the analytic backward path: the
// numeric side only re-runs forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "iatt/tensor.hpp"

namespace iatt::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// rel = |analytic - numeric| / max(|analytic| + |numeric|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
}

// `loss` builds a scalar on a fresh recording graph from the store's current
// values. Checks `count` randomly chosen trainable entries (all of them if
// there are fewer) whose names start with `prefix`.
inline GradCheckResult grad_check(ParamStore& store, const std::function<Var(Graph&)>& loss, int count,
                                  std::mt19937_64& rng, const std::string& prefix = "", double h = 1e-5) {
  std::vector<std::pair<size_t, Eigen::Index>> entries;
  for (size_t p = 0; p < store.params().size(); ++p) {
    const Parameter& par = store.params()[p];
    if (!par.trainable || par.name.rfind(prefix, 0) != 0) continue;
    for (Eigen::Index i = 0; i < par.value.size(); ++i) entries.emplace_back(p, i);
  }
  std::shuffle(entries.begin(), entries.end(), rng);
  if (static_cast<int>(entries.size()) > count) entries.resize(static_cast<size_t>(count));

  store.zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l);
  }
  auto eval = [&]() {
    Graph g(false);
    return g.value(loss(g))(0, 0);
  };

  GradCheckResult res;
  for (auto [p, i] : entries) {
    Parameter& par = store.params()[p];
    const double analytic = par.grad.data()[i];
    const double orig = par.value.data()[i];
    par.value.data()[i] = orig + h;
    const double up = eval();
    par.value.data()[i] = orig - h;
    const double down = eval();
    par.value.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = rel_error(analytic, numeric);
    ++res.checked;
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = par.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
    }
  }
  return res;
}

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace iatt::testing
