#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "iatt/errors.hpp"

namespace iatt {

// Goal indices sorted by descending weight; ties go to the lower index.
inline std::vector<int> descending_order(const std::vector<double>& w) {
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w[static_cast<size_t>(a)] > w[static_cast<size_t>(b)]; });
  return idx;
}

// accuracy[r] = fraction of samples whose rank-r goal (descending weight)
// is the same goal in pred and truth. Output length is the largest goal
// count; a rank counts only the samples that have that many goals.
inline std::vector<double> rank_accuracy(const std::vector<std::vector<double>>& pred,
                                         const std::vector<std::vector<double>>& truth) {
  require(pred.size() == truth.size(), "rank_accuracy: sample counts differ");
  size_t ranks = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    require(pred[i].size() == truth[i].size(), "rank_accuracy: goal counts differ in sample " + std::to_string(i));
    ranks = std::max(ranks, pred[i].size());
  }
  std::vector<double> hits(ranks, 0.0);
  std::vector<double> counts(ranks, 0.0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const auto p = descending_order(pred[i]);
    const auto t = descending_order(truth[i]);
    for (size_t r = 0; r < p.size(); ++r) {
      counts[r] += 1.0;
      hits[r] += p[r] == t[r] ? 1.0 : 0.0;
    }
  }
  for (size_t r = 0; r < ranks; ++r) hits[r] = counts[r] > 0.0 ? hits[r] / counts[r] : 0.0;
  return hits;
}

}  // namespace iatt
