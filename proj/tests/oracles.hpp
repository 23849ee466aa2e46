// Test-only reference implementations. Everything here is independent of the
// library code paths it checks: finite differences for gradients, scalar
// recomputations for attention/softmax/cross-entropy, a full-matrix DP for
// edit distance, and exhaustive assignment search for entity matching.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zsslu/tensor.hpp"

namespace zsslu::testing {

// Central finite differences of a scalar-valued function w.r.t. every entry
// of `param`. The function must re-run the full forward pass on each call.
inline std::vector<double> finite_difference(zsslu::Tensor& param,
                                             const std::function<double()>& loss_fn,
                                             double h = 1e-5) {
  std::vector<double> grad(param.data->size());
  for (size_t i = 0; i < param.data->size(); ++i) {
    const double orig = (*param.data)[i];
    (*param.data)[i] = orig + h;
    const double up = loss_fn();
    (*param.data)[i] = orig - h;
    const double down = loss_fn();
    (*param.data)[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// max_i |analytic_i - numeric_i| / (|analytic_i| + floor)
inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-8) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + floor));
  }
  return worst;
}

// Scalar softmax over a vector, long-double accumulation.
inline std::vector<double> softmax_ref(const std::vector<double>& x) {
  long double mx = x[0];
  for (double v : x) mx = std::max<long double>(mx, v);
  long double z = 0.0;
  std::vector<long double> e(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(x[i]) - mx);
    z += e[i];
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / z);
  return out;
}

// Scalar scaled-dot-product attention, one head, no masking. q: [tq x d],
// k/v: [tk x d] flattened row-major.
inline std::vector<double> attention_ref(const std::vector<double>& q, const std::vector<double>& k,
                                         const std::vector<double>& v, int tq, int tk, int d) {
  std::vector<double> out(static_cast<size_t>(tq) * d, 0.0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < tq; ++i) {
    std::vector<double> scores(tk);
    for (int j = 0; j < tk; ++j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
      scores[j] = s * inv;
    }
    std::vector<double> w = softmax_ref(scores);
    for (int j = 0; j < tk; ++j) {
      for (int c = 0; c < d; ++c) out[i * d + c] += w[j] * v[j * d + c];
    }
  }
  return out;
}

// Mean NLL over unmasked rows, computed row-by-row in long double.
inline double cross_entropy_ref(const std::vector<double>& logits, int n, int v,
                                const std::vector<int>& targets, const std::vector<uint8_t>& mask) {
  long double total = 0.0;
  int active = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++active;
    long double mx = logits[i * v];
    for (int j = 0; j < v; ++j) mx = std::max<long double>(mx, logits[i * v + j]);
    long double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(static_cast<long double>(logits[i * v + j]) - mx);
    total += std::log(z) + mx - logits[i * v + targets[i]];
  }
  return static_cast<double>(total / active);
}

// Full-matrix Levenshtein distance (the quadratic DP reference).
template <typename T>
int levenshtein_ref(const std::vector<T>& a, const std::vector<T>& b) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (int i = 0; i <= m; ++i) dp[i][0] = i;
  for (int j = 0; j <= n; ++j) dp[0][j] = j;
  for (int i = 1; i <= m; ++i) {
    for (int j = 1; j <= n; ++j) {
      if (a[i - 1] == b[j - 1]) {
        dp[i][j] = dp[i - 1][j - 1];
      } else {
        dp[i][j] = 1 + std::min({dp[i - 1][j], dp[i][j - 1], dp[i - 1][j - 1]});
      }
    }
  }
  return dp[m][n];
}

// Best achievable total credit over all one-to-one gold/pred assignments,
// found by brute force. credit(i, j) must be zero for incompatible pairs.
inline double best_assignment_ref(int n_gold, int n_pred,
                                  const std::function<double(int, int)>& credit) {
  std::vector<int> pred_ids(n_pred);
  for (int j = 0; j < n_pred; ++j) pred_ids[j] = j;
  double best = 0.0;
  // Try every injection from a subset of gold into pred via permutations of
  // the longer side; sizes are <= 4 in tests so this stays tiny.
  std::function<void(int, std::vector<bool>&, double)> rec = [&](int gi, std::vector<bool>& used,
                                                                 double acc) {
    best = std::max(best, acc);
    if (gi >= n_gold) return;
    rec(gi + 1, used, acc);  // leave gold gi unmatched
    for (int j = 0; j < n_pred; ++j) {
      if (used[j]) continue;
      used[j] = true;
      rec(gi + 1, used, acc + credit(gi, j));
      used[j] = false;
    }
  };
  std::vector<bool> used(n_pred, false);
  rec(0, used, 0.0);
  return best;
}

}  // namespace zsslu::testing
