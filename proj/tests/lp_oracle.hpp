#pragma once

#include "mkvlab/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace testutil {

// Minimum transport cost over all vertices of the transportation polytope.
// A vertex is supported on a spanning tree of the bipartite graph with
// n + m - 1 edges; its flows follow from peeling leaves.
inline double lp_vertex_minimum(const mkv::EmpiricalMeasure& mu, const mkv::EmpiricalMeasure& nu)
{
  const std::size_t n = mu.size(), m = nu.size(), e = n * m, k = n + m - 1;
  std::vector<std::size_t> pick(k);
  std::iota(pick.begin(), pick.end(), 0);
  double best = INFINITY;
  std::vector<int> parent(n + m);
  auto find = [&](int v) {
    while (parent[v] != v)
      v = parent[v] = parent[parent[v]];
    return v;
  };
  for (;;) {
    std::iota(parent.begin(), parent.end(), 0);
    bool tree = true;
    for (std::size_t c : pick) {
      const int a = find(int(c / m)), b = find(int(n + c % m));
      if (a == b) {
        tree = false;
        break;
      }
      parent[a] = b;
    }
    if (tree) {
      std::vector<double> sup(n + m);
      for (std::size_t i = 0; i < n; ++i)
        sup[i] = mu.weight(i);
      for (std::size_t j = 0; j < m; ++j)
        sup[n + j] = nu.weight(j);
      std::vector<int> deg(n + m, 0);
      std::vector<bool> used(k, false);
      for (std::size_t c : pick) {
        ++deg[c / m];
        ++deg[n + c % m];
      }
      double cost = 0.0;
      bool feasible = true;
      for (std::size_t round = 0; round < k; ++round) {
        std::size_t leaf_edge = k;
        int leaf = -1;
        for (std::size_t q = 0; q < k && leaf < 0; ++q) {
          if (used[q])
            continue;
          const int a = int(pick[q] / m), b = int(n + pick[q] % m);
          if (deg[a] == 1) {
            leaf = a;
            leaf_edge = q;
          } else if (deg[b] == 1) {
            leaf = b;
            leaf_edge = q;
          }
        }
        const int a = int(pick[leaf_edge] / m), b = int(n + pick[leaf_edge] % m);
        const int other = leaf == a ? b : a;
        const double flow = sup[leaf];
        if (flow < -1e-12)
          feasible = false;
        sup[other] -= flow;
        sup[leaf] = 0.0;
        used[leaf_edge] = true;
        --deg[a];
        --deg[b];
        double d2 = 0.0;
        for (std::size_t t = 0; t < mu.dim(); ++t) {
          const double z = mu.point(a)[t] - nu.point(b - n)[t];
          d2 += z * z;
        }
        cost += flow * d2;
      }
      if (feasible)
        best = std::min(best, cost);
    }
    // next k-subset of {0..e-1}
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == e - k + i - 1)
      --i;
    if (i == 0)
      break;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j)
      pick[j] = pick[j - 1] + 1;
  }
  return best;
}

// Weights that are multiples of 1/q: split into q unit atoms and take the
// best permutation (Birkhoff vertices of the refined problem).
inline double permutation_minimum(const std::vector<double>& x, const std::vector<int>& cx, const std::vector<double>& y,
                                  const std::vector<int>& cy)
{
  std::vector<double> a, b;
  for (std::size_t i = 0; i < x.size(); ++i)
    a.insert(a.end(), std::size_t(cx[i]), x[i]);
  for (std::size_t j = 0; j < y.size(); ++j)
    b.insert(b.end(), std::size_t(cy[j]), y[j]);
  std::vector<std::size_t> p(b.size());
  std::iota(p.begin(), p.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      c += (a[i] - b[p[i]]) * (a[i] - b[p[i]]);
    best = std::min(best, c / double(a.size()));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

// Two-phase dense simplex with Bland's rule: min c.x subject to A x = b, x >= 0.
inline double simplex_min(std::vector<std::vector<double>> A, std::vector<double> b, const std::vector<double>& c)
{
  const std::size_t m = A.size(), n = c.size(), cols = n + m + 1;
  std::vector<std::vector<double>> T(m, std::vector<double>(cols, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double s = b[i] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < n; ++j)
      T[i][j] = s * A[i][j];
    T[i][n + i] = 1.0;
    T[i][cols - 1] = s * b[i];
    basis[i] = n + i;
  }
  auto pivot = [&](std::size_t r, std::size_t col) {
    const double p = T[r][col];
    for (double& v : T[r])
      v /= p;
    for (std::size_t i = 0; i < m; ++i)
      if (i != r && T[i][col] != 0.0) {
        const double f = T[i][col];
        for (std::size_t j = 0; j < cols; ++j)
          T[i][j] -= f * T[r][j];
      }
    basis[r] = col;
  };
  auto optimize = [&](const std::vector<double>& cost, std::size_t allowed) {
    for (;;) {
      std::size_t enter = allowed;
      for (std::size_t j = 0; j < allowed && enter == allowed; ++j) {
        if (std::find(basis.begin(), basis.end(), j) != basis.end())
          continue;
        double d = cost[j];
        for (std::size_t i = 0; i < m; ++i)
          d -= cost[basis[i]] * T[i][j];
        if (d < -1e-12)
          enter = j;
      }
      if (enter == allowed)
        return;
      std::size_t leave = m;
      double best = INFINITY;
      for (std::size_t i = 0; i < m; ++i)
        if (T[i][enter] > 1e-12) {
          const double ratio = T[i][cols - 1] / T[i][enter];
          if (ratio < best - 1e-14 || (ratio <= best + 1e-14 && leave < m && basis[i] < basis[leave])) {
            best = std::min(best, ratio);
            leave = i;
          }
        }
      if (leave == m)
        return; // unbounded; cannot happen for transport problems
      pivot(leave, enter);
    }
  };
  std::vector<double> phase1(n + m, 0.0);
  std::fill(phase1.begin() + std::ptrdiff_t(n), phase1.end(), 1.0);
  optimize(phase1, n + m);
  // drive artificials out of the basis; rows where that fails are redundant
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] >= n)
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(T[i][j]) > 1e-9 && std::find(basis.begin(), basis.end(), j) == basis.end()) {
          pivot(i, j);
          break;
        }
  std::vector<double> phase2(c);
  phase2.resize(n + m, 0.0);
  optimize(phase2, n);
  double v = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] < n)
      v += c[basis[i]] * T[i][cols - 1];
  return v;
}

// Squared W2 as the transportation LP solved by simplex.
inline double transport_lp(const mkv::EmpiricalMeasure& mu, const mkv::EmpiricalMeasure& nu)
{
  const std::size_t n = mu.size(), m = nu.size();
  std::vector<std::vector<double>> A(n + m, std::vector<double>(n * m, 0.0));
  std::vector<double> b(n + m), c(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      A[i][i * m + j] = 1.0;
      A[n + j][i * m + j] = 1.0;
      double d2 = 0.0;
      for (std::size_t t = 0; t < mu.dim(); ++t) {
        const double z = mu.point(i)[t] - nu.point(j)[t];
        d2 += z * z;
      }
      c[i * m + j] = d2;
    }
  for (std::size_t i = 0; i < n; ++i)
    b[i] = mu.weight(i);
  for (std::size_t j = 0; j < m; ++j)
    b[n + j] = nu.weight(j);
  return simplex_min(std::move(A), std::move(b), c);
}

} // namespace testutil
