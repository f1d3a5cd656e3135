#pragma once

// Validation coreset construction: per-identity floors, lazy-greedy facility
// location fill to a coverage target, and boundary enrichment swaps.

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wildaudit/common.hpp"
#include "wildaudit/corpus.hpp"

namespace wildaudit::coreset {

/// F(S) = sum_v max_{s in S} sim(v, s).
inline double facility_location_value(const std::vector<int>& selected,
                                      const Eigen::MatrixXf& sim) {
  if (selected.empty())
    throw std::invalid_argument("facility_location_value: empty set");
  if (sim.rows() != sim.cols())
    throw std::invalid_argument("facility_location_value: sim must be square");
  double total = 0.0;
  for (Eigen::Index v = 0; v < sim.rows(); ++v) {
    float best = sim(v, selected.front());
    for (size_t k = 1; k < selected.size(); ++k)
      best = std::max(best, sim(v, selected[k]));
    total += best;
  }
  return total;
}

struct CoresetSelection {
  std::vector<std::string> selected;  // sorted image_ids
  double coverage_ratio = 0.0;       // final, after boundary swaps
  double fill_coverage_ratio = 0.0;  // after the greedy fill, before swaps
  double boundary_fraction = 0.0;
  std::map<std::string, int> per_identity_counts;
  std::vector<double> phase2_gains;  // accepted greedy gains, in order
};

struct CoresetParams {
  double target_coverage = 0.95;
  double boundary_percentile = 75.0;  // of the max cross-identity similarity
  double swap_tolerance = 0.005;      // coverage may dip this far below target
  uint64_t seed = 0;                  // reserved; the build is deterministic
};

/// Floor size per identity: min(|V_i|, max(3, ceil(0.15 |V_i|))).
inline int identity_floor(int group_size) {
  const int ceil15 = (15 * group_size + 99) / 100;
  return std::min(group_size, std::max(3, ceil15));
}

namespace detail {

struct Top2 {
  float best1 = -std::numeric_limits<float>::infinity();
  float best2 = -std::numeric_limits<float>::infinity();
  int best1_idx = -1;
};

inline std::vector<Top2> build_top2(const std::vector<int>& selected,
                                    const Eigen::MatrixXf& sim) {
  std::vector<Top2> t(static_cast<size_t>(sim.rows()));
  for (Eigen::Index v = 0; v < sim.rows(); ++v) {
    for (int s : selected) {
      const float val = sim(v, s);
      auto& slot = t[static_cast<size_t>(v)];
      if (val > slot.best1) {
        slot.best2 = slot.best1;
        slot.best1 = val;
        slot.best1_idx = s;
      } else if (val > slot.best2) {
        slot.best2 = val;
      }
    }
  }
  return t;
}

}  // namespace detail

/// Three-phase builder. Phase 1 seeds each identity's floor by greedy
/// facility-location gain restricted to that identity's images. Phase 2
/// lazy-greedily adds images until F(S)/F(V) reaches the target. Phase 3
/// swaps selected non-boundary images for unselected boundary images of the
/// same identity when coverage stays within swap_tolerance of the target.
/// Deterministic: ties break on ascending row index.
inline CoresetSelection build_coreset(const corpus::Corpus& corp,
                                      const corpus::EmbeddingMatrix& emb,
                                      const CoresetParams& params = {}) {
  if (params.target_coverage <= 0.0 || params.target_coverage > 1.0)
    throw std::invalid_argument("build_coreset: target_coverage in (0,1]");
  if (params.boundary_percentile < 0.0 || params.boundary_percentile > 100.0)
    throw std::invalid_argument("build_coreset: boundary_percentile in [0,100]");
  const int n = emb.count();
  if (n == 0) throw DataError("build_coreset: empty embedding matrix");

  const corpus::EmbeddingMatrix unit = corpus::l2_normalize(emb);
  Eigen::MatrixXf sim(n, n);
  sim.noalias() = unit.data * unit.data.transpose();
  sim.diagonal().setOnes();

  std::vector<std::string> identity_of(static_cast<size_t>(n));
  std::map<std::string, std::vector<int>> by_identity;
  for (int i = 0; i < n; ++i) {
    identity_of[static_cast<size_t>(i)] =
        corp.identity_of(emb.rows[static_cast<size_t>(i)]);
    by_identity[identity_of[static_cast<size_t>(i)]].push_back(i);
  }

  const double f_total = static_cast<double>(n);  // unit diagonal: F(V) = N
  std::vector<bool> in_set(static_cast<size_t>(n), false);
  std::vector<int> selected;
  // cur[v]: best similarity from v into the selected set
  std::vector<float> cur(static_cast<size_t>(n),
                         -std::numeric_limits<float>::infinity());

  auto add = [&](int s) {
    in_set[static_cast<size_t>(s)] = true;
    selected.push_back(s);
    for (int v = 0; v < n; ++v)
      cur[static_cast<size_t>(v)] = std::max(cur[static_cast<size_t>(v)], sim(v, s));
  };

  // Phase 1: per-identity floors, greedy on the identity-restricted objective.
  for (const auto& [identity, members] : by_identity) {
    const int floor = identity_floor(static_cast<int>(members.size()));
    std::vector<float> local(members.size(),
                             -std::numeric_limits<float>::infinity());
    std::vector<bool> taken(members.size(), false);
    for (int pick = 0; pick < floor; ++pick) {
      double best_gain = -1.0;
      int best_pos = -1;
      for (size_t c = 0; c < members.size(); ++c) {
        if (taken[c]) continue;
        double gain = 0.0;
        for (size_t v = 0; v < members.size(); ++v) {
          const float s = sim(members[v], members[c]);
          if (pick == 0) gain += s;
          else if (s > local[v]) gain += s - local[v];
        }
        if (gain > best_gain) {
          best_gain = gain;
          best_pos = static_cast<int>(c);
        }
      }
      taken[static_cast<size_t>(best_pos)] = true;
      for (size_t v = 0; v < members.size(); ++v)
        local[v] = std::max(local[v],
                            sim(members[v], members[static_cast<size_t>(best_pos)]));
      add(members[static_cast<size_t>(best_pos)]);
    }
  }

  auto coverage = [&]() {
    double f = 0.0;
    for (int v = 0; v < n; ++v) f += cur[static_cast<size_t>(v)];
    return f / f_total;
  };

  // Phase 2: lazy greedy global fill.
  CoresetSelection out;
  {
    auto gain_of = [&](int c) {
      double g = 0.0;
      for (int v = 0; v < n; ++v) {
        const float s = sim(v, c);
        if (s > cur[static_cast<size_t>(v)]) g += s - cur[static_cast<size_t>(v)];
      }
      return g;
    };
    // (gain, candidate); stale entries are re-evaluated on pop.
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry> heap;
    for (int c = 0; c < n; ++c)
      if (!in_set[static_cast<size_t>(c)]) heap.emplace(gain_of(c), c);

    double cov = coverage();
    double last_gain = std::numeric_limits<double>::infinity();
    while (cov < params.target_coverage && !heap.empty()) {
      auto [g, c] = heap.top();
      heap.pop();
      if (in_set[static_cast<size_t>(c)]) continue;
      const double fresh = gain_of(c);
      if (!heap.empty() && fresh < heap.top().first - 1e-12) {
        heap.emplace(fresh, c);
        continue;
      }
      // Submodularity: accepted gains never increase.
      if (fresh > last_gain + 1e-9)
        throw std::logic_error("build_coreset: greedy gain increased");
      last_gain = fresh;
      out.phase2_gains.push_back(fresh);
      add(c);
      cov = coverage();
    }
  }

  out.fill_coverage_ratio = coverage();

  // Phase 3: boundary enrichment via within-identity swaps.
  std::vector<double> cross_max(static_cast<size_t>(n), -1.0);
  for (int v = 0; v < n; ++v) {
    for (int u = 0; u < n; ++u) {
      if (identity_of[static_cast<size_t>(u)] == identity_of[static_cast<size_t>(v)])
        continue;
      cross_max[static_cast<size_t>(v)] =
          std::max(cross_max[static_cast<size_t>(v)], static_cast<double>(sim(v, u)));
    }
  }
  double threshold = 0.0;
  bool have_boundary = false;
  {
    std::vector<double> vals;
    for (double v : cross_max)
      if (v > -1.0) vals.push_back(v);
    if (!vals.empty()) {
      std::sort(vals.begin(), vals.end());
      const double pos =
          params.boundary_percentile / 100.0 * static_cast<double>(vals.size() - 1);
      const size_t lo = static_cast<size_t>(pos);
      const size_t hi = std::min(lo + 1, vals.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      threshold = vals[lo] * (1.0 - frac) + vals[hi] * frac;
      have_boundary = true;
    }
  }
  auto is_boundary = [&](int v) {
    return have_boundary && cross_max[static_cast<size_t>(v)] > threshold;
  };

  if (have_boundary) {
    const double floor_cov = params.target_coverage - params.swap_tolerance;
    auto top2 = detail::build_top2(selected, sim);

    for (const auto& [identity, members] : by_identity) {
      std::vector<int> sel_nonboundary, unsel_boundary;
      for (int v : members) {
        if (in_set[static_cast<size_t>(v)] && !is_boundary(v))
          sel_nonboundary.push_back(v);
        if (!in_set[static_cast<size_t>(v)] && is_boundary(v))
          unsel_boundary.push_back(v);
      }
      // Hardest examples first.
      std::sort(unsel_boundary.begin(), unsel_boundary.end(), [&](int a, int b) {
        if (cross_max[static_cast<size_t>(a)] != cross_max[static_cast<size_t>(b)])
          return cross_max[static_cast<size_t>(a)] > cross_max[static_cast<size_t>(b)];
        return a < b;
      });

      for (int x : sel_nonboundary) {
        for (size_t yi = 0; yi < unsel_boundary.size(); ++yi) {
          const int y = unsel_boundary[yi];
          double f_new = 0.0;
          for (int v = 0; v < n; ++v) {
            const auto& t = top2[static_cast<size_t>(v)];
            float kept = (t.best1_idx == x) ? t.best2 : t.best1;
            f_new += std::max(kept, sim(v, y));
          }
          if (f_new / f_total >= floor_cov) {
            in_set[static_cast<size_t>(x)] = false;
            in_set[static_cast<size_t>(y)] = true;
            std::replace(selected.begin(), selected.end(), x, y);
            unsel_boundary.erase(unsel_boundary.begin() +
                                 static_cast<std::ptrdiff_t>(yi));
            top2 = detail::build_top2(selected, sim);
            break;
          }
        }
      }
    }
    for (int v = 0; v < n; ++v)
      cur[static_cast<size_t>(v)] = top2[static_cast<size_t>(v)].best1;
  }

  std::sort(selected.begin(), selected.end());
  for (int s : selected) {
    out.selected.push_back(emb.rows[static_cast<size_t>(s)]);
    out.per_identity_counts[identity_of[static_cast<size_t>(s)]]++;
  }
  std::sort(out.selected.begin(), out.selected.end());
  out.coverage_ratio = facility_location_value(selected, sim) / f_total;
  int boundary_count = 0;
  for (int s : selected)
    if (is_boundary(s)) ++boundary_count;
  out.boundary_fraction =
      selected.empty() ? 0.0
                       : static_cast<double>(boundary_count) /
                             static_cast<double>(selected.size());
  return out;
}

}  // namespace wildaudit::coreset
