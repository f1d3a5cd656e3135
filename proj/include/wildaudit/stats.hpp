#pragma once

// Rank correlations with bootstrap CIs and the paired
// Wilcoxon -> Fisher -> Holm significance pipeline.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "wildaudit/common.hpp"

namespace wildaudit::stats {

// ---------------------------------------------------------------------------
// Ranking helpers
// ---------------------------------------------------------------------------

/// Average ranks (1-based) with ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Correlations
// ---------------------------------------------------------------------------

struct Correlation {
  double coefficient = 0.0;
  double p = 1.0;
};

namespace detail {

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman_rho_only(const std::vector<double>& x,
                                const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

struct TauCounts {
  long long concordant = 0, discordant = 0;
  // tie bookkeeping for the tau-b denominator and variance
  double n1 = 0, n2 = 0;              // sum t(t-1)/2 per tie group (x, y)
  double vt = 0, vu = 0;              // sum t(t-1)(2t+5)
  double v1t = 0, v1u = 0;            // sum t(t-1)
  double v2t = 0, v2u = 0;            // sum t(t-1)(t-2)
};

inline TauCounts tau_counts(const std::vector<double>& x,
                            const std::vector<double>& y) {
  TauCounts c;
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      const double prod = dx * dy;
      if (prod > 0) ++c.concordant;
      else if (prod < 0) ++c.discordant;
    }
  }
  auto tally = [](const std::vector<double>& v, double& pairs, double& vterm,
                  double& v1, double& v2) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    size_t i = 0;
    while (i < s.size()) {
      size_t j = i;
      while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      pairs += t * (t - 1) / 2.0;
      vterm += t * (t - 1) * (2 * t + 5);
      v1 += t * (t - 1);
      v2 += t * (t - 1) * (t - 2);
      i = j + 1;
    }
  };
  tally(x, c.n1, c.vt, c.v1t, c.v2t);
  tally(y, c.n2, c.vu, c.v1u, c.v2u);
  return c;
}

inline double kendall_tau_only(const std::vector<double>& x,
                               const std::vector<double>& y) {
  const auto c = tau_counts(x, y);
  const double n0 =
      static_cast<double>(x.size()) * (static_cast<double>(x.size()) - 1) / 2.0;
  const double denom = std::sqrt((n0 - c.n1) * (n0 - c.n2));
  return static_cast<double>(c.concordant - c.discordant) / denom;
}

}  // namespace detail

/// Spearman rank correlation with average-rank ties. p-value: exact
/// permutation enumeration for n <= 10, t-approximation otherwise.
inline Correlation spearman(const std::vector<double>& x,
                            const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("spearman: length mismatch");
  const size_t n = x.size();
  if (n < 3) throw std::invalid_argument("spearman: n must be >= 3");
  if (is_constant(x) || is_constant(y))
    throw DataError("spearman: constant input list");

  Correlation out;
  out.coefficient = detail::spearman_rho_only(x, y);

  if (n <= 10) {
    // Exact permutation null: every pairing of the observed rank vectors.
    const auto rx = average_ranks(x);
    auto ry = average_ranks(y);
    std::sort(ry.begin(), ry.end());
    const double obs = std::abs(out.coefficient) - 1e-12;
    long long total = 0, extreme = 0;
    do {
      ++total;
      if (std::abs(detail::pearson(rx, ry)) >= obs) ++extreme;
    } while (std::next_permutation(ry.begin(), ry.end()));
    out.p = static_cast<double>(extreme) / static_cast<double>(total);
  } else {
    const double rho = out.coefficient;
    if (std::abs(rho) >= 1.0) {
      out.p = 0.0;
    } else {
      const double df = static_cast<double>(n) - 2.0;
      const double t = rho * std::sqrt(df / (1.0 - rho * rho));
      boost::math::students_t dist(df);
      out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
  }
  return out;
}

/// Kendall tau-b with tie correction; p from the normal approximation with
/// tie-corrected variance.
inline Correlation kendall(const std::vector<double>& x,
                           const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("kendall: length mismatch");
  const double n = static_cast<double>(x.size());
  if (x.size() < 3) throw std::invalid_argument("kendall: n must be >= 3");
  if (is_constant(x) || is_constant(y))
    throw DataError("kendall: constant input list");

  const auto c = detail::tau_counts(x, y);
  const double n0 = n * (n - 1) / 2.0;
  Correlation out;
  out.coefficient = static_cast<double>(c.concordant - c.discordant) /
                    std::sqrt((n0 - c.n1) * (n0 - c.n2));

  // Variance of (C - D) under the null with ties (Kendall 1970).
  const double v0 = n * (n - 1) * (2 * n + 5);
  double var = (v0 - c.vt - c.vu) / 18.0 +
               (c.v1t * c.v1u) / (2.0 * n * (n - 1)) +
               (c.v2t * c.v2u) / (9.0 * n * (n - 1) * (n - 2));
  if (var <= 0.0) {
    out.p = 1.0;
    return out;
  }
  const double z = static_cast<double>(c.concordant - c.discordant) / std::sqrt(var);
  out.p = std::erfc(std::abs(z) / std::sqrt(2.0));
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap confidence intervals
// ---------------------------------------------------------------------------

enum class CorrStat { spearman, kendall };

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
  int skipped = 0;  // resamples with a constant column (statistic undefined)
};

namespace detail {

/// Linear-interpolation quantile over a sorted sample (the common "type 7").
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

/// Percentile (2.5%, 97.5%) interval over b paired resamples. Resample i is
/// drawn from a SplitMix64 stream keyed by (seed, i), so results are
/// identical under any parallel schedule. Resamples where either column
/// becomes constant are skipped and counted.
inline BootstrapCi bootstrap_ci(const std::vector<double>& x,
                                const std::vector<double>& y, CorrStat stat,
                                int b, uint64_t seed) {
  if (x.size() != y.size())
    throw std::invalid_argument("bootstrap_ci: length mismatch");
  if (b < 1000) throw std::invalid_argument("bootstrap_ci: b must be >= 1000");
  const size_t n = x.size();
  if (n < 3) throw std::invalid_argument("bootstrap_ci: n must be >= 3");

  std::vector<double> stats;
  stats.reserve(static_cast<size_t>(b));
  int skipped = 0;
  std::vector<double> rx(n), ry(n);
  for (int i = 0; i < b; ++i) {
    SplitMix64 rng(seed, static_cast<uint64_t>(i));
    for (size_t k = 0; k < n; ++k) {
      const size_t idx = static_cast<size_t>(rng.next_below(n));
      rx[k] = x[idx];
      ry[k] = y[idx];
    }
    if (is_constant(rx) || is_constant(ry)) {
      ++skipped;
      continue;
    }
    stats.push_back(stat == CorrStat::spearman
                        ? detail::spearman_rho_only(rx, ry)
                        : detail::kendall_tau_only(rx, ry));
  }
  if (stats.empty()) throw DataError("bootstrap_ci: all resamples degenerate");
  std::sort(stats.begin(), stats.end());
  BootstrapCi ci;
  ci.lo = detail::quantile_sorted(stats, 0.025);
  ci.hi = detail::quantile_sorted(stats, 0.975);
  ci.skipped = skipped;
  return ci;
}

struct CorrelationResult {
  double spearman_rho = 0.0, spearman_p = 1.0;
  double kendall_tau = 0.0, kendall_p = 1.0;
  BootstrapCi ci_rho, ci_tau;
  int n = 0;
  int b = 0;
  uint64_t seed = 0;
};

/// Bundles both rank correlations plus bootstrap CIs for report blocks.
inline CorrelationResult correlate(const std::vector<double>& x,
                                   const std::vector<double>& y, int b,
                                   uint64_t seed) {
  CorrelationResult r;
  const auto sp = spearman(x, y);
  const auto kd = kendall(x, y);
  r.spearman_rho = sp.coefficient;
  r.spearman_p = sp.p;
  r.kendall_tau = kd.coefficient;
  r.kendall_p = kd.p;
  r.ci_rho = bootstrap_ci(x, y, CorrStat::spearman, b, seed);
  r.ci_tau = bootstrap_ci(x, y, CorrStat::kendall, b, seed);
  r.n = static_cast<int>(x.size());
  r.b = b;
  r.seed = seed;
  return r;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

/// Two-sided Wilcoxon signed-rank p-value on paired differences. Zeros are
/// dropped; magnitudes are ranked with average ranks. Exact null enumeration
/// (dynamic program over doubled ranks, which stay integral under .5 average
/// ranks) for n <= 25 after zero handling, normal approximation with tie and
/// continuity correction otherwise.
inline double wilcoxon_signed_rank(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0.0) d.push_back(v);
  if (d.empty()) throw DataError("wilcoxon: degenerate pairing (all zeros)");
  const size_t n = d.size();
  if (n < 5)
    throw DataError("wilcoxon: fewer than 5 nonzero differences");

  std::vector<double> mags(n);
  for (size_t i = 0; i < n; ++i) mags[i] = std::abs(d[i]);
  const auto ranks = average_ranks(mags);

  double w_plus = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (d[i] > 0.0) w_plus += ranks[i];

  if (n <= 25) {
    // Doubled ranks are integers even with .5 average ranks.
    std::vector<long long> r2(n);
    long long total = 0;
    for (size_t i = 0; i < n; ++i) {
      r2[i] = std::llround(2.0 * ranks[i]);
      total += r2[i];
    }
    // counts[s] = number of sign assignments with doubled rank sum s
    std::vector<double> counts(static_cast<size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long long reach = 0;
    for (size_t i = 0; i < n; ++i) {
      reach += r2[i];
      for (long long s = reach; s >= r2[i]; --s)
        counts[static_cast<size_t>(s)] += counts[static_cast<size_t>(s - r2[i])];
    }
    const long long w2 = std::llround(2.0 * w_plus);
    double below = 0.0, above = 0.0, all = 0.0;
    for (long long s = 0; s <= total; ++s) {
      const double c = counts[static_cast<size_t>(s)];
      all += c;
      if (s <= w2) below += c;
      if (s >= w2) above += c;
    }
    return std::min(1.0, 2.0 * std::min(below, above) / all);
  }

  // Normal approximation with tie correction and continuity correction.
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> s = mags;
    std::sort(s.begin(), s.end());
    size_t i = 0;
    while (i < s.size()) {
      size_t j = i;
      while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  double dev = w_plus - mean;
  if (dev > 0.5) dev -= 0.5;        // continuity correction toward the mean
  else if (dev < -0.5) dev += 0.5;
  else dev = 0.0;
  const double z = dev / std::sqrt(var);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

// ---------------------------------------------------------------------------
// Fisher combination and Holm correction
// ---------------------------------------------------------------------------

struct FisherResult {
  double stat = 0.0;
  double p = 1.0;
};

/// Fisher's method: stat = -2 sum ln(p_i), p from the chi-square survival
/// function with 2k degrees of freedom.
inline FisherResult fisher_combine(const std::vector<double>& ps) {
  if (ps.empty()) throw std::invalid_argument("fisher_combine: empty input");
  FisherResult r;
  for (double p : ps) {
    if (p <= 0.0)
      throw DataError("fisher_combine: p = 0 input (log divergence)");
    if (p > 1.0)
      throw DataError("fisher_combine: p > 1 input");
    r.stat += -2.0 * std::log(p);
  }
  boost::math::chi_squared dist(2.0 * static_cast<double>(ps.size()));
  r.p = boost::math::cdf(boost::math::complement(dist, r.stat));
  return r;
}

/// Step-down Holm adjustment, returned in the original order.
inline std::vector<double> holm_adjust(const std::vector<double>& ps) {
  const size_t m = ps.size();
  if (m == 0) throw std::invalid_argument("holm_adjust: empty input");
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return ps[a] < ps[b]; });
  std::vector<double> adjusted(m);
  double running = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const double candidate =
        std::min(1.0, static_cast<double>(m - i) * ps[order[i]]);
    running = std::max(running, candidate);
    adjusted[order[i]] = running;
  }
  return adjusted;
}

// ---------------------------------------------------------------------------
// Paired pipeline
// ---------------------------------------------------------------------------

struct PairedTestResult {
  std::string endpoint;
  std::vector<double> per_seed_p;
  double fisher_stat = 0.0;
  double fisher_p = 1.0;
  double holm_adjusted_p = 1.0;
  bool supported = false;
  std::string note;  // nonempty when the endpoint was degenerate
};

/// One matched objective pair: per endpoint, per seed, the aligned per-query
/// metric vectors for model A and model B.
struct PairedPipelineInput {
  std::string model_a, model_b;
  // endpoint -> seed -> (per-query values A, per-query values B)
  std::map<std::string,
           std::map<int, std::pair<std::vector<double>, std::vector<double>>>>
      data;
};

/// Per seed a two-sided Wilcoxon on per-query differences, Fisher-combined
/// across seeds per endpoint, then Holm across this pair's endpoint family.
/// A pair missing any required seed is rejected with a diagnostic.
/// Degenerate endpoints (all-zero differences in some seed) are reported with
/// a note and excluded from the Holm family.
inline std::vector<PairedTestResult> paired_pipeline(
    const PairedPipelineInput& input, const std::vector<int>& required_seeds,
    double alpha = 0.05) {
  if (input.data.empty())
    throw std::invalid_argument("paired_pipeline: no endpoints");
  for (const auto& [endpoint, per_seed] : input.data) {
    for (int seed : required_seeds) {
      auto it = per_seed.find(seed);
      if (it == per_seed.end())
        throw DataError("paired_pipeline: pair (" + input.model_a + ", " +
                        input.model_b + ") endpoint '" + endpoint +
                        "' missing seed " + std::to_string(seed));
      if (it->second.first.size() != it->second.second.size() ||
          it->second.first.empty())
        throw DataError("paired_pipeline: misaligned per-query lists for '" +
                        endpoint + "' seed " + std::to_string(seed));
    }
  }

  std::vector<PairedTestResult> results;
  for (const auto& [endpoint, per_seed] : input.data) {
    PairedTestResult r;
    r.endpoint = endpoint;
    try {
      for (int seed : required_seeds) {
        const auto& [a, b] = per_seed.at(seed);
        std::vector<double> diffs(a.size());
        for (size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
        r.per_seed_p.push_back(wilcoxon_signed_rank(diffs));
      }
      const auto fisher = fisher_combine(r.per_seed_p);
      r.fisher_stat = fisher.stat;
      r.fisher_p = fisher.p;
    } catch (const DataError& e) {
      r.note = e.what();
      r.per_seed_p.clear();
      r.fisher_p = 1.0;
    }
    results.push_back(std::move(r));
  }

  std::vector<size_t> valid;
  std::vector<double> fisher_ps;
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i].note.empty()) {
      valid.push_back(i);
      fisher_ps.push_back(results[i].fisher_p);
    }
  }
  if (!fisher_ps.empty()) {
    const auto adjusted = holm_adjust(fisher_ps);
    for (size_t k = 0; k < valid.size(); ++k) {
      results[valid[k]].holm_adjusted_p = adjusted[k];
      results[valid[k]].supported = adjusted[k] < alpha;
    }
  }
  return results;
}

}  // namespace wildaudit::stats
