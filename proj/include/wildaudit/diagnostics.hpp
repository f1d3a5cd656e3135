#pragma once

// Shortcut diagnostics: background-context ratios with risk tiers, mirror
// similarity / nearest-wrong-identity similarity / danger margin with
// laterality tiers, mirrored-query ratio, cross-flank protocol, and the
// mirror-rank percentile aggregation used for cross-model comparisons.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wildaudit/common.hpp"
#include "wildaudit/corpus.hpp"
#include "wildaudit/geometry.hpp"
#include "wildaudit/retrieval.hpp"

namespace wildaudit::diagnostics {

// ---------------------------------------------------------------------------
// Axis 1: background context ratios
// ---------------------------------------------------------------------------

enum class Risk { LOW, MEDIUM, HIGH };

inline const char* to_string(Risk r) {
  switch (r) {
    case Risk::LOW: return "LOW";
    case Risk::MEDIUM: return "MEDIUM";
    default: return "HIGH";
  }
}

/// Risk bands on BG/FG: LOW < 0.95 <= MEDIUM <= 1.10 < HIGH.
inline Risk classify_risk(double bgfg) {
  if (bgfg < 0.95) return Risk::LOW;
  if (bgfg <= 1.10) return Risk::MEDIUM;
  return Risk::HIGH;
}

struct ContextRatios {
  double fg_map = 0.0;
  double inpainted_map = 0.0;
  std::optional<double> bg_sil_map;
  std::optional<double> sil_map;
  double bgfg = 0.0;
  std::optional<double> bgsilfg;
  std::optional<double> silfg;
  Risk risk = Risk::LOW;
};

namespace detail {

inline std::set<std::string> query_set(const retrieval::EvalResult& r) {
  std::set<std::string> s;
  for (const auto& [id, ap] : r.per_query_ap) s.insert(id);
  for (const auto& id : r.excluded_queries) s.insert(id);
  return s;
}

}  // namespace detail

/// Ratios of macro mAP on context variants over the foreground-only macro
/// mAP. All EvalResults must cover the same query set.
inline ContextRatios context_ratios(
    const retrieval::EvalResult& fg, const retrieval::EvalResult& inpainted,
    const std::optional<retrieval::EvalResult>& bg_sil = std::nullopt,
    const std::optional<retrieval::EvalResult>& sil = std::nullopt) {
  const auto fg_queries = detail::query_set(fg);
  auto check_queries = [&](const retrieval::EvalResult& other,
                           const char* name) {
    if (detail::query_set(other) != fg_queries)
      throw DataError(std::string("context_ratios: query set of '") + name +
                      "' differs from foreground");
  };
  check_queries(inpainted, "inpainted");
  if (bg_sil) check_queries(*bg_sil, "bg_silhouette");
  if (sil) check_queries(*sil, "silhouette");

  if (fg.map_macro <= 0.0)
    throw DataError("context_ratios: foreground macro mAP is zero");

  ContextRatios out;
  out.fg_map = fg.map_macro;
  out.inpainted_map = inpainted.map_macro;
  out.bgfg = inpainted.map_macro / fg.map_macro;
  if (bg_sil) {
    out.bg_sil_map = bg_sil->map_macro;
    out.bgsilfg = bg_sil->map_macro / fg.map_macro;
  }
  if (sil) {
    out.sil_map = sil->map_macro;
    out.silfg = sil->map_macro / fg.map_macro;
  }
  out.risk = classify_risk(out.bgfg);
  return out;
}

// ---------------------------------------------------------------------------
// Axis 2: mirror similarity and danger margin
// ---------------------------------------------------------------------------

enum class Tier { T1, T2, T3, T4 };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::T1: return "T1";
    case Tier::T2: return "T2";
    case Tier::T3: return "T3";
    default: return "T4";
  }
}

/// Tier bands on mean mirror similarity, closed on the left:
/// T1 < 0.85 <= T2 < 0.96 <= T3 < 0.99 <= T4.
inline Tier classify_tier(double mirror_sim_mean) {
  if (mirror_sim_mean < 0.85) return Tier::T1;
  if (mirror_sim_mean < 0.96) return Tier::T2;
  if (mirror_sim_mean < 0.99) return Tier::T3;
  return Tier::T4;
}

struct MirrorEntry {
  double mirror_sim = 0.0;
  double nn_sim = 0.0;
  double danger_margin = 0.0;  // nn_sim - mirror_sim
};

struct LateralityReport {
  double mirror_sim_mean = 0.0;
  double mirror_sim_std = 0.0;  // population std
  std::map<std::string, MirrorEntry> per_image;
  Tier tier = Tier::T4;
  std::vector<std::string> positive_margin_ids;
};

/// scores_self: per-image retrieval score of x against flip(x).
/// scores_cross: queries are the flipped images, gallery is the evaluation
/// split; nn_sim(x) is the best score among different-identity gallery
/// entries.
inline LateralityReport mirror_diagnostics(
    const std::map<std::string, double>& scores_self,
    const geometry::ScoreMatrix& scores_cross, const corpus::Corpus& corp) {
  LateralityReport rep;
  double sum = 0.0, sumsq = 0.0;
  for (size_t qi = 0; qi < scores_cross.queries.size(); ++qi) {
    const std::string& x = scores_cross.queries[qi];
    auto self_it = scores_self.find(x);
    if (self_it == scores_self.end())
      throw DataError("mirror_diagnostics: no self score for '" + x + "'");
    const std::string& identity = corp.identity_of(x);

    double nn = 0.0;
    bool found = false;
    for (size_t j = 0; j < scores_cross.gallery.size(); ++j) {
      if (corp.identity_of(scores_cross.gallery[j]) == identity) continue;
      const double s = scores_cross.scores(static_cast<Eigen::Index>(qi),
                                           static_cast<Eigen::Index>(j));
      if (!found || s > nn) {
        nn = s;
        found = true;
      }
    }
    if (!found)
      throw DataError("mirror_diagnostics: '" + x +
                      "' has no different-identity candidates");

    MirrorEntry e;
    e.mirror_sim = self_it->second;
    e.nn_sim = nn;
    e.danger_margin = e.nn_sim - e.mirror_sim;
    rep.per_image[x] = e;
    if (e.danger_margin > 0.0) rep.positive_margin_ids.push_back(x);
    sum += e.mirror_sim;
    sumsq += e.mirror_sim * e.mirror_sim;
  }
  if (rep.per_image.empty())
    throw DataError("mirror_diagnostics: no queries");
  const double n = static_cast<double>(rep.per_image.size());
  rep.mirror_sim_mean = sum / n;
  rep.mirror_sim_std =
      std::sqrt(std::max(0.0, sumsq / n - rep.mirror_sim_mean * rep.mirror_sim_mean));
  rep.tier = classify_tier(rep.mirror_sim_mean);
  std::sort(rep.positive_margin_ids.begin(), rep.positive_margin_ids.end());
  return rep;
}

struct IdentityDanger {
  std::string identity;
  int count = 0;
  int count_positive = 0;
  double mean_dm = 0.0;
  double max_dm = 0.0;
};

struct DangerScan {
  std::vector<IdentityDanger> rows;  // sorted by descending max_dm
  double aggregate_mean = 0.0;
  double aggregate_median = 0.0;
  int total_positive = 0;
};

/// Per-identity danger-margin table, sorted by descending max margin.
inline DangerScan danger_scan(const LateralityReport& report,
                              const corpus::Corpus& corp) {
  std::map<std::string, std::vector<double>> by_identity;
  std::vector<double> all;
  for (const auto& [image_id, e] : report.per_image) {
    by_identity[corp.identity_of(image_id)].push_back(e.danger_margin);
    all.push_back(e.danger_margin);
  }
  if (all.empty()) throw std::invalid_argument("danger_scan: empty report");

  DangerScan scan;
  for (const auto& [identity, dms] : by_identity) {
    IdentityDanger row;
    row.identity = identity;
    row.count = static_cast<int>(dms.size());
    double s = 0.0, mx = dms.front();
    for (double d : dms) {
      s += d;
      mx = std::max(mx, d);
      if (d > 0.0) ++row.count_positive;
    }
    row.mean_dm = s / row.count;
    row.max_dm = mx;
    scan.total_positive += row.count_positive;
    scan.rows.push_back(row);
  }
  std::sort(scan.rows.begin(), scan.rows.end(),
            [](const IdentityDanger& a, const IdentityDanger& b) {
              if (a.max_dm != b.max_dm) return a.max_dm > b.max_dm;
              return a.identity < b.identity;
            });

  double s = 0.0;
  for (double d : all) s += d;
  scan.aggregate_mean = s / static_cast<double>(all.size());
  std::sort(all.begin(), all.end());
  const size_t n = all.size();
  scan.aggregate_median =
      (n % 2 == 1) ? all[n / 2] : 0.5 * (all[n / 2 - 1] + all[n / 2]);
  return scan;
}

/// Mirror-to-regular macro mAP ratio (auxiliary retrieval stress test).
inline double mirrored_query_ratio(const retrieval::EvalResult& regular,
                                   const retrieval::EvalResult& mirrored) {
  if (detail::query_set(regular) != detail::query_set(mirrored))
    throw DataError("mirrored_query_ratio: query sets differ");
  if (regular.map_macro <= 0.0)
    throw DataError("mirrored_query_ratio: regular macro mAP is zero");
  return mirrored.map_macro / regular.map_macro;
}

// ---------------------------------------------------------------------------
// Cross-flank protocol
// ---------------------------------------------------------------------------

struct ProtocolMetrics {
  double map = 0.0;                 // macro
  std::map<int, double> cmc;        // macro CMC@K
  int n_queries = 0;
  int n_excluded = 0;
};

struct CrossFlankReport {
  ProtocolMetrics within;
  ProtocolMetrics cross;
  double cross_within_ratio = 0.0;
  double discriminability = 0.0;  // mean same-ID minus mean diff-ID cross score
};

namespace detail {

struct PooledQuery {
  std::string identity;
  double ap;
  int first_rank;
};

/// Evaluates one direction (restricted query/gallery id sets) of a protocol
/// and appends per-query results to the pool. Queries without positives are
/// counted as excluded.
inline int eval_direction(const geometry::ScoreMatrix& scores,
                          const corpus::Corpus& corp,
                          const std::vector<size_t>& query_rows,
                          const std::vector<size_t>& gallery_cols,
                          std::vector<PooledQuery>& pool) {
  int excluded = 0;
  for (size_t qi : query_rows) {
    const std::string& qid = scores.queries[qi];
    const std::string& identity = corp.identity_of(qid);
    std::vector<std::pair<float, const std::string*>> ranked;
    ranked.reserve(gallery_cols.size());
    for (size_t j : gallery_cols) {
      if (scores.gallery[j] == qid) continue;  // self-exclusion
      ranked.emplace_back(scores.scores(static_cast<Eigen::Index>(qi),
                                        static_cast<Eigen::Index>(j)),
                          &scores.gallery[j]);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return *a.second < *b.second;
    });
    int positives = 0, first_rank = 0;
    double ap_sum = 0.0;
    for (size_t k = 0; k < ranked.size(); ++k) {
      if (corp.identity_of(*ranked[k].second) == identity) {
        ++positives;
        ap_sum += static_cast<double>(positives) / static_cast<double>(k + 1);
        if (first_rank == 0) first_rank = static_cast<int>(k + 1);
      }
    }
    if (positives == 0) {
      ++excluded;
      continue;
    }
    pool.push_back({identity, ap_sum / positives, first_rank});
  }
  return excluded;
}

inline ProtocolMetrics pool_metrics(const std::vector<PooledQuery>& pool,
                                    int excluded, const std::vector<int>& ks) {
  ProtocolMetrics m;
  m.n_queries = static_cast<int>(pool.size());
  m.n_excluded = excluded;
  if (pool.empty()) return m;
  std::map<std::string, std::vector<const PooledQuery*>> by_identity;
  for (const auto& q : pool) by_identity[q.identity].push_back(&q);
  double macro = 0.0;
  for (const auto& [identity, qs] : by_identity) {
    double s = 0.0;
    for (const auto* q : qs) s += q->ap;
    macro += s / static_cast<double>(qs.size());
  }
  m.map = macro / static_cast<double>(by_identity.size());
  for (int k : ks) {
    double macro_cmc = 0.0;
    for (const auto& [identity, qs] : by_identity) {
      double hit = 0.0;
      for (const auto* q : qs) hit += (q->first_rank <= k) ? 1.0 : 0.0;
      macro_cmc += hit / static_cast<double>(qs.size());
    }
    m.cmc[k] = macro_cmc / static_cast<double>(by_identity.size());
  }
  return m;
}

}  // namespace detail

/// Within-flank (L->L pooled with R->R, self-excluded) versus cross-flank
/// (L->R pooled with R->L) retrieval. Queries without a positive in the
/// relevant gallery are excluded from that split. Discriminability is the
/// mean same-identity cross-flank score minus the mean different-identity
/// cross-flank score.
inline CrossFlankReport cross_flank_eval(const geometry::ScoreMatrix& scores,
                                         const corpus::Corpus& corp,
                                         const std::vector<int>& ks = {1, 5,
                                                                       10}) {
  std::vector<size_t> left_q, right_q, left_g, right_g;
  for (size_t i = 0; i < scores.queries.size(); ++i) {
    const auto f = corp.record(scores.queries[i]).flank;
    if (f == corpus::Flank::left) left_q.push_back(i);
    if (f == corpus::Flank::right) right_q.push_back(i);
  }
  for (size_t j = 0; j < scores.gallery.size(); ++j) {
    const auto f = corp.record(scores.gallery[j]).flank;
    if (f == corpus::Flank::left) left_g.push_back(j);
    if (f == corpus::Flank::right) right_g.push_back(j);
  }
  if (left_q.empty() || right_q.empty())
    throw DataError("cross_flank_eval: need both left- and right-flank images");

  std::set<std::string> left_ids, both_ids;
  for (size_t i : left_q) left_ids.insert(corp.identity_of(scores.queries[i]));
  for (size_t i : right_q) {
    if (left_ids.count(corp.identity_of(scores.queries[i])))
      both_ids.insert(corp.identity_of(scores.queries[i]));
  }
  if (both_ids.empty())
    throw DataError("cross_flank_eval: no identity has both flanks");

  CrossFlankReport rep;
  {
    std::vector<detail::PooledQuery> pool;
    int excl = detail::eval_direction(scores, corp, left_q, left_g, pool);
    excl += detail::eval_direction(scores, corp, right_q, right_g, pool);
    rep.within = detail::pool_metrics(pool, excl, ks);
  }
  {
    std::vector<detail::PooledQuery> pool;
    int excl = detail::eval_direction(scores, corp, left_q, right_g, pool);
    excl += detail::eval_direction(scores, corp, right_q, left_g, pool);
    rep.cross = detail::pool_metrics(pool, excl, ks);
  }
  // Degenerate within-flank pools (every query excluded) leave the ratio
  // undefined; reported as NaN rather than an error.
  rep.cross_within_ratio =
      rep.within.map > 0.0 ? rep.cross.map / rep.within.map
                           : std::numeric_limits<double>::quiet_NaN();

  double same_sum = 0.0, diff_sum = 0.0;
  long long same_n = 0, diff_n = 0;
  auto accumulate = [&](const std::vector<size_t>& qs,
                        const std::vector<size_t>& gs) {
    for (size_t qi : qs) {
      const std::string& identity = corp.identity_of(scores.queries[qi]);
      for (size_t j : gs) {
        const double s = scores.scores(static_cast<Eigen::Index>(qi),
                                       static_cast<Eigen::Index>(j));
        if (corp.identity_of(scores.gallery[j]) == identity) {
          same_sum += s;
          ++same_n;
        } else {
          diff_sum += s;
          ++diff_n;
        }
      }
    }
  };
  accumulate(left_q, right_g);
  accumulate(right_q, left_g);
  if (same_n == 0 || diff_n == 0)
    throw DataError("cross_flank_eval: missing same- or different-identity "
                    "cross-flank pairs");
  rep.discriminability = same_sum / same_n - diff_sum / diff_n;
  return rep;
}

// ---------------------------------------------------------------------------
// Mirror-rank percentile aggregation
// ---------------------------------------------------------------------------

struct RankGroupEntry {
  std::string model_id;
  int seed = 0;
  double mirror_sim_mean = 0.0;
};

struct PercentileSummary {
  double mean_pct = 0.0;
  double std_pct = 0.0;  // population std across seeds
};

/// Within each seed, models are ranked ascending by mean mirror similarity
/// (average ranks on ties) and mapped to rank/(M-1). Returns per-model mean
/// and population std across seeds. The group must be rectangular.
inline std::map<std::string, PercentileSummary> mirror_rank_percentile(
    const std::vector<RankGroupEntry>& group) {
  std::map<int, std::vector<const RankGroupEntry*>> by_seed;
  std::set<std::string> models;
  for (const auto& e : group) {
    by_seed[e.seed].push_back(&e);
    models.insert(e.model_id);
  }
  if (models.size() < 2)
    throw DataError("mirror_rank_percentile: need at least two models");
  for (const auto& [seed, entries] : by_seed) {
    if (entries.size() != models.size())
      throw DataError("mirror_rank_percentile: ragged group at seed " +
                      std::to_string(seed));
    std::set<std::string> seen;
    for (const auto* e : entries) seen.insert(e->model_id);
    if (seen != models)
      throw DataError("mirror_rank_percentile: ragged group at seed " +
                      std::to_string(seed));
  }

  const double denom = static_cast<double>(models.size()) - 1.0;
  std::map<std::string, std::vector<double>> pcts;
  for (const auto& [seed, entries] : by_seed) {
    std::vector<const RankGroupEntry*> order(entries.begin(), entries.end());
    std::sort(order.begin(), order.end(),
              [](const RankGroupEntry* a, const RankGroupEntry* b) {
                if (a->mirror_sim_mean != b->mirror_sim_mean)
                  return a->mirror_sim_mean < b->mirror_sim_mean;
                return a->model_id < b->model_id;
              });
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() &&
             order[j + 1]->mirror_sim_mean == order[i]->mirror_sim_mean)
        ++j;
      const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
      for (size_t k = i; k <= j; ++k)
        pcts[order[k]->model_id].push_back(avg_rank / denom);
      i = j + 1;
    }
  }

  std::map<std::string, PercentileSummary> out;
  for (const auto& [model, vals] : pcts) {
    double s = 0.0;
    for (double v : vals) s += v;
    const double mean = s / static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    out[model] = {mean, std::sqrt(var)};
  }
  return out;
}

}  // namespace wildaudit::diagnostics
