#pragma once

// Query-gallery evaluation: per-query Average Precision, identity-balanced
// (macro) and instance-weighted (micro) mAP, micro/macro CMC@K.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wildaudit/common.hpp"
#include "wildaudit/corpus.hpp"
#include "wildaudit/geometry.hpp"

namespace wildaudit::retrieval {

struct EvalResult {
  std::map<std::string, double> per_query_ap;
  std::map<std::string, int> first_correct_rank;  // 1-indexed
  double map_macro = 0.0;
  double map_micro = 0.0;
  std::map<int, std::pair<double, double>> cmc;  // K -> (macro, micro)
  std::vector<std::string> excluded_queries;      // no positive in gallery
};

/// AP over a ranked binary relevance list: (1/P) * sum of precision@k at the
/// positive ranks. Returns nullopt when the list has no positive (excluded
/// query).
inline std::optional<double> average_precision(
    const std::vector<int>& relevance) {
  if (relevance.empty())
    throw std::invalid_argument("average_precision: empty relevance list");
  int positives = 0;
  double sum = 0.0;
  for (size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k]) {
      ++positives;
      sum += static_cast<double>(positives) / static_cast<double>(k + 1);
    }
  }
  if (positives == 0) return std::nullopt;
  return sum / positives;
}

namespace detail {

struct RankedQuery {
  std::string query_id;
  std::string identity;
  std::optional<double> ap;
  int first_correct_rank = 0;  // 0 when excluded
  int gallery_size = 0;
};

/// Ranks one query's gallery (self-pair excluded, ties broken by ascending
/// gallery image_id) and computes AP and the first-correct rank.
inline RankedQuery rank_one_query(const geometry::ScoreMatrix& scores,
                                  const corpus::Corpus& corp, size_t qi) {
  RankedQuery out;
  out.query_id = scores.queries[qi];
  out.identity = corp.identity_of(out.query_id);

  std::vector<size_t> order;
  order.reserve(scores.gallery.size());
  for (size_t j = 0; j < scores.gallery.size(); ++j) {
    if (scores.gallery[j] == out.query_id) continue;  // self-exclusion
    order.push_back(j);
  }
  if (order.empty())
    throw DataError("empty gallery for query '" + out.query_id + "'");
  const auto row = scores.scores.row(static_cast<Eigen::Index>(qi));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const float sa = row(static_cast<Eigen::Index>(a));
    const float sb = row(static_cast<Eigen::Index>(b));
    if (sa != sb) return sa > sb;
    return scores.gallery[a] < scores.gallery[b];
  });

  out.gallery_size = static_cast<int>(order.size());
  std::vector<int> relevance(order.size());
  for (size_t k = 0; k < order.size(); ++k) {
    const bool pos = corp.identity_of(scores.gallery[order[k]]) == out.identity;
    relevance[k] = pos ? 1 : 0;
    if (pos && out.first_correct_rank == 0)
      out.first_correct_rank = static_cast<int>(k + 1);
  }
  out.ap = average_precision(relevance);
  return out;
}

}  // namespace detail

/// Full protocol evaluation. Queries without a same-identity gallery image
/// are excluded and listed. Macro metrics average per-identity means; micro
/// metrics average over queries.
inline EvalResult evaluate(const geometry::ScoreMatrix& scores,
                           const corpus::Corpus& corp,
                           const std::vector<int>& ks = {1, 5, 10}) {
  if (!std::is_sorted(ks.begin(), ks.end()))
    throw std::invalid_argument("evaluate: ks must be sorted ascending");
  if (scores.queries.empty())
    throw DataError("evaluate: no queries");
  if (scores.gallery.empty())
    throw DataError("evaluate: empty gallery");

  EvalResult res;
  std::map<std::string, std::vector<double>> ap_by_identity;
  std::map<std::string, std::vector<int>> rank_by_identity;
  std::vector<int> ranks;

  for (size_t qi = 0; qi < scores.queries.size(); ++qi) {
    const auto rq = detail::rank_one_query(scores, corp, qi);
    if (!rq.ap) {
      res.excluded_queries.push_back(rq.query_id);
      continue;
    }
    res.per_query_ap[rq.query_id] = *rq.ap;
    res.first_correct_rank[rq.query_id] = rq.first_correct_rank;
    ap_by_identity[rq.identity].push_back(*rq.ap);
    rank_by_identity[rq.identity].push_back(rq.first_correct_rank);
    ranks.push_back(rq.first_correct_rank);
  }

  if (res.per_query_ap.empty())
    throw DataError("evaluate: every query was excluded (no positives)");

  double micro_sum = 0.0;
  for (const auto& [id, ap] : res.per_query_ap) micro_sum += ap;
  res.map_micro = micro_sum / static_cast<double>(res.per_query_ap.size());

  double macro_sum = 0.0;
  for (const auto& [identity, aps] : ap_by_identity) {
    double s = 0.0;
    for (double a : aps) s += a;
    macro_sum += s / static_cast<double>(aps.size());
  }
  res.map_macro = macro_sum / static_cast<double>(ap_by_identity.size());

  for (int k : ks) {
    double micro = 0.0;
    for (int r : ranks) micro += (r <= k) ? 1.0 : 0.0;
    micro /= static_cast<double>(ranks.size());
    double macro = 0.0;
    for (const auto& [identity, rs] : rank_by_identity) {
      double hit = 0.0;
      for (int r : rs) hit += (r <= k) ? 1.0 : 0.0;
      macro += hit / static_cast<double>(rs.size());
    }
    macro /= static_cast<double>(rank_by_identity.size());
    res.cmc[k] = {macro, micro};
  }
  return res;
}

/// Recomputes macro mAP from the per-query table; the stored value must agree
/// to 1e-12 (identity-rebalance self-consistency).
inline double identity_rebalance_check(const EvalResult& result,
                                       const corpus::Corpus& corp) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [query_id, ap] : result.per_query_ap) {
    auto& slot = acc[corp.identity_of(query_id)];
    slot.first += ap;
    slot.second += 1;
  }
  if (acc.empty()) throw std::invalid_argument("identity_rebalance_check: empty result");
  double macro = 0.0;
  for (const auto& [identity, slot] : acc)
    macro += slot.first / slot.second;
  macro /= static_cast<double>(acc.size());
  if (std::abs(macro - result.map_macro) > 1e-12) {
    throw std::logic_error("identity_rebalance_check: stored macro mAP " +
                           format_g17(result.map_macro) +
                           " != recomputed " + format_g17(macro));
  }
  return macro;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

inline nlohmann::json eval_to_json(const EvalResult& r) {
  nlohmann::json j;
  j["map_macro"] = r.map_macro;
  j["map_micro"] = r.map_micro;
  j["n_queries_evaluated"] = r.per_query_ap.size();
  j["excluded_queries"] = r.excluded_queries;
  nlohmann::json cmc;
  for (const auto& [k, mm] : r.cmc) {
    cmc[std::to_string(k)] = {{"macro", mm.first}, {"micro", mm.second}};
  }
  j["cmc"] = cmc;
  return j;
}

inline void write_eval_json(const EvalResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write eval JSON: " + path);
  out << eval_to_json(r).dump(2) << "\n";
}

/// Per-query table: image_id, identity, ap, first_correct_rank.
inline void write_per_query_csv(const EvalResult& r,
                                const corpus::Corpus& corp,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write per-query CSV: " + path);
  out << "image_id,identity,ap,first_correct_rank\n";
  for (const auto& [query_id, ap] : r.per_query_ap) {
    out << query_id << ',' << corp.identity_of(query_id) << ','
        << format_g17(ap) << ',' << r.first_correct_rank.at(query_id) << '\n';
  }
}

/// Reads back a per-query CSV written by write_per_query_csv; returns
/// image_id -> ap. Used by the paired-statistics pipeline.
inline std::map<std::string, double> read_per_query_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open per-query CSV: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      trim(line) != "image_id,identity,ap,first_correct_rank")
    throw DataError("per-query CSV header mismatch in " + path);
  std::map<std::string, double> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw DataError("bad per-query CSV row in " + path);
    out[f[0]] = parse_double(f[2], path);
  }
  return out;
}

}  // namespace wildaudit::retrieval
