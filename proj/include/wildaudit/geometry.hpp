#pragma once

// Retrieval score functions: cosine similarity and the Lorentz hyperboloid
// model (curvature fixed to 1): inner product, geodesic distance, exponential
// and logarithmic maps at the origin, exp(-d) score transform.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wildaudit/common.hpp"
#include "wildaudit/corpus.hpp"

namespace wildaudit::geometry {

/// Tangent vectors are clipped to this norm before the exponential map.
inline constexpr double kTangentClipNorm = 3.0;

/// arccosh argument drift tolerated below 1 before inputs are rejected as
/// off-manifold.
inline constexpr double kArccoshClampTol = 1e-7;

/// Cancellation noise in <u,v>_L sits a few ulp above 1 for coincident
/// points, and arccosh amplifies it to ~1e-8. Arguments this close to 1 are
/// snapped to distance 0; genuine distances >= 1e-6 are unaffected.
inline constexpr double kCoincidentSnapTol = 1e-13;

/// Point on the hyperboloid <x,x>_L = -1, x0 >= 1, stored in ambient
/// (D+1) coordinates. Construct via exp_map_origin to keep the invariant.
struct LorentzPoint {
  Eigen::VectorXd coords;  // (time, spatial...)

  double time() const { return coords[0]; }
  Eigen::Index ambient_dim() const { return coords.size(); }
};

inline LorentzPoint lorentz_origin(int dim) {
  LorentzPoint p;
  p.coords = Eigen::VectorXd::Zero(dim + 1);
  p.coords[0] = 1.0;
  return p;
}

/// Bilinear form <u,v>_L = -u0*v0 + sum_i ui*vi.
inline double lorentz_inner(const LorentzPoint& u, const LorentzPoint& v) {
  if (u.ambient_dim() != v.ambient_dim())
    throw std::invalid_argument("lorentz_inner: dimension mismatch");
  double s = -u.coords[0] * v.coords[0];
  for (Eigen::Index i = 1; i < u.ambient_dim(); ++i)
    s += u.coords[i] * v.coords[i];
  return s;
}

/// Geodesic distance arccosh(-<u,v>_L). Arguments below 1 - kArccoshClampTol
/// signal off-manifold input; smaller drift is clamped to 1.
inline double lorentz_distance(const LorentzPoint& u, const LorentzPoint& v) {
  const double chi = -lorentz_inner(u, v);
  if (chi < 1.0 - kArccoshClampTol) {
    throw DataError("lorentz_distance: arccosh argument " +
                    std::to_string(chi) + " below 1; off-manifold input");
  }
  if (chi < 1.0 + kCoincidentSnapTol) return 0.0;
  return std::acosh(chi);
}

namespace detail {

inline double sinhc(double x) {  // sinh(x)/x, smooth at 0
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 + x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sinh(x) / x;
}

}  // namespace detail

/// Exponential map at the origin. The tangent norm is clipped to
/// kTangentClipNorm first; the zero tangent maps to the origin.
inline LorentzPoint exp_map_origin(const Eigen::VectorXd& tangent) {
  const double norm = tangent.norm();
  Eigen::VectorXd t = tangent;
  double r = norm;
  if (norm > kTangentClipNorm) {
    t *= kTangentClipNorm / norm;
    r = kTangentClipNorm;
  }
  LorentzPoint p;
  p.coords.resize(tangent.size() + 1);
  p.coords[0] = std::cosh(r);
  p.coords.tail(tangent.size()) = detail::sinhc(r) * t;
  return p;
}

/// Logarithmic map at the origin (inverse of exp_map_origin on its image).
inline Eigen::VectorXd log_map_origin(const LorentzPoint& p) {
  const LorentzPoint o = lorentz_origin(static_cast<int>(p.ambient_dim()) - 1);
  const double d = lorentz_distance(p, o);
  const Eigen::VectorXd spatial = p.coords.tail(p.ambient_dim() - 1);
  const double snorm = spatial.norm();
  if (snorm == 0.0) return Eigen::VectorXd::Zero(p.ambient_dim() - 1);
  return (d / snorm) * spatial;
}

/// Validates the manifold invariant <x,x>_L = -1 within tol and x0 >= 1.
inline bool on_manifold(const LorentzPoint& p, double tol = 1e-6) {
  if (p.coords[0] < 1.0 - tol) return false;
  return std::abs(lorentz_inner(p, p) + 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Score matrices
// ---------------------------------------------------------------------------

enum class ScoreKind { cosine, exp_neg_lorentz, external };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::cosine: return "cosine";
    case ScoreKind::exp_neg_lorentz: return "exp_neg_lorentz";
    default: return "external";
  }
}

/// Query x gallery retrieval scores; larger means more similar for every kind.
struct ScoreMatrix {
  std::vector<std::string> queries;
  std::vector<std::string> gallery;
  Eigen::MatrixXf scores;  // Q x G
  ScoreKind kind = ScoreKind::external;
};

/// scores[i][j] = dot(query_i, gallery_j) on normalized rows.
inline ScoreMatrix cosine_scores(const corpus::EmbeddingMatrix& queries,
                                 const corpus::EmbeddingMatrix& gallery) {
  if (queries.dim != gallery.dim)
    throw DataError("cosine_scores: dimension mismatch (" +
                    std::to_string(queries.dim) + " vs " +
                    std::to_string(gallery.dim) + ")");
  if (!corpus::is_row_normalized(queries.data) ||
      !corpus::is_row_normalized(gallery.data))
    throw std::invalid_argument("cosine_scores expects normalized rows");
  ScoreMatrix out;
  out.queries = queries.rows;
  out.gallery = gallery.rows;
  out.scores.noalias() = queries.data * gallery.data.transpose();
  out.kind = ScoreKind::cosine;
  return out;
}

/// scores[i][j] = exp(-d_L(q_i, g_j)); in (0,1], strictly decreasing in
/// distance, so it preserves the retrieval ordering of -d.
inline ScoreMatrix exp_neg_distance_scores(
    const std::vector<LorentzPoint>& points_q,
    const std::vector<LorentzPoint>& points_g,
    std::vector<std::string> query_ids, std::vector<std::string> gallery_ids) {
  if (points_q.size() != query_ids.size() ||
      points_g.size() != gallery_ids.size())
    throw std::invalid_argument("exp_neg_distance_scores: id/point mismatch");
  ScoreMatrix out;
  out.queries = std::move(query_ids);
  out.gallery = std::move(gallery_ids);
  out.scores.resize(static_cast<Eigen::Index>(points_q.size()),
                    static_cast<Eigen::Index>(points_g.size()));
  for (size_t i = 0; i < points_q.size(); ++i) {
    for (size_t j = 0; j < points_g.size(); ++j) {
      out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>(
              std::exp(-lorentz_distance(points_q[i], points_g[j])));
    }
  }
  out.kind = ScoreKind::exp_neg_lorentz;
  return out;
}

/// CSV export (query_id, gallery_id, score), 6 decimal places. This doubles
/// as the challenge submission format.
inline void write_scores_csv(const ScoreMatrix& sm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores CSV: " + path);
  out << "query_id,gallery_id,score\n";
  for (size_t i = 0; i < sm.queries.size(); ++i) {
    for (size_t j = 0; j < sm.gallery.size(); ++j) {
      out << sm.queries[i] << ',' << sm.gallery[j] << ','
          << format_fixed(sm.scores(static_cast<Eigen::Index>(i),
                                    static_cast<Eigen::Index>(j)),
                          6)
          << '\n';
    }
  }
}

}  // namespace wildaudit::geometry
