#pragma once

// Numeric implementations of the training objectives: Sub-Center ArcFace,
// anti-symmetry, their combination, Lorentz probabilistic supervised
// contrastive, radius prior, mirror-negative, and the combined Lorentz
// objective. Every loss returns analytic gradients; a finite-difference
// checker validates them on seeded batches.
//
// Gradients are taken w.r.t. the unconstrained inputs: unit-row embeddings
// and sub-center weights for the Euclidean losses, origin tangents for the
// Lorentz losses (chained through the exponential map, treating the norm-3
// clip as the Jacobian of rescaling).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wildaudit/common.hpp"
#include "wildaudit/geometry.hpp"

namespace wildaudit::losslab {

struct LossEval {
  double value = 0.0;
  Eigen::MatrixXd grad_embeddings;  // B x D (z or tangents)
  Eigen::MatrixXd grad_flip;        // B x D when the loss reads flips
  std::vector<Eigen::MatrixXd> grad_subcenters;  // per class, k x D
};

struct EuclideanBatch {
  Eigen::MatrixXd z;     // B x D, unit rows
  Eigen::MatrixXd flip;  // B x D, unit rows
  std::vector<int> labels;
  std::vector<Eigen::MatrixXd> subcenters;  // C entries of k x D unit rows
  double margin = 0.5;
  double scale = 51.5;
  double tau = 0.3;     // anti-symmetry margin
  double lambda = 0.5;  // anti-symmetry weight
};

struct LorentzBatch {
  Eigen::MatrixXd tangents;       // B x D
  Eigen::MatrixXd flip_tangents;  // B x D
  std::vector<int> labels;
  Eigen::VectorXd solidity;  // B, in [0,1]
  double tau = 0.1;
  double lambda_r = 0.15;
  double lambda_m = 0.1;
  double kappa = 2.0;
  double sigma_min2 = 0.25;
  double sigma_max2 = 0.9;
  double gamma = 1.5;
  double r_min = 0.2;
  double r_max = 2.0;
  double m_mirror = 0.5;
};

// ---------------------------------------------------------------------------
// Solidity mappings
// ---------------------------------------------------------------------------

/// sigma^2(s) = sigma_min^2 + (sigma_max^2 - sigma_min^2) (1-s)^gamma;
/// monotone non-increasing in s.
inline double sigma2(double s, double sigma_min2 = 0.25,
                     double sigma_max2 = 0.9, double gamma = 1.5) {
  if (s < 0.0 || s > 1.0)
    throw std::invalid_argument("sigma2: solidity outside [0,1]");
  return sigma_min2 + (sigma_max2 - sigma_min2) * std::pow(1.0 - s, gamma);
}

/// g(s) = r_min + (r_max - r_min) s.
inline double target_radius(double s, double r_min = 0.2, double r_max = 2.0) {
  if (s < 0.0 || s > 1.0)
    throw std::invalid_argument("target_radius: solidity outside [0,1]");
  return r_min + (r_max - r_min) * s;
}

// ---------------------------------------------------------------------------
// Lorentz forward/backward machinery
// ---------------------------------------------------------------------------

namespace detail {

struct MappedTangent {
  Eigen::VectorXd t;      // original tangent
  Eigen::VectorXd t_eff;  // after norm clipping
  double r_raw = 0.0;     // ||t||
  double r = 0.0;         // min(||t||, clip)
  bool clipped = false;
  double mu0 = 1.0;        // cosh(r)
  Eigen::VectorXd mu_sp;   // sinhc(r) * t_eff
};

inline MappedTangent map_tangent(const Eigen::VectorXd& t) {
  MappedTangent m;
  m.t = t;
  m.r_raw = t.norm();
  m.clipped = m.r_raw > geometry::kTangentClipNorm;
  m.t_eff = m.clipped ? (geometry::kTangentClipNorm / m.r_raw) * t : t;
  m.r = m.clipped ? geometry::kTangentClipNorm : m.r_raw;
  m.mu0 = std::cosh(m.r);
  m.mu_sp = geometry::detail::sinhc(m.r) * m.t_eff;
  return m;
}

/// (cosh r - sinhc r) / r^2, smooth at 0.
inline double cosh_minus_sinhc_over_r2(double r) {
  if (std::abs(r) < 1e-4) {
    const double r2 = r * r;
    return 1.0 / 3.0 + r2 / 30.0;
  }
  return (std::cosh(r) - geometry::detail::sinhc(r)) / (r * r);
}

/// Pulls an ambient gradient (g0, g_sp) at mu back to the tangent parameter.
inline Eigen::VectorXd pullback(const MappedTangent& m, double g0,
                                const Eigen::VectorXd& g_sp) {
  const double sc = geometry::detail::sinhc(m.r);
  const double c = cosh_minus_sinhc_over_r2(m.r);
  Eigen::VectorXd grad_eff = g0 * sc * m.t_eff + sc * g_sp +
                             c * m.t_eff * (m.t_eff.dot(g_sp));
  if (!m.clipped) return grad_eff;
  // Jacobian of the rescaling t -> clip * t / ||t||.
  const Eigen::VectorXd u = m.t / m.r_raw;
  return (geometry::kTangentClipNorm / m.r_raw) *
         (grad_eff - u * (u.dot(grad_eff)));
}

inline double chi_of(const MappedTangent& a, const MappedTangent& b) {
  return a.mu0 * b.mu0 - a.mu_sp.dot(b.mu_sp);
}

inline double dist_of(double chi) {
  if (chi < 1.0 + geometry::kCoincidentSnapTol) return 0.0;
  return std::acosh(chi);
}

/// d(d^2)/dchi = 2 d / sinh d, smooth at d = 0 (limit 2).
inline double dsq_dchi(double d) {
  if (d < 1e-4) return 2.0 * (1.0 - d * d / 6.0);
  return 2.0 * d / std::sinh(d);
}

/// Gradient of chi(a,b) w.r.t. a's tangent. dchi/dmu_a = (mu0_b, -mu_sp_b).
inline Eigen::VectorXd chi_grad(const MappedTangent& a,
                                const MappedTangent& b) {
  return pullback(a, b.mu0, (-b.mu_sp).eval());
}

inline void check_lorentz_batch(const LorentzBatch& batch) {
  const auto b = batch.tangents.rows();
  if (batch.flip_tangents.rows() != b && batch.flip_tangents.rows() != 0)
    throw std::invalid_argument("lorentz batch: flip tangents misaligned");
  if (static_cast<Eigen::Index>(batch.labels.size()) != b)
    throw std::invalid_argument("lorentz batch: labels misaligned");
  if (batch.solidity.size() != b)
    throw std::invalid_argument("lorentz batch: solidity misaligned");
  for (Eigen::Index i = 0; i < batch.solidity.size(); ++i) {
    if (batch.solidity[i] < 0.0 || batch.solidity[i] > 1.0)
      throw std::invalid_argument("lorentz batch: solidity outside [0,1]");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Euclidean objectives
// ---------------------------------------------------------------------------

/// Sub-Center ArcFace: per class the best of k sub-center cosines; the target
/// logit gets the additive angular margin, with the standard hard-sample
/// fallback s (cos theta - m sin m) when cos theta < cos(pi - m).
inline LossEval arcface_loss(const EuclideanBatch& batch) {
  const Eigen::Index B = batch.z.rows();
  const Eigen::Index D = batch.z.cols();
  const int C = static_cast<int>(batch.subcenters.size());
  if (C == 0) throw std::invalid_argument("arcface: no classes");
  if (static_cast<Eigen::Index>(batch.labels.size()) != B)
    throw std::invalid_argument("arcface: labels misaligned");
  for (int y : batch.labels) {
    if (y < 0 || y >= C)
      throw std::invalid_argument("arcface: label out of range");
  }
  const double cos_m = std::cos(batch.margin);
  const double sin_m = std::sin(batch.margin);
  const double fallback_edge = std::cos(M_PI - batch.margin);
  constexpr double kClamp = 1.0 - 1e-7;

  LossEval out;
  out.grad_embeddings = Eigen::MatrixXd::Zero(B, D);
  out.grad_subcenters.resize(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c)
    out.grad_subcenters[static_cast<size_t>(c)] =
        Eigen::MatrixXd::Zero(batch.subcenters[static_cast<size_t>(c)].rows(), D);

  for (Eigen::Index i = 0; i < B; ++i) {
    const int y = batch.labels[static_cast<size_t>(i)];
    std::vector<double> cosines(static_cast<size_t>(C));
    std::vector<int> best_j(static_cast<size_t>(C));
    std::vector<bool> interior(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
      const auto& W = batch.subcenters[static_cast<size_t>(c)];
      Eigen::Index jbest = 0;
      double raw = (W * batch.z.row(i).transpose())(0);
      for (Eigen::Index j = 1; j < W.rows(); ++j) {
        const double v = W.row(j).dot(batch.z.row(i));
        if (v > raw) {
          raw = v;
          jbest = j;
        }
      }
      const double clamped = std::clamp(raw, -kClamp, kClamp);
      cosines[static_cast<size_t>(c)] = clamped;
      best_j[static_cast<size_t>(c)] = static_cast<int>(jbest);
      interior[static_cast<size_t>(c)] = (raw > -kClamp && raw < kClamp);
    }

    // Logits; the target uses the margin (or the fallback branch).
    const double u_y = cosines[static_cast<size_t>(y)];
    const bool fallback = u_y < fallback_edge;
    std::vector<double> logits(static_cast<size_t>(C));
    double dtarget_du = 0.0;
    for (int c = 0; c < C; ++c) {
      if (c == y) {
        if (fallback) {
          logits[static_cast<size_t>(c)] = batch.scale * (u_y - batch.margin * sin_m);
          dtarget_du = batch.scale;
        } else {
          const double sin_y = std::sqrt(1.0 - u_y * u_y);
          logits[static_cast<size_t>(c)] =
              batch.scale * (u_y * cos_m - sin_y * sin_m);
          dtarget_du = batch.scale * (cos_m + u_y * sin_m / sin_y);
        }
      } else {
        logits[static_cast<size_t>(c)] = batch.scale * cosines[static_cast<size_t>(c)];
      }
    }

    const double mx = *std::max_element(logits.begin(), logits.end());
    double Z = 0.0;
    for (double l : logits) Z += std::exp(l - mx);
    out.value += (std::log(Z) + mx - logits[static_cast<size_t>(y)]);

    for (int c = 0; c < C; ++c) {
      const double p = std::exp(logits[static_cast<size_t>(c)] - mx) / Z;
      const double dL_dlogit = (p - (c == y ? 1.0 : 0.0)) / static_cast<double>(B);
      if (!interior[static_cast<size_t>(c)]) continue;  // clamp kills the grad
      const double dlogit_du = (c == y) ? dtarget_du : batch.scale;
      const double g = dL_dlogit * dlogit_du;
      const auto& W = batch.subcenters[static_cast<size_t>(c)];
      const int j = best_j[static_cast<size_t>(c)];
      out.grad_embeddings.row(i) += g * W.row(j);
      out.grad_subcenters[static_cast<size_t>(c)].row(j) += g * batch.z.row(i);
    }
  }
  out.value /= static_cast<double>(B);
  return out;
}

/// Mean hinge on the cosine between an embedding and its flip:
/// mean_i max(0, cos(z_i, flip_i) - tau). Subgradient 0 at the kink.
inline LossEval antisym_loss(const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& flip, double tau) {
  if (z.rows() != flip.rows() || z.cols() != flip.cols())
    throw std::invalid_argument("antisym: shape mismatch");
  const Eigen::Index B = z.rows();
  LossEval out;
  out.grad_embeddings = Eigen::MatrixXd::Zero(B, z.cols());
  out.grad_flip = Eigen::MatrixXd::Zero(B, z.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    const double c = z.row(i).dot(flip.row(i));
    if (c - tau > 0.0) {
      out.value += (c - tau);
      out.grad_embeddings.row(i) = flip.row(i) / static_cast<double>(B);
      out.grad_flip.row(i) = z.row(i) / static_cast<double>(B);
    }
  }
  out.value /= static_cast<double>(B);
  return out;
}

/// L_arcface + lambda * L_anti with shared gradients accumulated.
inline LossEval euclidean_total(const EuclideanBatch& batch) {
  LossEval arc = arcface_loss(batch);
  const LossEval anti = antisym_loss(batch.z, batch.flip, batch.tau);
  arc.value += batch.lambda * anti.value;
  arc.grad_embeddings += batch.lambda * anti.grad_embeddings;
  arc.grad_flip = batch.lambda * anti.grad_flip;
  return arc;
}

// ---------------------------------------------------------------------------
// Lorentz objectives
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<MappedTangent> map_rows(const Eigen::MatrixXd& t) {
  std::vector<MappedTangent> out;
  out.reserve(static_cast<size_t>(t.rows()));
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    out.push_back(map_tangent(t.row(i).transpose()));
  return out;
}

}  // namespace detail

/// Probabilistic supervised contrastive loss on the Lorentz manifold:
/// l_ij = -d^2(mu_i, mu_j) / (2 (sigma_i^2 + sigma_j^2) tau), averaged over
/// anchors with at least one same-identity partner; the denominator runs
/// over every other batch member.
inline LossEval lorentz_supcon(const LorentzBatch& batch) {
  detail::check_lorentz_batch(batch);
  const Eigen::Index B = batch.tangents.rows();
  if (B < 2) throw std::invalid_argument("lorentz_supcon: batch too small");
  if (batch.tau <= 0.0) throw std::invalid_argument("lorentz_supcon: tau <= 0");

  const auto mu = detail::map_rows(batch.tangents);
  std::vector<double> var(static_cast<size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i)
    var[static_cast<size_t>(i)] = sigma2(batch.solidity[i], batch.sigma_min2,
                                         batch.sigma_max2, batch.gamma);

  Eigen::MatrixXd ell(B, B), dist(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < B; ++j) {
      if (i == j) continue;
      const double d = detail::dist_of(detail::chi_of(
          mu[static_cast<size_t>(i)], mu[static_cast<size_t>(j)]));
      dist(i, j) = d;
      ell(i, j) = -(d * d) / (2.0 *
                              (var[static_cast<size_t>(i)] +
                               var[static_cast<size_t>(j)]) *
                              batch.tau);
    }
  }

  std::vector<std::vector<Eigen::Index>> positives(static_cast<size_t>(B));
  std::vector<Eigen::Index> anchors;
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < B; ++j) {
      if (i != j && batch.labels[static_cast<size_t>(i)] ==
                        batch.labels[static_cast<size_t>(j)])
        positives[static_cast<size_t>(i)].push_back(j);
    }
    if (!positives[static_cast<size_t>(i)].empty()) anchors.push_back(i);
  }
  if (anchors.empty())
    throw DataError("lorentz_supcon: no anchor has a same-identity partner");

  LossEval out;
  out.grad_embeddings = Eigen::MatrixXd::Zero(B, batch.tangents.cols());
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(B, B);  // dL/dl_ij
  const double inv_a = 1.0 / static_cast<double>(anchors.size());

  for (Eigen::Index i : anchors) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index n = 0; n < B; ++n)
      if (n != i) mx = std::max(mx, ell(i, n));
    double Z = 0.0;
    for (Eigen::Index n = 0; n < B; ++n)
      if (n != i) Z += std::exp(ell(i, n) - mx);
    const double lse = mx + std::log(Z);

    const auto& pos = positives[static_cast<size_t>(i)];
    double pos_sum = 0.0;
    for (Eigen::Index j : pos) pos_sum += ell(i, j);
    out.value += inv_a * (-pos_sum / static_cast<double>(pos.size()) + lse);

    const double inv_p = 1.0 / static_cast<double>(pos.size());
    for (Eigen::Index n = 0; n < B; ++n) {
      if (n == i) continue;
      coef(i, n) += inv_a * std::exp(ell(i, n) - mx) / Z;
    }
    for (Eigen::Index j : pos) coef(i, j) -= inv_a * inv_p;
  }

  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index j = 0; j < B; ++j) {
      if (i == j || coef(i, j) == 0.0) continue;
      const double dl_ddsq =
          -1.0 / (2.0 *
                  (var[static_cast<size_t>(i)] + var[static_cast<size_t>(j)]) *
                  batch.tau);
      const double q = coef(i, j) * dl_ddsq * detail::dsq_dchi(dist(i, j));
      out.grad_embeddings.row(i) +=
          q * detail::chi_grad(mu[static_cast<size_t>(i)],
                               mu[static_cast<size_t>(j)]).transpose();
      out.grad_embeddings.row(j) +=
          q * detail::chi_grad(mu[static_cast<size_t>(j)],
                               mu[static_cast<size_t>(i)]).transpose();
    }
  }
  return out;
}

/// Radius prior: mean over the batch of
/// (r_i - g(s_i))^2 / (2 kappa sigma_i^2) + (1/2) log(kappa sigma_i^2),
/// where r_i is the geodesic radius (the clipped tangent norm).
inline LossEval radius_prior(const LorentzBatch& batch) {
  detail::check_lorentz_batch(batch);
  if (batch.kappa <= 0.0) throw std::invalid_argument("radius_prior: kappa <= 0");
  const Eigen::Index B = batch.tangents.rows();
  LossEval out;
  out.grad_embeddings = Eigen::MatrixXd::Zero(B, batch.tangents.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto m = detail::map_tangent(batch.tangents.row(i).transpose());
    const double v = batch.kappa * sigma2(batch.solidity[i], batch.sigma_min2,
                                          batch.sigma_max2, batch.gamma);
    const double g = target_radius(batch.solidity[i], batch.r_min, batch.r_max);
    out.value += (m.r - g) * (m.r - g) / (2.0 * v) + 0.5 * std::log(v);
    if (!m.clipped && m.r_raw > 1e-12) {
      out.grad_embeddings.row(i) =
          ((m.r - g) / v / static_cast<double>(B)) * (m.t / m.r_raw).transpose();
    }
  }
  out.value /= static_cast<double>(B);
  return out;
}

/// Mirror-negative hinge: mean_i max(0, m_mirror - d(mu_i, mu_i^flip)).
inline LossEval mirror_negative(const LorentzBatch& batch) {
  detail::check_lorentz_batch(batch);
  if (batch.flip_tangents.rows() != batch.tangents.rows())
    throw std::invalid_argument("mirror_negative: flip tangents required");
  const Eigen::Index B = batch.tangents.rows();
  LossEval out;
  out.grad_embeddings = Eigen::MatrixXd::Zero(B, batch.tangents.cols());
  out.grad_flip = Eigen::MatrixXd::Zero(B, batch.tangents.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto a = detail::map_tangent(batch.tangents.row(i).transpose());
    const auto b = detail::map_tangent(batch.flip_tangents.row(i).transpose());
    const double chi = detail::chi_of(a, b);
    const double d = detail::dist_of(chi);
    if (batch.m_mirror - d <= 0.0) continue;  // hinge inactive
    out.value += batch.m_mirror - d;
    if (d < 1e-9) continue;  // distance kink at coincident points
    const double dd_dchi = 1.0 / std::sinh(d);
    const double q = -dd_dchi / static_cast<double>(B);
    out.grad_embeddings.row(i) += q * detail::chi_grad(a, b).transpose();
    out.grad_flip.row(i) += q * detail::chi_grad(b, a).transpose();
  }
  out.value /= static_cast<double>(B);
  return out;
}

/// L_supcon + lambda_r L_radius + lambda_m L_mirror. lambda_m = 0 is the O0
/// baseline; lambda_m = 0.1 the mirror-negative O1 objective.
inline LossEval lorentz_total(const LorentzBatch& batch) {
  LossEval total = lorentz_supcon(batch);
  const LossEval radius = radius_prior(batch);
  total.value += batch.lambda_r * radius.value;
  total.grad_embeddings += batch.lambda_r * radius.grad_embeddings;
  if (batch.lambda_m != 0.0) {
    const LossEval mirror = mirror_negative(batch);
    total.value += batch.lambda_m * mirror.value;
    total.grad_embeddings += batch.lambda_m * mirror.grad_embeddings;
    total.grad_flip = batch.lambda_m * mirror.grad_flip;
  } else {
    total.grad_flip =
        Eigen::MatrixXd::Zero(batch.tangents.rows(), batch.tangents.cols());
  }
  return total;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks
// ---------------------------------------------------------------------------

enum class Objective {
  arcface,
  antisym,
  euclidean_total,
  lorentz_supcon,
  radius_prior,
  mirror_negative,
  lorentz_total
};

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::arcface: return "arcface";
    case Objective::antisym: return "antisym";
    case Objective::euclidean_total: return "euclidean_total";
    case Objective::lorentz_supcon: return "lorentz_supcon";
    case Objective::radius_prior: return "radius_prior";
    case Objective::mirror_negative: return "mirror_negative";
    default: return "lorentz_total";
  }
}

inline std::vector<Objective> all_objectives() {
  return {Objective::arcface,        Objective::antisym,
          Objective::euclidean_total, Objective::lorentz_supcon,
          Objective::radius_prior,   Objective::mirror_negative,
          Objective::lorentz_total};
}

namespace detail {

inline Eigen::MatrixXd random_unit_rows(SplitMix64& rng, Eigen::Index rows,
                                        Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    do {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.next_normal();
    } while (m.row(i).norm() < 1e-6);
    m.row(i) /= m.row(i).norm();
  }
  return m;
}

}  // namespace detail

inline EuclideanBatch make_euclidean_batch(uint64_t seed, int B = 4, int C = 3,
                                           int k = 3, int D = 8) {
  SplitMix64 rng(seed, 0xE5C1u);
  EuclideanBatch batch;
  batch.z = detail::random_unit_rows(rng, B, D);
  batch.flip = detail::random_unit_rows(rng, B, D);
  for (int c = 0; c < C; ++c)
    batch.subcenters.push_back(detail::random_unit_rows(rng, k, D));
  for (int i = 0; i < B; ++i)
    batch.labels.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(C))));
  return batch;
}

inline LorentzBatch make_lorentz_batch(uint64_t seed, int B = 6, int D = 4,
                                       int classes = 3) {
  SplitMix64 rng(seed, 0x10E2u);
  LorentzBatch batch;
  auto tangents = [&](double lo, double hi) {
    Eigen::MatrixXd m(B, D);
    for (int i = 0; i < B; ++i) {
      Eigen::VectorXd t(D);
      for (int j = 0; j < D; ++j) t[j] = rng.next_normal();
      const double norm = lo + (hi - lo) * rng.next_double();
      m.row(i) = (norm / std::max(1e-12, t.norm())) * t.transpose();
    }
    return m;
  };
  batch.tangents = tangents(0.2, 2.5);
  batch.flip_tangents = tangents(0.2, 2.5);
  batch.solidity.resize(B);
  for (int i = 0; i < B; ++i) batch.solidity[i] = rng.next_double();
  for (int i = 0; i < B; ++i)
    batch.labels.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(classes))));
  // Guarantee at least one valid anchor.
  if (B >= 2) batch.labels[1] = batch.labels[0];
  return batch;
}

/// True when the batch sits safely away from the objective's kinks (hinges,
/// sub-center argmax switches, clamp and clip boundaries) so central finite
/// differences are valid.
inline bool kink_clear(Objective obj, const EuclideanBatch& e,
                       const LorentzBatch& l, double margin = 1e-3) {
  auto euclidean_clear = [&](bool need_antisym) {
    for (Eigen::Index i = 0; i < e.z.rows(); ++i) {
      std::vector<double> best;
      for (const auto& W : e.subcenters) {
        double b1 = -2.0, b2 = -3.0;
        for (Eigen::Index j = 0; j < W.rows(); ++j) {
          const double v = W.row(j).dot(e.z.row(i));
          if (v > b1) {
            b2 = b1;
            b1 = v;
          } else if (v > b2) {
            b2 = v;
          }
        }
        if (W.rows() > 1 && b1 - b2 < margin) return false;
        if (std::abs(b1) > 0.999) return false;
        best.push_back(b1);
      }
      const double u_y = best[static_cast<size_t>(e.labels[static_cast<size_t>(i)])];
      if (std::abs(u_y - std::cos(M_PI - e.margin)) < margin) return false;
      if (need_antisym &&
          std::abs(e.z.row(i).dot(e.flip.row(i)) - e.tau) < margin)
        return false;
    }
    return true;
  };
  auto lorentz_clear = [&](bool need_mirror) {
    for (Eigen::Index i = 0; i < l.tangents.rows(); ++i) {
      const double r = l.tangents.row(i).norm();
      const double rf = l.flip_tangents.row(i).norm();
      if (r < margin || std::abs(r - geometry::kTangentClipNorm) < margin)
        return false;
      if (rf < margin || std::abs(rf - geometry::kTangentClipNorm) < margin)
        return false;
      if (need_mirror) {
        const auto a = detail::map_tangent(l.tangents.row(i).transpose());
        const auto b = detail::map_tangent(l.flip_tangents.row(i).transpose());
        const double d = detail::dist_of(detail::chi_of(a, b));
        if (d < margin || std::abs(d - l.m_mirror) < margin) return false;
      }
    }
    return true;
  };
  switch (obj) {
    case Objective::arcface: return euclidean_clear(false);
    case Objective::antisym:
    case Objective::euclidean_total: return euclidean_clear(true);
    case Objective::lorentz_supcon:
    case Objective::radius_prior: return lorentz_clear(false);
    default: return lorentz_clear(true);
  }
}

struct GradCheckResult {
  std::string objective;
  uint64_t seed = 0;  // the accepted (kink-clear) seed
  double value = 0.0;
  double max_rel_err = 0.0;
};

namespace detail {

template <typename ValueFn>
inline void fd_against(Eigen::MatrixXd& input, const Eigen::MatrixXd& analytic,
                       ValueFn&& value_fn, double h, double& max_rel_err) {
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    for (Eigen::Index j = 0; j < input.cols(); ++j) {
      const double keep = input(i, j);
      input(i, j) = keep + h;
      const double up = value_fn();
      input(i, j) = keep - h;
      const double down = value_fn();
      input(i, j) = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic(i, j);
      const double rel =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      max_rel_err = std::max(max_rel_err, rel);
    }
  }
}

}  // namespace detail

/// Central finite-difference check of one objective on a seeded random batch.
/// Seeds are advanced deterministically until the batch is kink-clear.
inline GradCheckResult finite_difference_check(Objective obj, uint64_t seed,
                                               double h = 1e-4) {
  EuclideanBatch e;
  LorentzBatch l;
  uint64_t s = seed;
  for (int tries = 0;; ++tries) {
    e = make_euclidean_batch(s);
    l = make_lorentz_batch(s);
    if (kink_clear(obj, e, l)) break;
    if (tries > 1000)
      throw std::logic_error("finite_difference_check: no kink-clear batch");
    s += 0x9E3779B97F4A7C15ull;
  }

  GradCheckResult res;
  res.objective = to_string(obj);
  res.seed = s;

  const bool euclidean = obj == Objective::arcface ||
                         obj == Objective::antisym ||
                         obj == Objective::euclidean_total;
  if (euclidean) {
    auto eval = [&]() -> LossEval {
      switch (obj) {
        case Objective::arcface: return arcface_loss(e);
        case Objective::antisym: return antisym_loss(e.z, e.flip, e.tau);
        default: return euclidean_total(e);
      }
    };
    const LossEval le = eval();
    res.value = le.value;
    auto value_fn = [&]() { return eval().value; };
    detail::fd_against(e.z, le.grad_embeddings, value_fn, h, res.max_rel_err);
    if (obj != Objective::arcface)
      detail::fd_against(e.flip, le.grad_flip, value_fn, h, res.max_rel_err);
    if (obj != Objective::antisym) {
      for (size_t c = 0; c < e.subcenters.size(); ++c)
        detail::fd_against(e.subcenters[c], le.grad_subcenters[c], value_fn, h,
                           res.max_rel_err);
    }
  } else {
    auto eval = [&]() -> LossEval {
      switch (obj) {
        case Objective::lorentz_supcon: return lorentz_supcon(l);
        case Objective::radius_prior: return radius_prior(l);
        case Objective::mirror_negative: return mirror_negative(l);
        default: return lorentz_total(l);
      }
    };
    const LossEval le = eval();
    res.value = le.value;
    auto value_fn = [&]() { return eval().value; };
    detail::fd_against(l.tangents, le.grad_embeddings, value_fn, h,
                       res.max_rel_err);
    if (obj == Objective::mirror_negative || obj == Objective::lorentz_total)
      detail::fd_against(l.flip_tangents, le.grad_flip, value_fn, h,
                         res.max_rel_err);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Batch assembly (three-tier negative mining)
// ---------------------------------------------------------------------------

/// One training tuple. mirror_negative and background_negative are image
/// indices whose mirror / background variants supply the negatives (both the
/// anchor itself); hard_negative is the closest different-identity image.
struct MiningTuple {
  int anchor = -1;
  int positive = -1;
  int mirror_negative = -1;
  int background_negative = -1;
  int hard_negative = -1;
};

/// Deterministic identity-uniform tuple assembly driven by a seeded
/// generator: identities are visited in a seeded shuffle, anchors and
/// positives drawn uniformly within the identity, and hard negatives taken
/// from the offline similarity ranking.
inline std::vector<MiningTuple> assemble_mining_tuples(
    const std::vector<std::string>& identities, const Eigen::MatrixXf& sim,
    int count, uint64_t seed) {
  const int n = static_cast<int>(identities.size());
  if (sim.rows() != n || sim.cols() != n)
    throw std::invalid_argument("assemble_mining_tuples: sim shape mismatch");
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[identities[static_cast<size_t>(i)]].push_back(i);
  std::vector<const std::vector<int>*> eligible;
  std::vector<std::string> names;
  for (const auto& [name, members] : groups) {
    if (members.size() >= 2) {
      eligible.push_back(&members);
      names.push_back(name);
    }
  }
  if (eligible.empty())
    throw DataError("assemble_mining_tuples: no identity has >= 2 images");

  SplitMix64 rng(seed, 0x317Au);
  std::vector<size_t> order(eligible.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);

  std::vector<MiningTuple> out;
  out.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) {
    const auto& members = *eligible[order[static_cast<size_t>(t) % order.size()]];
    MiningTuple tup;
    tup.anchor = members[static_cast<size_t>(rng.next_below(members.size()))];
    do {
      tup.positive = members[static_cast<size_t>(rng.next_below(members.size()))];
    } while (tup.positive == tup.anchor);
    tup.mirror_negative = tup.anchor;
    tup.background_negative = tup.anchor;
    tup.hard_negative = -1;
    float best = -2.0f;
    for (int j = 0; j < n; ++j) {
      if (identities[static_cast<size_t>(j)] ==
          identities[static_cast<size_t>(tup.anchor)])
        continue;
      if (sim(tup.anchor, j) > best) {
        best = sim(tup.anchor, j);
        tup.hard_negative = j;
      }
    }
    if (tup.hard_negative < 0)
      throw DataError("assemble_mining_tuples: no different-identity image");
    out.push_back(tup);
  }
  return out;
}

}  // namespace wildaudit::losslab
