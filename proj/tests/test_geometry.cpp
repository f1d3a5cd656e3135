#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"
#include "wildaudit/geometry.hpp"

using namespace wildaudit;
using geometry::LorentzPoint;

namespace {

LorentzPoint random_point(SplitMix64& rng, int dim, double max_norm = 3.0) {
  Eigen::VectorXd t(dim);
  for (int i = 0; i < dim; ++i) t[i] = rng.next_normal();
  const double norm = rng.next_double() * max_norm;
  if (t.norm() > 0) t *= norm / t.norm();
  return geometry::exp_map_origin(t);
}

}  // namespace

TEST_CASE("lorentz_inner closed forms") {
  const auto origin = geometry::lorentz_origin(1);
  CHECK(geometry::lorentz_inner(origin, origin) == Catch::Approx(-1.0));

  LorentzPoint p;
  p.coords.resize(2);
  p.coords << std::cosh(1.0), std::sinh(1.0);
  CHECK(geometry::lorentz_inner(p, origin) ==
        Catch::Approx(-std::cosh(1.0)).epsilon(1e-12));
  CHECK(geometry::lorentz_inner(p, origin) ==
        Catch::Approx(geometry::lorentz_inner(origin, p)));
}

TEST_CASE("lorentz_distance basics and off-manifold rejection") {
  const auto origin = geometry::lorentz_origin(3);
  CHECK(geometry::lorentz_distance(origin, origin) == Catch::Approx(0.0));

  LorentzPoint p;
  p.coords.resize(2);
  p.coords << std::cosh(1.0), std::sinh(1.0);
  const auto o1 = geometry::lorentz_origin(1);
  CHECK(geometry::lorentz_distance(o1, p) == Catch::Approx(1.0));

  LorentzPoint bad;
  bad.coords.resize(2);
  bad.coords << 0.5, 0.0;  // not on the hyperboloid
  REQUIRE_THROWS_AS(geometry::lorentz_distance(bad, bad), DataError);
}

TEST_CASE("exp_map_origin: zero tangent, clipping, closed form") {
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  const auto at_origin = geometry::exp_map_origin(zero);
  CHECK(at_origin.coords[0] == Catch::Approx(1.0));
  CHECK(at_origin.coords.tail(4).norm() == Catch::Approx(0.0));

  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3);
  e1[0] = 1.0;
  const auto p = geometry::exp_map_origin(e1);
  CHECK(p.coords[0] == Catch::Approx(std::cosh(1.0)));
  CHECK(p.coords[1] == Catch::Approx(std::sinh(1.0)));
  CHECK(p.coords[2] == Catch::Approx(0.0));
  CHECK(geometry::on_manifold(p));

  Eigen::VectorXd big = Eigen::VectorXd::Zero(3);
  big[1] = 5.0;
  Eigen::VectorXd clipped_t = Eigen::VectorXd::Zero(3);
  clipped_t[1] = 3.0;
  const auto clipped = geometry::exp_map_origin(big);
  const auto expected = geometry::exp_map_origin(clipped_t);
  CHECK((clipped.coords - expected.coords).norm() < 1e-12);
  CHECK(geometry::lorentz_distance(clipped, geometry::lorentz_origin(3)) ==
        Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("exp map / distance / log map consistency on random tangents") {
  SplitMix64 rng(11);
  const auto origin = geometry::lorentz_origin(5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd t(5);
    for (int i = 0; i < 5; ++i) t[i] = rng.next_normal();
    const double target = 0.05 + 2.9 * rng.next_double();
    t *= target / t.norm();
    const auto p = geometry::exp_map_origin(t);
    REQUIRE(geometry::on_manifold(p));
    CHECK(geometry::lorentz_distance(p, origin) ==
          Catch::Approx(target).margin(1e-6));
    const auto back = geometry::log_map_origin(p);
    CHECK((back - t).norm() < 1e-9);
  }
}

TEST_CASE("triangle inequality on random manifold points") {
  SplitMix64 rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const auto u = random_point(rng, 4);
    const auto v = random_point(rng, 4);
    const auto w = random_point(rng, 4);
    const double duw = geometry::lorentz_distance(u, w);
    const double duv = geometry::lorentz_distance(u, v);
    const double dvw = geometry::lorentz_distance(v, w);
    CHECK(duw <= duv + dvw + 1e-6);
  }
}

TEST_CASE("cosine_scores matches a scalar-loop oracle") {
  auto corp = testutil::make_corpus({5, 3});
  auto q = testutil::random_unit_embeddings(corp, 3, 5);
  q.rows.resize(5);
  q.data.conservativeResize(5, 3);
  auto g = testutil::random_unit_embeddings(corp, 3, 6);
  g.rows = {"img005", "img006", "img007"};
  g.data.conservativeResize(3, 3);

  const auto sm = geometry::cosine_scores(q, g);
  REQUIRE(sm.kind == geometry::ScoreKind::cosine);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int d = 0; d < 3; ++d)
        dot += static_cast<double>(q.data(i, d)) * g.data(j, d);
      CHECK(std::abs(sm.scores(i, j) - dot) < 1e-6);
      CHECK(sm.scores(i, j) >= -1.0f - 1e-5f);
      CHECK(sm.scores(i, j) <= 1.0f + 1e-5f);
    }
  }
}

TEST_CASE("cosine_scores identical and antipodal vectors") {
  corpus::EmbeddingMatrix a, b;
  a.dim = b.dim = 2;
  a.rows = {"q"};
  b.rows = {"g1", "g2"};
  a.data.resize(1, 2);
  a.data << 1.0f, 0.0f;
  b.data.resize(2, 2);
  b.data << 1.0f, 0.0f, -1.0f, 0.0f;
  const auto sm = geometry::cosine_scores(a, b);
  CHECK(sm.scores(0, 0) == Catch::Approx(1.0));
  CHECK(sm.scores(0, 1) == Catch::Approx(-1.0));

  b.dim = 3;
  b.data.resize(2, 3);
  b.data << 1.0f, 0.0f, 0.0f, 0.0f, 1.0f, 0.0f;
  REQUIRE_THROWS_AS(geometry::cosine_scores(a, b), DataError);
}

TEST_CASE("cosine_scores is invariant under joint orthogonal rotation") {
  auto corp = testutil::make_corpus({6});
  auto emb = testutil::random_unit_embeddings(corp, 4, 9);
  const auto before = geometry::cosine_scores(emb, emb);

  // Random Givens rotation in the (1,3) plane.
  const float theta = 0.7f;
  Eigen::MatrixXf rot = Eigen::MatrixXf::Identity(4, 4);
  rot(1, 1) = std::cos(theta);
  rot(1, 3) = -std::sin(theta);
  rot(3, 1) = std::sin(theta);
  rot(3, 3) = std::cos(theta);
  auto rotated = emb;
  rotated.data = emb.data * rot;
  const auto after = geometry::cosine_scores(rotated, rotated);
  CHECK((before.scores - after.scores).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("exp_neg_distance_scores values and order preservation") {
  const auto origin = geometry::lorentz_origin(2);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(2);
  e1[0] = 1.0;
  const auto p = geometry::exp_map_origin(e1);

  const auto sm = geometry::exp_neg_distance_scores({origin}, {origin, p},
                                                    {"q"}, {"g1", "g2"});
  CHECK(sm.scores(0, 0) == Catch::Approx(1.0));
  CHECK(sm.scores(0, 1) == Catch::Approx(std::exp(-1.0)).epsilon(1e-6));

  SplitMix64 rng(33);
  std::vector<LorentzPoint> pts;
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) {
    pts.push_back(random_point(rng, 3));
    ids.push_back("p" + std::to_string(i));
  }
  const auto origin3 = geometry::lorentz_origin(3);
  const auto scores =
      geometry::exp_neg_distance_scores({origin3}, pts, {"q"}, ids);
  std::vector<double> dists;
  for (const auto& pt : pts)
    dists.push_back(geometry::lorentz_distance(origin3, pt));
  std::vector<int> by_score(20), by_dist(20);
  std::iota(by_score.begin(), by_score.end(), 0);
  std::iota(by_dist.begin(), by_dist.end(), 0);
  std::sort(by_score.begin(), by_score.end(), [&](int a, int b) {
    return scores.scores(0, a) > scores.scores(0, b);
  });
  std::sort(by_dist.begin(), by_dist.end(),
            [&](int a, int b) { return dists[static_cast<size_t>(a)] < dists[static_cast<size_t>(b)]; });
  CHECK(by_score == by_dist);
}

TEST_CASE("score CSV export uses 6 decimals") {
  geometry::ScoreMatrix sm;
  sm.queries = {"q"};
  sm.gallery = {"g"};
  sm.scores.resize(1, 1);
  sm.scores(0, 0) = 0.1234567f;
  const auto dir = testutil::fresh_dir("scores_csv");
  geometry::write_scores_csv(sm, (dir / "s.csv").string());
  const auto text = read_file_bytes((dir / "s.csv").string());
  CHECK(text == "query_id,gallery_id,score\nq,g,0.123457\n");
}
