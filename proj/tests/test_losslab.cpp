#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"
#include "wildaudit/losslab.hpp"

using namespace wildaudit;
using losslab::EuclideanBatch;
using losslab::LorentzBatch;
using losslab::Objective;

TEST_CASE("sigma2 fixtures and monotonicity") {
  CHECK(losslab::sigma2(1.0) == Catch::Approx(0.25));
  CHECK(losslab::sigma2(0.0) == Catch::Approx(0.9));
  CHECK(losslab::sigma2(0.5) ==
        Catch::Approx(0.25 + 0.65 * std::pow(0.5, 1.5)).epsilon(1e-12));
  CHECK(losslab::sigma2(0.5) == Catch::Approx(0.4798).margin(0.0002));
  double prev = losslab::sigma2(0.0);
  for (int i = 1; i <= 100; ++i) {
    const double cur = losslab::sigma2(i / 100.0);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
  REQUIRE_THROWS_AS(losslab::sigma2(-0.1), std::invalid_argument);
  REQUIRE_THROWS_AS(losslab::sigma2(1.1), std::invalid_argument);
}

TEST_CASE("target_radius fixtures and monotonicity") {
  CHECK(losslab::target_radius(0.0) == Catch::Approx(0.2));
  CHECK(losslab::target_radius(1.0) == Catch::Approx(2.0));
  CHECK(losslab::target_radius(0.5) == Catch::Approx(1.1));
  double prev = losslab::target_radius(0.0);
  for (int i = 1; i <= 100; ++i) {
    const double cur = losslab::target_radius(i / 100.0);
    CHECK(cur >= prev - 1e-15);
    prev = cur;
  }
}

TEST_CASE("arcface single-class zero-margin loss is zero") {
  EuclideanBatch batch = losslab::make_euclidean_batch(3, 2, 1, 2, 6);
  batch.margin = 0.0;
  batch.labels = {0, 0};
  const auto e = losslab::arcface_loss(batch);
  CHECK(e.value == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("arcface aligned-embedding fixture is numerically zero") {
  EuclideanBatch batch;
  const int D = 6;
  batch.z = Eigen::MatrixXd::Zero(1, D);
  batch.z(0, 0) = 1.0;
  batch.flip = batch.z;
  batch.labels = {0};
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(1, D);
  w0(0, 0) = 1.0;  // equals z
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(1, D);
  w1(0, 1) = 1.0;  // orthogonal
  batch.subcenters = {w0, w1};
  const auto e = losslab::arcface_loss(batch);
  CHECK(e.value < 1e-15);
}

TEST_CASE("arcface rejects out-of-range labels") {
  EuclideanBatch batch = losslab::make_euclidean_batch(3);
  batch.labels[0] = 99;
  REQUIRE_THROWS_AS(losslab::arcface_loss(batch), std::invalid_argument);
}

TEST_CASE("arcface is invariant under permuting sub-centers within a class") {
  EuclideanBatch batch = losslab::make_euclidean_batch(11);
  const auto base = losslab::arcface_loss(batch);
  auto& W = batch.subcenters[1];
  W.row(0).swap(W.row(2));
  const auto permuted = losslab::arcface_loss(batch);
  CHECK(permuted.value == Catch::Approx(base.value).epsilon(1e-14));
}

TEST_CASE("antisym hinge values") {
  Eigen::MatrixXd z(2, 3), flip(2, 3);
  z << 1, 0, 0, 0.6, 0.8, 0;
  // cos(z0, f0) = 0.3 (= tau: inactive); cos(z1, f1) = 0.8
  flip << 0.3, std::sqrt(1 - 0.09), 0, 0.6, 0.8, 0;
  // second pair: cos = 0.36 + 0.64 = 1.0 -> used below with tau 0.3
  auto e = losslab::antisym_loss(z, flip, 0.3);
  CHECK(e.value == Catch::Approx((0.0 + 0.7) / 2.0).epsilon(1e-12));

  // cos = 0.8 with tau = 0.3 -> hinge value 0.5
  Eigen::MatrixXd z1(1, 2), f1(1, 2);
  z1 << 1, 0;
  f1 << 0.8, 0.6;
  e = losslab::antisym_loss(z1, f1, 0.3);
  CHECK(e.value == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("euclidean_total composes arcface and antisym") {
  EuclideanBatch batch = losslab::make_euclidean_batch(13);
  batch.lambda = 0.0;
  const auto total0 = losslab::euclidean_total(batch);
  const auto arc = losslab::arcface_loss(batch);
  CHECK(total0.value == Catch::Approx(arc.value).epsilon(1e-14));
  CHECK((total0.grad_embeddings - arc.grad_embeddings).cwiseAbs().maxCoeff() <
        1e-14);

  batch.lambda = 1.0;
  const auto total1 = losslab::euclidean_total(batch);
  const auto anti = losslab::antisym_loss(batch.z, batch.flip, batch.tau);
  CHECK(total1.value ==
        Catch::Approx(arc.value + anti.value).epsilon(1e-12));
}

TEST_CASE("lorentz_supcon coincident same-identity pair evaluates to zero") {
  LorentzBatch batch;
  batch.tangents.resize(2, 3);
  batch.tangents << 0.5, 0.2, -0.1, 0.5, 0.2, -0.1;
  batch.flip_tangents = batch.tangents;
  batch.labels = {0, 0};
  batch.solidity = Eigen::VectorXd::Constant(2, 0.8);
  const auto e = losslab::lorentz_supcon(batch);
  CHECK(e.value == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("lorentz_supcon without positives is an error") {
  LorentzBatch batch;
  batch.tangents.resize(2, 3);
  batch.tangents << 0.5, 0.2, -0.1, -0.4, 0.3, 0.2;
  batch.flip_tangents = batch.tangents;
  batch.labels = {0, 1};
  batch.solidity = Eigen::VectorXd::Constant(2, 0.8);
  REQUIRE_THROWS_AS(losslab::lorentz_supcon(batch), DataError);
}

TEST_CASE("lorentz_supcon depends only on the label partition") {
  LorentzBatch batch = losslab::make_lorentz_batch(7);
  const auto base = losslab::lorentz_supcon(batch);
  auto relabeled = batch;
  for (auto& y : relabeled.labels) y = 100 - 7 * y;  // injective remap
  const auto after = losslab::lorentz_supcon(relabeled);
  CHECK(after.value == Catch::Approx(base.value).epsilon(1e-14));
}

TEST_CASE("radius_prior closed forms") {
  LorentzBatch batch;
  batch.tangents.resize(1, 3);
  batch.solidity = Eigen::VectorXd::Constant(1, 1.0);
  batch.labels = {0};
  batch.flip_tangents = batch.tangents;
  // Tangent norm exactly g(1) = 2.0 (unclipped): quadratic term vanishes.
  Eigen::VectorXd dir(3);
  dir << 2.0, 0.0, 0.0;
  batch.tangents.row(0) = dir.transpose();
  const auto e = losslab::radius_prior(batch);
  CHECK(e.value == Catch::Approx(0.5 * std::log(0.5)).epsilon(1e-12));
  CHECK(e.value == Catch::Approx(-0.3466).margin(0.0001));
}

TEST_CASE("mirror_negative closed forms") {
  LorentzBatch batch;
  batch.tangents.resize(2, 3);
  batch.tangents << 0.4, 0.1, 0.0, 0.3, -0.2, 0.5;
  batch.flip_tangents = batch.tangents;  // coincident: d = 0
  batch.labels = {0, 0};
  batch.solidity = Eigen::VectorXd::Constant(2, 0.5);
  auto e = losslab::mirror_negative(batch);
  CHECK(e.value == Catch::Approx(batch.m_mirror).epsilon(1e-12));

  // Far-apart flips: hinge fully inactive.
  batch.flip_tangents << -2.0, 1.0, 0.5, 1.5, 2.0, -0.5;
  e = losslab::mirror_negative(batch);
  CHECK(e.value == 0.0);
  CHECK(e.grad_embeddings.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lorentz_total composes the three terms") {
  LorentzBatch batch = losslab::make_lorentz_batch(15);
  batch.lambda_r = 0.0;
  batch.lambda_m = 0.0;
  const auto bare = losslab::lorentz_total(batch);
  const auto supcon = losslab::lorentz_supcon(batch);
  CHECK(bare.value == Catch::Approx(supcon.value).epsilon(1e-14));

  // O0 vs O1 with coincident flips differ by lambda_m * m_mirror.
  batch.flip_tangents = batch.tangents;
  batch.lambda_r = 0.15;
  batch.lambda_m = 0.0;
  const auto o0 = losslab::lorentz_total(batch);
  batch.lambda_m = 0.1;
  const auto o1 = losslab::lorentz_total(batch);
  CHECK(o1.value - o0.value == Catch::Approx(0.1 * 0.5).epsilon(1e-10));
}

TEST_CASE("all objectives pass finite-difference gradient checks") {
  for (const auto obj : losslab::all_objectives()) {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      const auto res = losslab::finite_difference_check(obj, seed * 311);
      INFO(res.objective << " seed " << seed * 311 << " err "
                         << res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
      CHECK(std::isfinite(res.value));
    }
  }
}

TEST_CASE("losses are permutation-equivariant over the batch") {
  // Reverse the batch; the loss is unchanged and gradients permute.
  EuclideanBatch e = losslab::make_euclidean_batch(23);
  const auto base = losslab::euclidean_total(e);
  EuclideanBatch rev = e;
  const Eigen::Index B = e.z.rows();
  for (Eigen::Index i = 0; i < B; ++i) {
    rev.z.row(i) = e.z.row(B - 1 - i);
    rev.flip.row(i) = e.flip.row(B - 1 - i);
    rev.labels[static_cast<size_t>(i)] =
        e.labels[static_cast<size_t>(B - 1 - i)];
  }
  const auto permuted = losslab::euclidean_total(rev);
  CHECK(permuted.value == Catch::Approx(base.value).epsilon(1e-13));
  for (Eigen::Index i = 0; i < B; ++i) {
    CHECK((permuted.grad_embeddings.row(i) -
           base.grad_embeddings.row(B - 1 - i)).cwiseAbs().maxCoeff() < 1e-12);
  }

  LorentzBatch l = losslab::make_lorentz_batch(29);
  const auto lbase = losslab::lorentz_total(l);
  LorentzBatch lrev = l;
  const Eigen::Index LB = l.tangents.rows();
  for (Eigen::Index i = 0; i < LB; ++i) {
    lrev.tangents.row(i) = l.tangents.row(LB - 1 - i);
    lrev.flip_tangents.row(i) = l.flip_tangents.row(LB - 1 - i);
    lrev.labels[static_cast<size_t>(i)] =
        l.labels[static_cast<size_t>(LB - 1 - i)];
    lrev.solidity[i] = l.solidity[LB - 1 - i];
  }
  const auto lperm = losslab::lorentz_total(lrev);
  CHECK(lperm.value == Catch::Approx(lbase.value).epsilon(1e-12));
  for (Eigen::Index i = 0; i < LB; ++i) {
    CHECK((lperm.grad_embeddings.row(i) -
           lbase.grad_embeddings.row(LB - 1 - i)).cwiseAbs().maxCoeff() <
          1e-10);
  }
}

TEST_CASE("mining tuples are valid and deterministic") {
  auto corp = testutil::make_corpus({3, 1, 4});
  auto emb = testutil::random_unit_embeddings(corp, 5, 17);
  Eigen::MatrixXf sim = emb.data * emb.data.transpose();
  std::vector<std::string> identities;
  for (const auto& r : corp.records) identities.push_back(r.identity);

  const auto tuples = losslab::assemble_mining_tuples(identities, sim, 24, 9);
  REQUIRE(tuples.size() == 24);
  for (const auto& t : tuples) {
    CHECK(identities[static_cast<size_t>(t.anchor)] ==
          identities[static_cast<size_t>(t.positive)]);
    CHECK(t.anchor != t.positive);
    CHECK(t.mirror_negative == t.anchor);
    CHECK(t.background_negative == t.anchor);
    CHECK(identities[static_cast<size_t>(t.hard_negative)] !=
          identities[static_cast<size_t>(t.anchor)]);
    // Hard negative is the argmax cross-identity similarity.
    for (int j = 0; j < static_cast<int>(identities.size()); ++j) {
      if (identities[static_cast<size_t>(j)] ==
          identities[static_cast<size_t>(t.anchor)])
        continue;
      CHECK(sim(t.anchor, j) <= sim(t.anchor, t.hard_negative));
    }
    // id1 has a single image: never an anchor.
    CHECK(identities[static_cast<size_t>(t.anchor)] != "id1");
  }
  const auto again = losslab::assemble_mining_tuples(identities, sim, 24, 9);
  for (size_t i = 0; i < tuples.size(); ++i) {
    CHECK(tuples[i].anchor == again[i].anchor);
    CHECK(tuples[i].positive == again[i].positive);
    CHECK(tuples[i].hard_negative == again[i].hard_negative);
  }
}
