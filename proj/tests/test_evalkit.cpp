// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "support.hpp"

#include "dcr/checkpoint.hpp"
#include "dcr/errors.hpp"
#include "dcr/evalkit.hpp"

#include <fstream>

using namespace dcr;
using namespace dcr::eval;

namespace {

RetrievalFeature unit(const Eigen::RowVectorXd& v) { return {v / v.norm()}; }

std::vector<EvalItem> random_items(int n, int identities, int cameras, int dim, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> id(0, identities - 1), cam(0, cameras - 1);
  std::vector<EvalItem> out;
  for (int i = 0; i < n; ++i) out.push_back({unit(test::random_matrix(1, dim, rng).row(0)), id(rng), cam(rng)});
  return out;
}

std::vector<oracle::Item> to_oracle(const std::vector<EvalItem>& items) {
  std::vector<oracle::Item> out;
  for (const EvalItem& it : items) out.push_back({test::vec(it.feature.vec), it.identity, it.camera});
  return out;
}

}  // namespace

TEST_CASE("average precision examples") {
  CHECK(*average_precision({true}) == 1.0);
  CHECK(*average_precision({true, false, true}) == doctest::Approx(0.83333).epsilon(1e-5));
  CHECK(*average_precision({false, false, true}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK_FALSE(average_precision({false, false}).has_value());
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 200; ++t) {
    std::vector<bool> rel(12);
    for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = coin(rng);
    const auto ap = average_precision(rel);
    const double o = oracle::average_precision(rel);
    CHECK(ap.has_value() == (o >= 0.0));
    if (ap) CHECK(std::abs(*ap - o) <= 1e-12);
  }
}

TEST_CASE("feature extraction") {
  ForwardValues fv;
  std::mt19937_64 rng(2);
  fv.g = test::random_matrix(3, 8, rng);
  fv.ag = test::random_matrix(3, 8, rng);
  const RetrievalFeature f = extract_feature(fv);
  CHECK(f.vec.norm() == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::RowVectorXd mean = fv.g.colwise().mean();
  for (Eigen::Index j = 0; j < 8; ++j) CHECK(std::abs(f.vec(j) - mean(j) / mean.norm()) <= 1e-12);
  const RetrievalFeature both = extract_feature(fv, FeatureMode::GlobalAndAttribute);
  CHECK(both.vec.size() == 16);
  CHECK(both.vec.norm() == doctest::Approx(1.0).epsilon(1e-12));

  ForwardValues same;
  same.g = test::random_matrix(1, 8, rng).replicate(3, 1);
  same.ag = same.g;
  const RetrievalFeature s = extract_feature(same);
  CHECK((s.vec - same.g.row(0) / same.g.row(0).norm()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("ranking") {
  Eigen::RowVectorXd e1 = Eigen::RowVectorXd::Zero(4), e2 = Eigen::RowVectorXd::Zero(4);
  e1(0) = 1.0;
  e2(1) = 1.0;
  const std::vector<RetrievalFeature> gallery{{e1}, {e2}};
  CHECK(rank_gallery(RetrievalFeature{e2}, gallery) == std::vector<int>{1, 0});

  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<RetrievalFeature> g;
    for (int i = 0; i < 10; ++i) g.push_back(unit(test::random_matrix(1, 6, rng).row(0)));
    const RetrievalFeature q = unit(test::random_matrix(1, 6, rng).row(0));
    std::vector<int> expect(10);
    std::iota(expect.begin(), expect.end(), 0);
    std::stable_sort(expect.begin(), expect.end(), [&](int a, int b) {
      return oracle::dot(test::vec(q.vec), test::vec(g[a].vec)) > oracle::dot(test::vec(q.vec), test::vec(g[b].vec));
    });
    CHECK(rank_gallery(q, g) == expect);
  }
  // The query itself from another camera ranks first.
  const auto items = random_items(8, 3, 2, 6, rng);
  EvalItem q = items[5];
  q.camera = items[5].camera + 1;
  const auto order = rank_gallery(q, items);
  CHECK(order.front() == 5);

  // Same identity, same camera is excluded.
  const std::vector<EvalItem> only_self{{q.feature, q.identity, q.camera}};
  CHECK_THROWS_AS(rank_gallery(q, only_self), NoValidGallery);
  CHECK_THROWS_AS(rank_gallery(RetrievalFeature{e1}, std::vector<RetrievalFeature>{}), NoValidGallery);
}

TEST_CASE("perfect retrieval and skipped queries") {
  std::mt19937_64 rng(4);
  std::vector<EvalItem> query, gallery;
  for (int id = 0; id < 5; ++id) {
    const RetrievalFeature f = unit(test::random_matrix(1, 32, rng).row(0));
    query.push_back({f, id, 0});
    gallery.push_back({f, id, 1});
  }
  std::reverse(gallery.begin(), gallery.end());
  const DatasetResult r = evaluate_features("d", query, gallery);
  CHECK(r.map == doctest::Approx(1.0));
  CHECK(r.rank1 == doctest::Approx(1.0));
  CHECK(r.n_queries == 5);

  query.push_back({unit(test::random_matrix(1, 32, rng).row(0)), 9, 0});
  gallery.push_back({query.back().feature, 9, 0});  // same camera only
  const DatasetResult s = evaluate_features("d", query, gallery);
  CHECK(s.skipped == 1);
  CHECK(s.n_queries == 5);
}

TEST_CASE("evaluation equals the brute-force oracle") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    auto query = random_items(8, 2, 3, 8, rng);
    auto gallery = random_items(16, 2, 3, 8, rng);
    const DatasetResult r = evaluate_features("d", query, gallery);
    const oracle::Retrieval o = oracle::retrieval(to_oracle(query), to_oracle(gallery), kDefaultCmcDepth);
    CHECK(std::abs(r.map - o.map) <= 1e-9);
    CHECK(r.n_queries == o.valid);
    CHECK(r.skipped == o.skipped);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) {
      CHECK(std::abs(r.cmc[k] - o.cmc[k]) <= 1e-9);
      if (k > 0) CHECK(r.cmc[k] >= r.cmc[k - 1]);
    }
    CHECK(r.rank1 == r.cmc[0]);

    // Reordering the gallery leaves the metrics unchanged.
    std::shuffle(gallery.begin(), gallery.end(), rng);
    const DatasetResult p = evaluate_features("d", query, gallery);
    if (p.n_queries > 0) CHECK(std::abs(p.map - r.map) <= 1e-9);
  }
}

TEST_CASE("aggregation") {
  std::map<std::string, DatasetResult> res;
  res["a"].map = 0.4;
  res["a"].rank1 = 0.5;
  res["b"].map = 0.6;
  res["b"].rank1 = 0.7;
  res["c"].map = 0.1;
  res["c"].rank1 = 0.2;
  const std::vector<std::string> seen{"a", "b"}, unseen{"c"};
  const EvalReport r = aggregate_report(res, seen, unseen);
  REQUIRE(r.seen_avg);
  CHECK(r.seen_avg->map == doctest::Approx(0.5));
  CHECK(r.seen_avg->rank1 == doctest::Approx(0.6));
  CHECK(r.unseen_avg->map == doctest::Approx(0.1));
  CHECK(r.rows.size() == 3);
  const std::vector<std::string> one{"a"};
  CHECK(aggregate_report(res, one, {}).seen_avg->map == 0.4);
  CHECK_FALSE(aggregate_report(res, one, {}).unseen_avg.has_value());
  const std::vector<std::string> missing{"z"};
  CHECK_THROWS_AS(aggregate_report(res, missing, {}), InvalidInput);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::map<std::string, DatasetResult> five;
  std::vector<std::string> ids;
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    const std::string id = "synth" + std::to_string(i);
    five[id].map = u(rng);
    sum += five[id].map;
    ids.push_back(id);
  }
  CHECK(std::abs(aggregate_report(five, ids, {}).seen_avg->map - sum / 5.0) <= 1e-12);
  const std::string text = format_report(r);
  CHECK(text.find("seen_avg_map") != std::string::npos);
}

TEST_CASE("evaluate_dataset, curves and feature dumps on a trained-free model") {
  test::TempDir dir("dcr_eval");
  data::SynthConfig sc = data::SynthConfig::for_domain(0, 1);
  sc.n_identities = 6;
  sc.images_per_identity = 8;
  const auto gen = data::generate_domain(sc, dir / "synth0");
  data::write_split(dir / "synth0", data::split_domain(gen.manifest, 0.5, 1));
  const data::Dataset ds = data::load_dataset(dir / "synth0");
  const EvalSet set = load_eval_set(ds, attr::AnnotationPredictor{});
  const ModelConfig cfg = test::tiny_config();
  DcrModel model(cfg, 3, 1);

  const DatasetResult direct = evaluate_dataset(model, "synth0", set.query, set.gallery);
  const auto qi = featurize(model, set.query), gi = featurize(model, set.gallery);
  const oracle::Retrieval o = oracle::retrieval(to_oracle(qi), to_oracle(gi), kDefaultCmcDepth);
  CHECK(std::abs(direct.map - o.map) <= 1e-9);
  CHECK_THROWS_AS(evaluate_dataset(model, "synth0", set.query, set.query), InvalidInput);

  const auto c1 = dir / "a.ckpt";
  ckpt::save_checkpoint(c1, model, 1, "h");
  const std::vector<std::filesystem::path> two{c1, c1};
  const auto rows = forgetting_curve(two, set);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].step == 1);
  CHECK(rows[1].step == 2);
  CHECK(rows[0].map == rows[1].map);
  CHECK(std::abs(rows[0].map - direct.map) <= 1e-12);
  const std::vector<std::filesystem::path> broken{c1, dir / "gone.ckpt"};
  try {
    forgetting_curve(broken, set);
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
  const std::vector<EvalSet> probes{set, set};
  const auto gen_rows = generalization_curve(two, probes);
  CHECK(gen_rows[0].map == doctest::Approx(rows[0].map));
  CHECK(format_curve(rows).rfind("step\tmap\trank1\n", 0) == 0);

  const auto dump = dir / "features.tsv";
  dump_features(model, set.gallery, dump);
  const auto recs = read_feature_dump(dump);
  REQUIRE(recs.size() == set.gallery.size());
  std::map<int, int> per_id_dump, per_id_manifest;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const RetrievalFeature f = extract_feature(model, set.gallery[i]);
    CHECK(recs[i].dataset_id == "synth0");
    REQUIRE(recs[i].values.size() == static_cast<std::size_t>(f.vec.size()));
    for (std::size_t j = 0; j < recs[i].values.size(); ++j) CHECK(std::abs(recs[i].values[j] - f.vec(j)) <= 1e-6);
    ++per_id_dump[recs[i].identity];
  }
  for (const auto& r : ds.gallery.records) ++per_id_manifest[r.identity];
  CHECK(per_id_dump == per_id_manifest);
  CHECK(extract_feature(model, set.gallery[0]).vec == extract_feature(model, set.gallery[0]).vec);
}
