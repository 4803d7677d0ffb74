// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "support.hpp"

#include "dcr/checkpoint.hpp"
#include "dcr/errors.hpp"
#include "dcr/lifelong.hpp"

#include <set>

using namespace dcr;
using namespace dcr::lifelong;

namespace {

std::vector<double> v(std::initializer_list<double> x) { return x; }

/// Samples of a generated synthetic domain with labels starting at `offset`.
std::vector<DataSample> domain_samples(const std::filesystem::path& dir, int index, int identities, int images,
                                       int offset = 0) {
  data::SynthConfig cfg = data::SynthConfig::for_domain(index, 3);
  cfg.n_identities = identities;
  cfg.images_per_identity = images;
  const auto gen = data::generate_domain(cfg, dir / cfg.dataset_id);
  const auto labels = remap_labels(gen.manifest, offset);
  return load_samples(gen.manifest, attr::AnnotationPredictor{}, &labels);
}

std::vector<DataSample> fake_samples(const std::string& dataset, int identities, int per_identity) {
  auto img = std::make_shared<const Image8>(Image8{kImageHeight, kImageWidth,
                                                   std::vector<std::uint8_t>(kImageHeight * kImageWidth * 3, 100)});
  std::vector<DataSample> out;
  for (int id = 0; id < identities; ++id) {
    for (int j = 0; j < per_identity; ++j) {
      DataSample s;
      s.key = dataset + "/" + std::to_string(id) + "_" + std::to_string(j);
      s.image = img;
      s.label = id;
      s.identity = id;
      s.camera = j % 2;
      s.dataset_id = dataset;
      s.prediction = attr::prediction_from_bits({});
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("distill_kl examples") {
  CHECK(distill_kl(v({1, 0}), v({0, 1}), 1.0) == doctest::Approx(0.46212).epsilon(1e-5));
  CHECK(std::abs(distill_kl(v({1, 0}), v({0, 1}), 1.0) - oracle::kl({1, 0}, {0, 1}, 1.0)) <= 1e-12);
  double prev = distill_kl(v({1, 0}), v({0, 1}), 1.0);
  for (double tau : {2.0, 4.0, 8.0}) {
    const double cur = distill_kl(v({1, 0}), v({0, 1}), tau);
    CHECK(cur < prev);
    prev = cur;
  }
  for (double tau : {0.5, 1.0, 2.0, 10.0}) CHECK(distill_kl(v({0.3, -2, 5}), v({0.3, -2, 5}), tau) == 0.0);
  CHECK_THROWS_AS(distill_kl(v({1, 0}), v({1, 0, 0}), 1.0), InvalidInput);
  CHECK_THROWS_AS(distill_kl(v({1, 0}), v({1, 0}), 0.0), InvalidInput);
  CHECK_THROWS_AS(distill_kl(v({1, std::nan("")}), v({1, 0}), 1.0), InvalidInput);
}

TEST_CASE("distill_kl properties against the oracle") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> tau_d(0.5, 5.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(7), q(7);
    for (double& x : p) x = n(rng);
    for (double& x : q) x = n(rng);
    const double tau = tau_d(rng);
    const double kl = distill_kl(p, q, tau);
    CHECK(kl >= 0.0);
    CHECK(std::abs(kl - oracle::kl(p, q, tau)) <= 1e-9);
    const double c1 = n(rng), c2 = n(rng);
    std::vector<double> ps = p, qs = q;
    for (double& x : ps) x += c1;
    for (double& x : qs) x += c2;
    CHECK(std::abs(distill_kl(ps, qs, tau) - kl) <= 1e-9);
    CHECK(distill_kl(p, p, tau) <= 1e-9);
  }
}

TEST_CASE("af and alignment losses on hand-set matrices") {
  Matrix o1(2, 3), n1(2, 3), o2(2, 3), n2(2, 3);
  o1 << 1, 0, 0, 0, 2, 1;
  n1 << 0, 1, 0, 1, 1, 1;
  o2 << 0.5, 0.5, -1, 3, 0, 0;
  n2 << 0, 0, 0, 1, 2, 3;
  const std::vector<Matrix> olds{o1, o2}, news{n1, n2};
  const double tau = 2.0;
  double expect = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (int r = 0; r < 2; ++r) expect += oracle::kl(test::row(olds[s], r), test::row(news[s], r), tau) / 4.0;
  }
  CHECK(std::abs(af_loss(olds, news, tau) - expect) <= 1e-12);
  CHECK(std::abs(alignment_loss(olds, news, tau) - expect) <= 1e-12);
  const double last = (oracle::kl(test::row(o1, 1), test::row(n1, 1), tau) +
                       oracle::kl(test::row(o2, 1), test::row(n2, 1), tau)) / 2.0;
  CHECK(std::abs(af_loss(olds, news, tau, AfRows::Last) - last) <= 1e-12);
  CHECK(af_loss(olds, olds, tau) == 0.0);
  CHECK(alignment_loss(news, news, tau) == 0.0);
  CHECK(af_loss({}, {}, tau) == 0.0);
  CHECK(alignment_loss({}, {}, tau) == 0.0);
}

TEST_CASE("logit distillation truncates to the old classes") {
  Matrix old_l(1, 2), new_l(1, 4);
  old_l << 0.5, -1.0;
  new_l << 1.0, 0.0, 7.0, -3.0;
  const std::vector<Matrix> olds{old_l}, news{new_l};
  const double expect = oracle::kl({0.5, -1.0}, {1.0, 0.0}, 2.0);
  CHECK(std::abs(logit_distill_loss(olds, news, 2.0) - expect) <= 1e-12);
  Matrix changed = new_l;
  changed(0, 2) = -40.0;
  changed(0, 3) = 12.0;
  const std::vector<Matrix> news2{changed};
  CHECK(logit_distill_loss(olds, news2, 2.0) == logit_distill_loss(olds, news, 2.0));
  const std::vector<Matrix> same{Matrix(new_l.leftCols(2))};
  CHECK(logit_distill_loss(same, news, 2.0) == 0.0);
  const std::vector<Matrix> too_small{Matrix::Zero(1, 1)};
  CHECK_THROWS_AS(logit_distill_loss(news, too_small, 2.0), InvalidInput);
}

TEST_CASE("total loss at the first task is the sum of the four current-task terms") {
  const ModelConfig cfg = test::tiny_config();
  DcrModel model(cfg, 3, 2);
  std::mt19937_64 rng(2);
  std::vector<BatchSample> batch;
  for (int label : {0, 0, 1, 1}) batch.push_back(test::random_sample(cfg, label, false, rng));
  TrainConfig tc;
  ag::Tape tape(false);
  const LossResult r = total_loss(tape, model, nullptr, batch, tc, {});
  CHECK(r.parts.af == 0.0);
  CHECK(r.parts.al == 0.0);
  CHECK(r.parts.ld == 0.0);
  CHECK(r.parts.total == doctest::Approx(r.parts.ce + r.parts.tri_global + r.parts.tri_local + r.parts.ort)
                             .epsilon(1e-14));
}

TEST_CASE("total loss components equal independent evaluation") {
  const ModelConfig cfg = test::tiny_config();
  ModelPair pair(cfg, 2, 4);
  std::mt19937_64 rng(4);
  advance_task(pair, 2, rng);
  test::perturb(pair.model, 0.05, rng);
  std::vector<BatchSample> batch;
  batch.push_back(test::random_sample(cfg, 0, true, rng));
  batch.push_back(test::random_sample(cfg, 0, true, rng));
  batch.push_back(test::random_sample(cfg, 2, false, rng));
  batch.push_back(test::random_sample(cfg, 2, false, rng));
  TrainConfig tc;
  tc.margin = 5.0;  // keep both triplet terms active

  ag::Tape tape(false);
  const LossResult r = total_loss(tape, pair.model, pair.old_model.get(), batch, tc, {});

  oracle::Mat logits, g_mean, ag_mean;
  std::vector<int> labels;
  double ort = 0.0;
  std::vector<Matrix> af_old, af_new, al_old, al_new, ld_old, ld_new;
  for (const BatchSample& s : batch) {
    ag::Tape t(false);
    const auto out = pair.model.forward(t, {}, s.patches, s.text.attributes,
                                        pair.model.text_embedding(s.text.caption).vec);
    const OldOutputs old = old_outputs(*pair.old_model, s);
    logits.push_back(test::row(out.logits.value(), 0));
    g_mean.push_back(test::vec(out.g.value().colwise().mean()));
    ag_mean.push_back(test::vec(out.ag.value().colwise().mean()));
    labels.push_back(s.label);
    ort += oracle::orthogonal(test::rows(out.g.value())) / static_cast<double>(batch.size());
    if (s.from_buffer) {
      af_old.push_back(old.ag);
      af_new.push_back(out.ag.value());
    } else {
      al_old.push_back(old.g);
      al_new.push_back(out.g.value());
    }
    ld_old.push_back(old.logits);
    ld_new.push_back(out.logits.value());
  }
  double af = 0.0, al = 0.0, ld = 0.0;
  for (std::size_t i = 0; i < af_old.size(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) af += oracle::kl(test::row(af_old[i], j), test::row(af_new[i], j), tc.tau) / 6.0;
  }
  for (std::size_t i = 0; i < al_old.size(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) al += oracle::kl(test::row(al_old[i], j), test::row(al_new[i], j), tc.tau) / 6.0;
  }
  for (std::size_t i = 0; i < ld_old.size(); ++i) {
    oracle::Vec nl = test::row(ld_new[i], 0);
    nl.resize(2);
    ld += oracle::kl(test::row(ld_old[i], 0), nl, tc.tau) / 4.0;
  }
  CHECK(std::abs(r.parts.ce - oracle::cross_entropy(logits, labels)) <= 1e-9);
  CHECK(std::abs(r.parts.tri_global - oracle::triplet(g_mean, labels, tc.margin)) <= 1e-9);
  CHECK(std::abs(r.parts.tri_local - oracle::triplet(ag_mean, labels, tc.margin)) <= 1e-9);
  CHECK(std::abs(r.parts.ort - ort) <= 1e-9);
  CHECK(std::abs(r.parts.af - af) <= 1e-9);
  CHECK(std::abs(r.parts.al - al) <= 1e-9);
  CHECK(std::abs(r.parts.ld - ld) <= 1e-9);
  CHECK(r.parts.af > 0.0);
  CHECK(r.parts.al > 0.0);
  CHECK(r.parts.ld > 0.0);
  CHECK(std::abs(r.parts.total - (r.parts.ce + r.parts.tri_global + r.parts.tri_local + r.parts.ort + r.parts.af +
                                  r.parts.al + r.parts.ld)) <= 1e-9);

  SUBCASE("doubling one weight changes only the total, by that component") {
    double LossWeights::*fields[] = {&LossWeights::ce, &LossWeights::tri_global, &LossWeights::tri_local,
                                     &LossWeights::ort, &LossWeights::af, &LossWeights::al, &LossWeights::ld};
    double LossBreakdown::*parts[] = {&LossBreakdown::ce, &LossBreakdown::tri_global, &LossBreakdown::tri_local,
                                      &LossBreakdown::ort, &LossBreakdown::af, &LossBreakdown::al,
                                      &LossBreakdown::ld};
    for (std::size_t f = 0; f < 7; ++f) {
      TrainConfig t2 = tc;
      t2.weights.*fields[f] = 2.0;
      ag::Tape tp(false);
      const LossResult r2 = total_loss(tp, pair.model, pair.old_model.get(), batch, t2, {});
      for (std::size_t p = 0; p < 7; ++p) CHECK(r2.parts.*parts[p] == doctest::Approx(r.parts.*parts[p]).epsilon(1e-12));
      CHECK(std::abs(r2.parts.total - r.parts.total - r.parts.*parts[f]) <= 1e-9);
    }
  }
  SUBCASE("switches remove their terms") {
    TrainConfig t2 = tc;
    t2.use_af = false;
    ag::Tape tp(false);
    CHECK(total_loss(tp, pair.model, pair.old_model.get(), batch, t2, {}).parts.af == 0.0);
    t2.use_kc = false;
    const auto r3 = total_loss(tp, pair.model, pair.old_model.get(), batch, t2, {});
    CHECK(r3.parts.al == 0.0);
    CHECK(r3.parts.ld == 0.0);
  }
}

TEST_CASE("distillation terms vanish when the models agree") {
  const ModelConfig cfg = test::tiny_config();
  ModelPair pair(cfg, 2, 6);
  std::mt19937_64 rng(6);
  advance_task(pair, 2, rng);
  std::vector<BatchSample> batch;
  for (auto [label, buf] : std::vector<std::pair<int, bool>>{{0, true}, {1, true}, {2, false}, {2, false}}) {
    batch.push_back(test::random_sample(cfg, label, buf, rng));
  }
  TrainConfig tc;
  ag::Tape tape(false);
  const LossResult r = total_loss(tape, pair.model, pair.old_model.get(), batch, tc, {});
  CHECK(r.parts.af <= 1e-9);
  CHECK(r.parts.al <= 1e-9);
  CHECK(r.parts.ld <= 1e-9);
}

TEST_CASE("total loss gradient check at the second task") {
  const ModelConfig cfg = test::tiny_config();
  ModelPair pair(cfg, 2, 8);
  std::mt19937_64 rng(8);
  advance_task(pair, 2, rng);
  test::perturb(pair.model, 0.05, rng);
  std::vector<BatchSample> batch;
  for (auto [label, buf] : std::vector<std::pair<int, bool>>{{0, true}, {0, true}, {2, false}, {2, false}}) {
    batch.push_back(test::random_sample(cfg, label, buf, rng));
  }
  TrainConfig tc;
  tc.margin = 5.0;
  pair.model.zero_grad();
  {
    ag::Tape tape;
    tape.backward(total_loss(tape, pair.model, pair.old_model.get(), batch, tc, {}).total);
  }
  auto f = [&] {
    ag::Tape tape(false);
    return total_loss(tape, pair.model, pair.old_model.get(), batch, tc, {}).parts.total;
  };
  const auto gc = test::check_gradients(test::trainable(pair.model), f, 50, rng);
  CHECK(gc.checked == 50);
  CHECK(gc.max_rel_error <= 1e-3);
}

TEST_CASE("advance_task copies, freezes and grows") {
  const ModelConfig cfg = test::tiny_config();
  ModelPair pair(cfg, 5, 9);
  CHECK_FALSE(pair.old_model);
  CHECK(pair.task == 1);
  const Matrix head_before = pair.model.head().value;
  std::mt19937_64 rng(9);
  advance_task(pair, 3, rng);
  CHECK(pair.task == 2);
  REQUIRE(pair.old_model);
  CHECK(pair.old_classes() == 5);
  CHECK(pair.model.num_classes() == 8);
  CHECK(pair.model.head().value.topRows(5) == head_before);
  CHECK(pair.old_model->head().value == head_before);
  bool frozen = true;
  pair.old_model->visit([&](const ag::Parameter& p) { frozen = frozen && !p.trainable; });
  CHECK(frozen);

  const ImageTensor img = test::random_image(rng);
  const TextInput text = make_text_input(attr::prediction_from_bits(test::random_bits(rng)), cfg.atg);
  const ForwardValues a = pair.old_model->evaluate(img, text);
  const ForwardValues b = pair.model.evaluate(img, text);
  CHECK(a.g == b.g);
  CHECK(a.ag == b.ag);
  CHECK(a.logits == b.logits.leftCols(5));

  // The copy is deep.
  pair.model.head().value.setZero();
  CHECK(pair.old_model->head().value == head_before);
}

TEST_CASE("buffer sizes and subsampling") {
  const auto samples = fake_samples("d0", 250, 3);
  std::vector<std::string> warnings;
  const MemoryBuffer full = update_buffer(MemoryBuffer(500, 2), "d0", samples, {}, 1, &warnings);
  CHECK(full.entries().size() == 500);
  CHECK(warnings.empty());

  const MemoryBuffer small = update_buffer(MemoryBuffer(100, 2), "d0", samples, {}, 1, &warnings);
  CHECK(small.entries().size() == 100);
  std::map<int, int> per_id;
  for (const auto& e : small.entries()) ++per_id[e.sample.identity];
  CHECK(per_id.size() == 50);
  for (const auto& [id, n] : per_id) CHECK(n == 2);
  CHECK(warnings.size() == 1);

  const MemoryBuffer again = update_buffer(MemoryBuffer(100, 2), "d0", samples, {}, 1);
  REQUIRE(again.entries().size() == small.entries().size());
  for (std::size_t i = 0; i < again.entries().size(); ++i) CHECK(again.entries()[i].sample.key == small.entries()[i].sample.key);

  const std::vector<std::string> done{"d0"};
  CHECK_NOTHROW(small.check_invariants(done));
  CHECK_THROWS_AS(small.check_invariants(std::vector<std::string>{"d1"}), ValidationError);
  CHECK_THROWS(update_buffer(small, "d0", samples, {}, 1));

  const MemoryBuffer two = update_buffer(small, "d1", fake_samples("d1", 4, 1), {}, 1);
  CHECK(two.count_for("d0") == 100);
  CHECK(two.count_for("d1") == 4);  // one image per identity is all there is
  CHECK_NOTHROW(two.check_invariants(std::vector<std::string>{"d0", "d1"}));
}

TEST_CASE("identity-balanced batches") {
  std::vector<int> labels;
  for (int id = 0; id < 10; ++id) {
    for (int j = 0; j < (id == 0 ? 2 : 8); ++j) labels.push_back(id);
  }
  std::mt19937_64 rng(3);
  const auto batches = identity_batches(labels, 4, 4, rng);
  CHECK_FALSE(batches.empty());
  for (const auto& b : batches) {
    CHECK(b.size() == 16);
    std::map<int, int> count;
    for (std::size_t i : b) ++count[labels[i]];
    CHECK(count.size() == 4);
    for (const auto& [id, n] : count) CHECK(n == 4);
  }
  std::mt19937_64 rng2(3);
  CHECK(identity_batches(labels, 4, 4, rng2) == batches);
}

TEST_CASE("train config presets and schedule") {
  const TrainConfig d = TrainConfig::desk();
  CHECK(d.batch_size() == 32);
  CHECK(d.epochs == 10);
  CHECK(d.lr == 1e-3);
  CHECK(d.tau == 2.0);
  CHECK(d.margin == 0.3);
  const TrainConfig p = TrainConfig::full();
  CHECK(p.batch_size() == 128);
  CHECK(p.epochs == 60);
  CHECK(p.lr == 5e-6);
  CHECK(p.lr_at(19) == 5e-6);
  CHECK(p.lr_at(20) == doctest::Approx(5e-7));
  CHECK(p.lr_at(45) == doctest::Approx(5e-8));
  TrainConfig bad = d;
  bad.tau = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("training smoke run on a 20-identity domain") {
  test::TempDir dir("dcr_train");
  const auto samples = domain_samples(dir.path(), 0, 20, 8);
  ModelConfig cfg;
  ModelPair pair(cfg, 20, 1);
  TrainConfig tc;
  tc.epochs = 2;
  std::vector<StepRecord> steps;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& s) { steps.push_back(s); };
  const auto epochs = train_task(pair, samples, MemoryBuffer(), tc, hooks);
  REQUIRE(epochs.size() == 2);
  CHECK(epochs[1].mean.ce < epochs[0].mean.ce);
  for (const auto& s : steps) {
    CHECK(s.loss.af == 0.0);
    CHECK(s.loss.al == 0.0);
    CHECK(s.loss.ld == 0.0);
  }
  const std::string line = to_json_line(epochs[0]);
  CHECK(line.find("\"kind\":\"epoch\"") != std::string::npos);
  CHECK(line.find("\"ce\":") != std::string::npos);
}

TEST_CASE("training is deterministic and leaves the old model untouched") {
  test::TempDir dir("dcr_det");
  const auto d0 = domain_samples(dir.path(), 0, 8, 4);
  const auto d1 = domain_samples(dir.path(), 1, 8, 4, 8);
  const ModelConfig cfg = test::tiny_config();
  TrainConfig tc;
  tc.epochs = 1;
  auto run = [&] {
    ModelPair pair(cfg, 8, 1);
    train_task(pair, d0, MemoryBuffer(), tc);
    const MemoryBuffer buf = update_buffer(MemoryBuffer(), "synth0", d0, cfg.atg, tc.seed);
    std::mt19937_64 rng(1);
    advance_task(pair, 8, rng);
    const std::string old_hash = ckpt::parameter_hash(*pair.old_model);
    std::vector<double> afs;
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& s) {
      afs.push_back(s.loss.af);
      CHECK(ckpt::parameter_hash(*pair.old_model) == old_hash);
    };
    train_task(pair, d1, buf, tc, hooks);
    CHECK(ckpt::parameter_hash(*pair.old_model) == old_hash);
    return std::pair{ckpt::parameter_hash(pair.model), afs};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("train_task input errors") {
  const ModelConfig cfg = test::tiny_config();
  ModelPair pair(cfg, 4, 1);
  TrainConfig tc;
  CHECK_THROWS_AS(train_task(pair, {}, MemoryBuffer(), tc), InvalidInput);
  const auto few = fake_samples("d0", 4, 4);
  CHECK_THROWS_AS(train_task(pair, few, MemoryBuffer(), tc), InvalidInput);  // 4 identities < P = 8
}
