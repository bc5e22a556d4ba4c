#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "retro/synth.hpp"
#include "retro/trainer.hpp"

using namespace retro;

namespace {

TextBenchmark bench_for(std::uint64_t seed, std::size_t test_per_class = 50) {
  TextSynthConfig cfg;
  cfg.seed = seed;
  cfg.test_per_class = test_per_class;
  return make_text_benchmark(cfg);
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_steps = 40;
  cfg.eval_every = 8;
  return cfg;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("training is deterministic for a seed") {
  const auto bench = bench_for(3);
  const auto cfg = quick_config();
  const auto a = train(bench.train, bench.dev, bench.task, cfg, 13);
  const auto b = train(bench.train, bench.dev, bench.task, cfg, 13);
  CHECK(a.step_losses == b.step_losses);
  CHECK(a.encoder.checksum() == b.encoder.checksum());
  CHECK(a.dev.to_json().dump() == b.dev.to_json().dump());
  const auto c = train(bench.train, bench.dev, bench.task, cfg, 21);
  CHECK(a.encoder.checksum() != c.encoder.checksum());
}

TEST_CASE("all flags off reproduces plain encoder training") {
  const auto bench = bench_for(4);
  auto cfg = quick_config();
  cfg.flags = ModeFlags::none();
  const std::uint64_t seed = 42;
  const auto run = train(bench.train, {}, bench.task, cfg, seed);

  // Independent loop: the encoder module alone, same init, shuffles and SGD.
  const auto& ls = bench.task.labels;
  auto enc = ToyEncoder::initialized(bench.task.vocab.size(), ls.num_words(), cfg.dim, seed);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(bench.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  while (losses.size() < cfg.max_steps) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size() && losses.size() < cfg.max_steps; s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      std::vector<double> grad(enc.num_params(), 0.0);
      double loss = 0.0;
      for (std::size_t b = s; b < e; ++b) {
        const auto& ex = bench.train[order[b]];
        const auto seq = apply_template(ex.tokens(), bench.task.tmpl).tokens;
        double ce = 0.0;
        const auto g = enc.backward(seq, nullptr, ls, *ex.label, 1.0, &ce);
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
        loss += ce;
      }
      const double inv = 1.0 / static_cast<double>(e - s);
      for (std::size_t i = 0; i < grad.size(); ++i) enc.params()[i] -= cfg.learning_rate * (grad[i] * inv);
      losses.push_back(loss * inv);
    }
  }
  CHECK(run.step_losses == losses);
  CHECK(run.encoder.checksum() == enc.checksum());
}

TEST_CASE("disabling kNN-guided training equals beta zero") {
  const auto bench = bench_for(5);
  auto off = quick_config();
  off.flags.knn_train = false;
  auto zero = quick_config();
  zero.hyper.beta = 0.0;
  const auto a = train(bench.train, bench.dev, bench.task, off, 7);
  const auto b = train(bench.train, bench.dev, bench.task, zero, 7);
  CHECK(a.step_losses == b.step_losses);
  CHECK(a.encoder.checksum() == b.encoder.checksum());
}

TEST_CASE("a single training example uses the floored guidance path") {
  const auto bench = bench_for(6);
  const std::vector<Example> one{bench.train.front()};
  TrainConfig cfg;
  cfg.max_steps = 3;
  cfg.eval_every = 3;
  cfg.batch_size = 1;
  cfg.hyper.k = 1;
  cfg.hyper.beta = 0.5;
  cfg.flags.demo = false;
  const auto out = train(one, {}, bench.task, cfg, 1);
  REQUIRE(out.step_losses.size() == 3);
  // First step: W = 0 gives CE = log 2; the only neighbor is excluded, so F = -log(1e-8).
  CHECK(out.step_losses[0] == doctest::Approx((1.0 + 0.5 * -std::log(1e-8)) * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("training rejects bad inputs and divergence") {
  const auto bench = bench_for(7);
  auto cfg = quick_config();
  CHECK(code_of([&] { train({}, {}, bench.task, cfg, 1); }) == ErrorCode::EmptyCorpus);
  auto unlabeled = bench.train;
  unlabeled[3].label.reset();
  CHECK(code_of([&] { train(unlabeled, {}, bench.task, cfg, 1); }) == ErrorCode::MissingLabel);
  auto bad = cfg;
  bad.eval_every = bad.max_steps + 1;
  CHECK(code_of([&] { train(bench.train, {}, bench.task, bad, 1); }) == ErrorCode::InvalidArgument);
  auto wild = cfg;
  wild.learning_rate = 1e305;
  CHECK(code_of([&] { train(bench.train, {}, bench.task, wild, 1); }) == ErrorCode::DivergedTraining);
}

TEST_CASE("refresh cadence sets the store generation") {
  const auto bench = bench_for(8);
  auto cfg = quick_config();
  cfg.max_steps = 16;  // two epochs of 8 batches
  cfg.eval_every = 16;
  const auto on = train(bench.train, {}, bench.task, cfg, 3);
  CHECK(on.store.generation() == 2);
  cfg.flags.refresh = false;
  const auto off = train(bench.train, {}, bench.task, cfg, 3);
  CHECK(off.store.generation() == 0);
  cfg.flags.refresh = true;
  cfg.refresh_period = 2;
  const auto every_other = train(bench.train, {}, bench.task, cfg, 3);
  CHECK(every_other.store.generation() == 1);
}

TEST_CASE("best dev checkpoint is the one returned") {
  const auto bench = bench_for(9);
  auto cfg = quick_config();
  const auto out = train(bench.train, bench.dev, bench.task, cfg, 5);
  CHECK(out.best_step > 0);
  CHECK(out.best_step % cfg.eval_every == 0);
  TextClassifier model(out.encoder, bench.task, cfg.flags.demo, cfg.hyper.m);
  const auto again = evaluate(model, out.store, bench.dev, {cfg.hyper.lambda, few_shot_k(bench.train.size()), 1});
  CHECK(again.accuracy == out.dev.accuracy);
}

TEST_CASE("demonstrations exclude the query and fall back to zero") {
  const auto corpus = testing::random_feature_corpus(6, 3, 2, 4);
  const auto ls = feature_label_space({"a", "b"});
  const auto store = KnowledgeStore::build(corpus, ls, FeatureKeyEncoder(3));
  const auto& q = corpus[0];
  const auto fused = build_demonstrations(store, q.feature().values(), ls, 1, q.id);
  REQUIRE(fused.slots.size() == 2);
  // Class 0 holds ids 0, 2, 4; with 0 excluded the slot is one of the others.
  const auto& agg = fused.slots[0].aggregate;
  bool matches_other = false;
  for (ExampleId other : {2, 4}) {
    bool same = true;
    for (std::size_t j = 0; j < 3; ++j) same &= agg[j] == static_cast<double>(corpus[other].feature()[j]);
    matches_other |= same;
  }
  CHECK(matches_other);
  CHECK(fused.slots[1].label_word == ls.word_token(1));

  const std::vector<Example> lone{corpus[0], corpus[1]};
  const auto small = KnowledgeStore::build(lone, ls, FeatureKeyEncoder(3));
  const auto empty_slot = build_demonstrations(small, q.feature().values(), ls, 2, q.id);
  for (double x : empty_slot.slots[0].aggregate) CHECK(x == 0.0);
}

TEST_CASE("evaluation limits of the interpolation weight") {
  const auto bench = bench_for(10);
  auto cfg = quick_config();
  const auto out = train(bench.train, {}, bench.task, cfg, 2);
  TextClassifier model(out.encoder, bench.task, false, cfg.hyper.m);
  const auto none = evaluate(model, out.store, bench.test, {0.0, 8, 1});
  std::size_t hit = 0;
  for (std::size_t i = 0; i < bench.test.size(); ++i) {
    const auto& ex = bench.test[i];
    const auto pred = model.predict(ex, model.query(ex).values(), nullptr, std::nullopt).argmax();
    CHECK(none.predictions[i] == pred);
    hit += pred == *ex.label;
  }
  CHECK(none.accuracy == static_cast<double>(hit) / static_cast<double>(bench.test.size()));

  // A test point duplicating a stored example takes the stored class at lambda = 1.
  std::vector<Example> dupes(bench.train.begin(), bench.train.begin() + 6);
  for (auto& d : dupes) d.id += 100000;
  const auto exact = evaluate(model, out.store, dupes, {1.0, 1, 1});
  for (std::size_t i = 0; i < dupes.size(); ++i) CHECK(exact.predictions[i] == *dupes[i].label);
}

TEST_CASE("parallel evaluation matches serial evaluation") {
  const auto bench = bench_for(11);
  const auto out = train(bench.train, {}, bench.task, quick_config(), 4);
  TextClassifier model(out.encoder, bench.task, true, 2);
  const auto serial = evaluate(model, out.store, bench.test, {0.2, 8, 1});
  const auto parallel = evaluate(model, out.store, bench.test, {0.2, 8, 4});
  CHECK(serial.predictions == parallel.predictions);
}

TEST_CASE("metrics") {
  const std::vector<ClassId> gold{0, 0, 1, 1}, pred{0, 1, 1, 1};
  CHECK(accuracy(pred, gold) == 0.75);
  // class 0: tp 1 fp 0 fn 1 -> 2/3; class 1: tp 2 fp 1 fn 0 -> 4/5
  CHECK(macro_f1(pred, gold, 3) == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-15));
  EvalReport r;
  r.per_seed = {{1, 0.5, 0.5, 0, 0}, {2, 0.7, 0.6, 0, 0}, {3, 0.9, 0.7, 0, 0}};
  r.summarize();
  CHECK(r.mean_accuracy == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(r.std_accuracy == doctest::Approx(0.2).epsilon(1e-12));
  const auto j = r.to_json();
  CHECK(j.at("prob_floor").get<double>() == 1e-8);
  CHECK(j.contains("flags"));
}

TEST_CASE("pseudo-zero-shot leaves the base model untouched") {
  TextSynthConfig sc;
  sc.seed = 12;
  sc.unlabeled_per_class = 20;
  sc.test_per_class = 20;
  const auto bench = make_text_benchmark(sc);
  const auto enc = ToyEncoder::initialized(bench.task.vocab.size(), bench.task.labels.num_words(), 16, 3);
  const auto before = enc.checksum();
  TextClassifier base(enc, bench.task, false, 1);
  const auto report = zero_shot(base, bench.unlabeled, bench.test, bench.task.labels, {0.7, 16, 1});
  CHECK(enc.checksum() == before);
  CHECK(report.examples == bench.test.size());
  const auto model_only = zero_shot(base, bench.unlabeled, bench.test, bench.task.labels, {0.0, 16, 1});
  const auto direct = evaluate(base, KnowledgeStore::build(bench.train, bench.task.labels, enc, bench.task.tmpl),
                               bench.test, {0.0, 1, 1});
  CHECK(model_only.predictions == direct.predictions);
}

TEST_CASE("single-class pseudo-labels are flagged") {
  // Every feature is closest to class 0.
  PrototypeClassifier pc({{1.0, 0.0}, {-1.0, 0.0}}, 1, 0.07);
  const auto ls = feature_label_space({"a", "b"});
  std::vector<Example> unlabeled, test;
  for (ExampleId i = 0; i < 10; ++i) {
    Example ex;
    ex.id = i;
    ex.input = Embedding(std::vector<float>{1.0f, 0.1f * static_cast<float>(i)});
    unlabeled.push_back(ex);
    ex.id = 100 + i;
    ex.label = static_cast<ClassId>(i % 2);
    test.push_back(ex);
  }
  FeatureClassifier base(pc);
  const auto report = zero_shot(base, unlabeled, test, ls, {0.7, 256, 1});
  const bool flagged = std::any_of(report.notes.begin(), report.notes.end(), [](const std::string& n) {
    return n.starts_with("store-class-collapse");
  });
  CHECK(flagged);
  CHECK(std::any_of(report.notes.begin(), report.notes.end(),
                    [](const std::string& n) { return n.starts_with("k exceeds store size"); }));
}

TEST_CASE("retrieval-guided training beats the beta-zero baseline on the synthetic task") {
  double full = 0.0, baseline = 0.0;
  for (std::uint64_t seed : {13, 21, 42, 87, 100}) {
    const auto bench = bench_for(seed, 250);
    TrainConfig cfg;
    cfg.hyper.beta = 1.0;
    const auto k = few_shot_k(bench.train.size());
    const auto a = train(bench.train, bench.dev, bench.task, cfg, seed);
    TextClassifier ma(a.encoder, bench.task, true, cfg.hyper.m);
    full += evaluate(ma, a.store, bench.test, {cfg.hyper.lambda, k, 1}).accuracy;
    cfg.hyper.beta = 0.0;
    const auto b = train(bench.train, bench.dev, bench.task, cfg, seed);
    TextClassifier mb(b.encoder, bench.task, true, cfg.hyper.m);
    baseline += evaluate(mb, b.store, bench.test, {cfg.hyper.lambda, k, 1}).accuracy;
  }
  CHECK(full >= baseline);
}
