#include "retro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace retro {

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  if (hyper.k != 0) hyper.validate();
  if (!(hyper.beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be nonnegative");
  if (!(hyper.lambda >= 0.0 && hyper.lambda <= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  if (eval_every == 0 || max_steps < eval_every) {
    throw Error(ErrorCode::InvalidArgument, "need max_steps >= eval_every >= 1");
  }
  if (refresh_period == 0) throw Error(ErrorCode::InvalidArgument, "refresh period must be at least 1 epoch");
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "at least one seed is required");
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "dimension must be positive");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
}

namespace {

nlohmann::json flags_json(const ModeFlags& f) {
  return {{"knn_train", f.knn_train}, {"knn_test", f.knn_test}, {"demo", f.demo}, {"refresh", f.refresh}};
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"k", hyper.k},
          {"beta", hyper.beta},
          {"lambda", hyper.lambda},
          {"m", hyper.m},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_steps", max_steps},
          {"eval_every", eval_every},
          {"refresh_period", refresh_period},
          {"seeds", seeds},
          {"flags", flags_json(flags)},
          {"optimizer", optimizer == Optimizer::Sgd ? "sgd" : "adamw"},
          {"weight_decay", weight_decay},
          {"dim", dim}};
}

// ------------------------------------------------------------------ report

void EvalReport::summarize() {
  if (per_seed.empty()) return;
  const double n = static_cast<double>(per_seed.size());
  double acc = 0.0, f1 = 0.0;
  for (const auto& s : per_seed) {
    acc += s.accuracy;
    f1 += s.macro_f1;
  }
  mean_accuracy = acc / n;
  mean_macro_f1 = f1 / n;
  double va = 0.0, vf = 0.0;
  for (const auto& s : per_seed) {
    va += (s.accuracy - mean_accuracy) * (s.accuracy - mean_accuracy);
    vf += (s.macro_f1 - mean_macro_f1) * (s.macro_f1 - mean_macro_f1);
  }
  std_accuracy = per_seed.size() > 1 ? std::sqrt(va / (n - 1.0)) : 0.0;
  std_macro_f1 = per_seed.size() > 1 ? std::sqrt(vf / (n - 1.0)) : 0.0;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : per_seed) {
    seeds.push_back({{"seed", s.seed},
                     {"accuracy", s.accuracy},
                     {"macro_f1", s.macro_f1},
                     {"generation", s.generation},
                     {"best_step", s.best_step}});
  }
  return {{"accuracy", accuracy},
          {"macro_f1", macro_f1},
          {"examples", examples},
          {"per_seed", seeds},
          {"mean_accuracy", mean_accuracy},
          {"std_accuracy", std_accuracy},
          {"mean_macro_f1", mean_macro_f1},
          {"std_macro_f1", std_macro_f1},
          {"generation", generation},
          {"lambda", lambda},
          {"k", k},
          {"beta", beta},
          {"prob_floor", kProbFloor},
          {"flags", flags_json(flags)},
          {"notes", notes}};
}

double accuracy(std::span<const ClassId> predicted, std::span<const ClassId> gold) {
  if (gold.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

// Mean F1 over classes that occur in the gold labels or the predictions.
double macro_f1(std::span<const ClassId> predicted, std::span<const ClassId> gold, std::size_t num_classes) {
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i] == gold[i]) {
      ++tp[gold[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[gold[i]];
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    ++present;
    total += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
  }
  return present == 0 ? 0.0 : total / static_cast<double>(present);
}

// ------------------------------------------------------------- classifiers

LabelSpace feature_label_space(std::vector<std::string> class_names) {
  std::vector<std::vector<TokenId>> words(class_names.size());
  for (std::size_t c = 0; c < words.size(); ++c) words[c] = {static_cast<TokenId>(c)};
  return LabelSpace(std::move(class_names), std::move(words));
}

FusedInput build_demonstrations(const KnowledgeStore& store, std::span<const float> query, const LabelSpace& ls,
                                std::size_t m, std::optional<ExampleId> exclude) {
  FusedInput fused;
  for (ClassId c = 0; c < ls.num_classes(); ++c) {
    DemoSlot slot;
    slot.label_word = ls.word_token(ls.verbalize_class(c));
    slot.aggregate.assign(store.dim(), 0.0);
    if (m > 0) {
      const auto found = store.search(query, m, exclude, c);
      if (!found.hits.empty()) {
        std::vector<std::span<const float>> keys;
        for (const auto& h : found.hits) keys.push_back(found.snapshot->keys->row(h.entry));
        slot.aggregate = aggregate(demo_weights(query, keys), keys);
      }
    }
    fused.slots.push_back(std::move(slot));
  }
  return fused;
}

Embedding TextClassifier::query(const Example& ex) const {
  if (!ex.is_text()) throw Error(ErrorCode::MixedModes, "text model given a feature example");
  return encoder_.encode(apply_template(ex.tokens(), task_.tmpl).tokens);
}

Distribution TextClassifier::predict(const Example& ex, std::span<const float> query, const KnowledgeStore* store,
                                     std::optional<ExampleId> exclude) const {
  const auto seq = apply_template(ex.tokens(), task_.tmpl);
  if (use_demo_ && store != nullptr && store->size() > 0) {
    const auto fused = build_demonstrations(*store, query, task_.labels, m_, exclude);
    return encoder_.forward(seq.tokens, &fused, task_.labels).classes;
  }
  return encoder_.forward(seq.tokens, nullptr, task_.labels).classes;
}

std::unique_ptr<KeyEncoder> TextClassifier::key_encoder() const {
  return std::make_unique<TextKeyEncoder>(encoder_, task_.tmpl);
}

Embedding FeatureClassifier::query(const Example& ex) const {
  if (ex.is_text()) throw Error(ErrorCode::MixedModes, "feature model given a text example");
  return ex.feature();
}

Distribution FeatureClassifier::predict(const Example& ex, std::span<const float>, const KnowledgeStore*,
                                        std::optional<ExampleId>) const {
  return base_.predict(ex.feature().values());
}

std::unique_ptr<KeyEncoder> FeatureClassifier::key_encoder() const {
  return std::make_unique<FeatureKeyEncoder>(base_.dim());
}

// --------------------------------------------------------------- evaluate

EvalReport evaluate(const Classifier& model, const KnowledgeStore& store, const std::vector<Example>& test,
                    const EvalOptions& options) {
  if (store.size() == 0) throw Error(ErrorCode::EmptyCorpus, "evaluation needs a nonempty store");
  if (!(options.lambda >= 0.0 && options.lambda <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  }
  if (options.k == 0) throw Error(ErrorCode::InvalidK, "k must be at least 1");
  const std::size_t L = model.num_classes();
  std::vector<ClassId> predicted(test.size(), 0);
  std::vector<ClassId> gold;

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& ex = test[i];
      const auto q = model.query(ex);
      const auto p_model = model.predict(ex, q.values(), &store, std::nullopt);
      const auto found = store.search(q.values(), options.k);
      std::vector<ClassScore> votes;
      for (const auto& h : found.hits) votes.push_back({h.label, h.score});
      const auto p = interpolate(p_model, knn_distribution(votes, L), options.lambda);
      predicted[i] = p.argmax();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, test.size()));
  if (threads == 1) {
    work(0, test.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (test.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(test.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }

  EvalReport report;
  for (const auto& ex : test) {
    if (!ex.label) throw Error(ErrorCode::MissingLabel, "test example " + std::to_string(ex.id) + " has no label");
    gold.push_back(*ex.label);
  }
  report.examples = test.size();
  report.accuracy = accuracy(predicted, gold);
  report.macro_f1 = macro_f1(predicted, gold, L);
  report.generation = store.generation();
  report.lambda = options.lambda;
  report.k = options.k;
  report.predictions = std::move(predicted);
  report.per_seed.push_back({0, report.accuracy, report.macro_f1, report.generation, 0});
  report.summarize();
  return report;
}

// ------------------------------------------------------------------ train

namespace {

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, std::size_t n) : cfg_(cfg) {
    if (cfg.optimizer == Optimizer::AdamW) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> params, std::span<const double> grad) {
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == Optimizer::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * (grad[i] + cfg_.weight_decay * params[i]);
      }
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * cfg_.weight_decay * params[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainOutcome train(const std::vector<Example>& corpus, const std::vector<Example>& dev, const TextTask& task,
                   const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "training corpus is empty");
  for (const auto& ex : corpus) {
    if (!ex.label) throw Error(ErrorCode::MissingLabel, "training example " + std::to_string(ex.id) + " has no label");
    if (!ex.is_text()) throw Error(ErrorCode::MixedModes, "training requires text examples");
  }
  const auto& ls = task.labels;
  const std::size_t k = cfg.hyper.k == 0 ? few_shot_k(corpus.size()) : cfg.hyper.k;

  std::mt19937_64 rng(seed);
  ToyEncoder enc = ToyEncoder::initialized(task.vocab.size(), ls.num_words(), cfg.dim, seed);
  KnowledgeStore store = KnowledgeStore::build(corpus, ls, TextKeyEncoder(enc, task.tmpl), cfg.index);

  std::vector<TemplatedSequence> templated;
  templated.reserve(corpus.size());
  for (const auto& ex : corpus) templated.push_back(apply_template(ex.tokens(), task.tmpl));

  TrainOutcome out;
  out.encoder = enc;
  out.store = store.clone();
  double best_acc = -1.0;

  auto evaluate_dev = [&](std::size_t step) {
    if (dev.empty()) return;
    TextClassifier model(enc, task, cfg.flags.demo, cfg.hyper.m);
    EvalOptions opts{cfg.flags.knn_test ? cfg.hyper.lambda : 0.0, k, cfg.threads};
    auto report = evaluate(model, store, dev, opts);
    if (report.accuracy > best_acc) {
      best_acc = report.accuracy;
      out.encoder = enc;
      out.store = store.clone();
      out.dev = std::move(report);
      out.best_step = step;
    }
  };

  OptimizerState opt(cfg, enc.num_params());
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(enc.num_params());
  std::size_t step = 0;
  std::size_t epoch = 0;
  bool fresh = true;

  while (step < cfg.max_steps) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && step < cfg.max_steps; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = corpus[order[b]];
        const auto& seq = templated[order[b]].tokens;
        const ClassId gold = *ex.label;
        double weight = 1.0;
        FusedInput fused;
        const bool need_query = cfg.flags.knn_train || cfg.flags.demo;
        Embedding q;
        if (need_query) q = enc.encode(seq);
        if (cfg.flags.knn_train) {
          const auto found = store.search(q.values(), k, ex.id);
          double p_ref = 0.0;
          if (!found.hits.empty()) {
            std::vector<ClassScore> votes;
            for (const auto& h : found.hits) votes.push_back({h.label, h.score});
            p_ref = knn_distribution(votes, ls.num_classes())[gold];
          }
          weight = loss_weight(guidance_factor(p_ref), cfg.hyper.beta);
        }
        if (cfg.flags.demo) fused = build_demonstrations(store, q.values(), ls, cfg.hyper.m, ex.id);
        double ce = 0.0;
        const auto g = enc.backward(seq, cfg.flags.demo ? &fused : nullptr, ls, gold, weight, &ce);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        batch_loss += weight * ce;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grad) g *= inv;
      batch_loss *= inv;
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::DivergedTraining, "loss is not finite at step " + std::to_string(step));
      }
      out.step_losses.push_back(batch_loss);
      opt.step(enc.params(), grad);
      for (double p : enc.params()) {
        if (!std::isfinite(p)) throw Error(ErrorCode::DivergedTraining, "parameters diverged at step " + std::to_string(step));
      }
      if (fresh) {
        store.mark_stale();
        fresh = false;
      }
      ++step;
      if (end == order.size()) {
        ++epoch;
        if (cfg.flags.refresh && epoch % cfg.refresh_period == 0) {
          store.refresh(TextKeyEncoder(enc, task.tmpl));
          fresh = true;
        }
      }
      if (step % cfg.eval_every == 0 || step == cfg.max_steps) evaluate_dev(step);
    }
  }

  if (dev.empty()) {
    out.encoder = enc;
    out.store = store.clone();
    out.best_step = step;
  }
  out.dev.beta = cfg.flags.knn_train ? cfg.hyper.beta : 0.0;
  out.dev.flags = cfg.flags;
  for (auto& s : out.dev.per_seed) {
    s.seed = seed;
    s.best_step = out.best_step;
  }
  return out;
}

// -------------------------------------------------------------- zero shot

EvalReport zero_shot(const Classifier& base, const std::vector<Example>& unlabeled, const std::vector<Example>& test,
                     const LabelSpace& ls, const EvalOptions& options, const IndexConfig& index) {
  if (unlabeled.empty()) throw Error(ErrorCode::EmptyCorpus, "no unlabeled examples to pseudo-label");
  std::vector<Example> pseudo = unlabeled;
  std::vector<std::size_t> counts(ls.num_classes(), 0);
  for (auto& ex : pseudo) {
    const auto q = base.query(ex);
    ex.label = base.predict(ex, q.values(), nullptr, std::nullopt).argmax();
    ++counts[*ex.label];
  }
  const auto store = KnowledgeStore::build(pseudo, ls, *base.key_encoder(), index);
  auto report = evaluate(base, store, test, options);

  std::string dist = "pseudo-label counts:";
  std::size_t used = 0;
  for (ClassId c = 0; c < counts.size(); ++c) {
    dist += " " + ls.class_name(c) + "=" + std::to_string(counts[c]);
    used += counts[c] > 0;
  }
  report.notes.push_back(dist);
  report.notes.push_back("pseudo-labels are not confidence-thresholded");
  if (used <= 1) report.notes.push_back("store-class-collapse: every pseudo-label is the same class");
  if (options.k > store.size()) report.notes.push_back("k exceeds store size; all entries retrieved");
  return report;
}

}  // namespace retro
