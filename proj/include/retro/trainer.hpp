#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retro/core.hpp"
#include "retro/encoder.hpp"
#include "retro/retro_math.hpp"
#include "retro/store.hpp"

namespace retro {

// One-to-one with the ablations: --no-knn-train, --no-knn-test, --no-demo, --no-refresh.
struct ModeFlags {
  bool knn_train = true;
  bool knn_test = true;
  bool demo = true;
  bool refresh = true;

  static ModeFlags none() { return {false, false, false, false}; }
};

enum class Optimizer { Sgd, AdamW };

struct TrainConfig {
  RetroHyper hyper;              // hyper.k == 0 selects min(8, |C| - 1)
  double learning_rate = 0.1;    // toy-scale default
  std::size_t batch_size = 4;
  std::size_t max_steps = 800;
  std::size_t eval_every = 80;
  std::size_t refresh_period = 1;  // epochs between refreshes
  std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
  ModeFlags flags;
  Optimizer optimizer = Optimizer::Sgd;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t dim = 64;
  IndexConfig index;
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

// Vocabulary, prompt template and verbalizer of a text task.
struct TextTask {
  Vocabulary vocab;
  Template tmpl;
  LabelSpace labels;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t generation = 0;
  std::size_t best_step = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t examples = 0;
  std::vector<SeedResult> per_seed;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;
  std::uint64_t generation = 0;
  double lambda = 0.0;
  std::size_t k = 0;
  double beta = 0.0;
  ModeFlags flags;
  std::vector<std::string> notes;
  std::vector<ClassId> predictions;

  // Recomputes mean/std (sample std, 0 for one seed) from per_seed.
  void summarize();
  nlohmann::json to_json() const;
};

// A base classifier the retrieval layer wraps: it supplies the query key for
// an example and the model distribution P_M, optionally fused with
// demonstrations drawn from the store.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Embedding query(const Example& ex) const = 0;
  virtual Distribution predict(const Example& ex, std::span<const float> query, const KnowledgeStore* store,
                               std::optional<ExampleId> exclude) const = 0;
  virtual std::unique_ptr<KeyEncoder> key_encoder() const = 0;
};

class TextClassifier final : public Classifier {
 public:
  TextClassifier(const ToyEncoder& encoder, const TextTask& task, bool use_demo, std::size_t m)
      : encoder_(encoder), task_(task), use_demo_(use_demo), m_(m) {}

  std::size_t num_classes() const override { return task_.labels.num_classes(); }
  Embedding query(const Example& ex) const override;
  Distribution predict(const Example& ex, std::span<const float> query, const KnowledgeStore* store,
                       std::optional<ExampleId> exclude) const override;
  std::unique_ptr<KeyEncoder> key_encoder() const override;

 private:
  const ToyEncoder& encoder_;
  const TextTask& task_;
  bool use_demo_;
  std::size_t m_;
};

class FeatureClassifier final : public Classifier {
 public:
  explicit FeatureClassifier(const PrototypeClassifier& base) : base_(base) {}

  std::size_t num_classes() const override { return base_.num_classes(); }
  Embedding query(const Example& ex) const override;
  Distribution predict(const Example& ex, std::span<const float> query, const KnowledgeStore* store,
                       std::optional<ExampleId> exclude) const override;
  std::unique_ptr<KeyEncoder> key_encoder() const override;

 private:
  const PrototypeClassifier& base_;
};

// Per class, the m nearest entries of that class (softmax-weighted) plus the
// class label word, in class order. A class with no eligible entry gets a
// zero aggregate.
FusedInput build_demonstrations(const KnowledgeStore& store, std::span<const float> query, const LabelSpace& ls,
                                std::size_t m, std::optional<ExampleId> exclude);

struct EvalOptions {
  double lambda = RetroHyper::kFewShotLambda;
  std::size_t k = 8;
  std::size_t threads = 1;
};

// P = (1 - lambda) P_M + lambda P_kNN per example; no exclusion at test time.
EvalReport evaluate(const Classifier& model, const KnowledgeStore& store, const std::vector<Example>& test,
                    const EvalOptions& options);

double accuracy(std::span<const ClassId> predicted, std::span<const ClassId> gold);
double macro_f1(std::span<const ClassId> predicted, std::span<const ClassId> gold, std::size_t num_classes);

struct TrainOutcome {
  ToyEncoder encoder;
  KnowledgeStore store;
  EvalReport dev;
  std::vector<double> step_losses;
  std::size_t best_step = 0;
};

// kNN-guided training for one seed. Every step retrieves with the query's own
// id excluded, weights the cross-entropy by 1 + beta * F, optionally fuses
// demonstrations, and applies one optimizer update; the store is refreshed
// every `refresh_period` epochs. Returns the best dev checkpoint (ties keep the
// earlier one) or the final model when `dev` is empty.
TrainOutcome train(const std::vector<Example>& corpus, const std::vector<Example>& dev, const TextTask& task,
                   const TrainConfig& cfg, std::uint64_t seed);

// Pseudo-zero-shot: label the unlabeled corpus with the base model's argmax,
// build a store from those pairs, and evaluate with interpolation. The base
// model is never updated.
EvalReport zero_shot(const Classifier& base, const std::vector<Example>& unlabeled, const std::vector<Example>& test,
                     const LabelSpace& ls, const EvalOptions& options, const IndexConfig& index = {});

// Feature mode label space: one synthetic label word per class.
LabelSpace feature_label_space(std::vector<std::string> class_names);

}  // namespace retro
