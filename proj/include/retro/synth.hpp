#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "retro/core.hpp"
#include "retro/encoder.hpp"
#include "retro/trainer.hpp"

namespace retro {

// Token-mixture text task. Each class is a mixture of clusters; a cluster is a
// small signature subset of a shared content pool. An example draws each token
// from its class-owned tokens with probability `class_signal`, from its cluster
// signature with probability `signal`, otherwise uniformly from the pool.
// The defaults are the ablation benchmark: parity clusters that a bag-of-words
// head cannot separate plus a weak class-token cue it can.
struct TextSynthConfig {
  std::size_t classes = 2;
  std::size_t shots = 16;  // per class
  std::size_t dev_per_class = 16;
  std::size_t test_per_class = 500;
  std::size_t unlabeled_per_class = 0;
  std::size_t clusters_per_class = 3;  // ignored with parity_clusters
  std::size_t pool_size = 60;
  std::size_t cluster_tokens = 6;
  std::size_t length = 16;
  double signal = 0.7;
  // Two families of `classes` token groups each; cluster (a, b) belongs to
  // class (a + b) mod classes, so every group is shared evenly across classes
  // and only co-occurrence identifies the class.
  bool parity_clusters = true;
  std::size_t class_tokens = 4;
  double class_signal = 0.15;
  std::uint64_t seed = 0;
};

struct TextBenchmark {
  TextTask task;
  std::vector<Example> train, dev, test, unlabeled;
};

TextBenchmark make_text_benchmark(const TextSynthConfig& cfg);

// Gaussian-feature task: unit-norm features around random class directions,
// plus a prototype classifier whose class embeddings are noisy copies of the
// directions (the stand-in for a zero-shot text encoder).
struct FeatureSynthConfig {
  std::size_t classes = 5;
  std::size_t dim = 32;
  std::size_t shots = 16;
  std::size_t dev_per_class = 16;
  std::size_t test_per_class = 200;
  std::size_t unlabeled_per_class = 400;
  double spread = 0.15;           // per-coordinate noise std before normalization
  double prototype_noise = 0.25;  // per-coordinate noise on the class embeddings
  double tau = 0.07;
  std::size_t context_tokens = 4;
  std::uint64_t seed = 0;
};

struct FeatureBenchmark {
  LabelSpace labels;
  PrototypeClassifier base;
  std::vector<Example> train, dev, test, unlabeled;
};

FeatureBenchmark make_feature_benchmark(const FeatureSynthConfig& cfg);

// Writes train/dev/test/unlabeled .jsonl plus vocab.txt, template.txt and
// verbalizer.tsv (text) or classes.txt and prototypes.json (features).
void write_text_benchmark(const TextBenchmark& bench, const std::string& dir);
void write_feature_benchmark(const FeatureBenchmark& bench, const std::string& dir);

}  // namespace retro
