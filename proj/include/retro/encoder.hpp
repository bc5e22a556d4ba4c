#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retro/core.hpp"

namespace retro {

// One demonstration slot per class: the similarity-weighted aggregate of the
// class's retrieved keys followed by the class label word.
struct DemoSlot {
  std::vector<double> aggregate;
  TokenId label_word = 0;
};

// Demonstrations appended after the word-embedding layer, in class order.
struct FusedInput {
  std::vector<DemoSlot> slots;
};

struct ForwardPass {
  std::vector<double> hidden;
  std::vector<double> word_probs;
  Distribution classes;
  double ce = 0.0;  // -log P(gold); 0 when no gold class is given
};

// Stand-in for the foundation model: embedding table E, mean pooling over the
// templated sequence (plus demonstration slots), and a label-word head W.
// Parameters are laid out as [E row-major | W row-major].
class ToyEncoder {
 public:
  ToyEncoder() = default;
  ToyEncoder(std::size_t vocab_size, std::size_t num_words, std::size_t dim);

  // E ~ U(-0.1, 0.1) from a seeded generator, W = 0.
  static ToyEncoder initialized(std::size_t vocab_size, std::size_t num_words, std::size_t dim,
                                std::uint64_t seed);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t num_words() const noexcept { return num_words_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> embedding_row(TokenId token) const;
  std::span<double> embedding_row(TokenId token);
  std::span<const double> head_row(std::size_t word) const;
  std::span<double> head_row(std::size_t word);
  std::size_t head_offset() const noexcept { return vocab_size_ * dim_; }

  // Mean of the embedded sequence vectors, demonstration slots included.
  std::vector<double> hidden(std::span<const TokenId> templated, const FusedInput* fused = nullptr) const;
  Embedding encode(std::span<const TokenId> templated, const FusedInput* fused = nullptr) const;

  std::vector<double> word_logits(std::span<const double> h) const;
  // Softmax over the label words only.
  std::vector<double> predict_words(std::span<const double> h) const;

  ForwardPass forward(std::span<const TokenId> templated, const FusedInput* fused, const LabelSpace& ls,
                      std::optional<ClassId> gold = std::nullopt) const;

  // Gradient of weight * CE(gold) with respect to (E, W). The demonstration
  // aggregates are constants; only the label-word rows of E receive gradient
  // through the slots.
  std::vector<double> backward(std::span<const TokenId> templated, const FusedInput* fused, const LabelSpace& ls,
                               ClassId gold, double weight, double* ce_out = nullptr) const;

  // Little-endian "RENC" checkpoint with 32-bit float parameters.
  void save(const std::string& path) const;
  static ToyEncoder load(const std::string& path);

  // FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

 private:
  void check_tokens(std::span<const TokenId> templated, const FusedInput* fused) const;

  std::size_t vocab_size_ = 0;
  std::size_t num_words_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> params_;
};

// -log P(gold) under verbalizer aggregation g, computed from the logits.
double class_cross_entropy(std::span<const double> logits, const LabelSpace& ls, ClassId gold);
// d CE / d logits.
std::vector<double> class_cross_entropy_grad(std::span<const double> logits, const LabelSpace& ls, ClassId gold);

// Cosine prototype classifier over precomputed features. Class weights are the
// mean of G shared context vectors and a fixed class embedding.
class PrototypeClassifier {
 public:
  PrototypeClassifier() = default;
  PrototypeClassifier(std::vector<std::vector<double>> class_embeddings, std::size_t context_tokens, double tau);

  std::size_t num_classes() const noexcept { return class_embeddings_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  double tau() const noexcept { return tau_; }
  std::size_t context_tokens() const noexcept { return contexts_.size(); }

  std::span<double> context(std::size_t g) { return contexts_.at(g); }
  std::vector<double> class_weight(ClassId c) const;

  // softmax_i(cos(w_i, feature) / tau)
  Distribution predict(std::span<const float> feature) const;

  // JSON: {"tau": t, "context_tokens": G, "classes": [[...], ...]}
  static PrototypeClassifier load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<std::vector<double>> class_embeddings_;
  std::vector<std::vector<double>> contexts_;
  std::size_t dim_ = 0;
  double tau_ = 0.07;
};

}  // namespace retro
