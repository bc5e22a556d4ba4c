#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "retro/core.hpp"

namespace retro {

// Floor applied to the reference-class kNN probability before taking the log,
// so a neighborhood without the gold class yields a finite guidance factor.
inline constexpr double kProbFloor = 1e-8;

struct RetroHyper {
  std::size_t k = 8;
  double beta = 0.1;
  double lambda = 0.2;
  std::size_t m = 2;
  double tau = 0.07;

  void validate() const;

  static constexpr double kFewShotLambda = 0.2;
  static constexpr double kZeroShotLambda = 0.7;
  static constexpr std::size_t kZeroShotK = 256;
};

// Few-shot neighbor count: min(8, |C| - 1), at least 1.
std::size_t few_shot_k(std::size_t corpus_size);

struct ClassScore {
  ClassId label = 0;
  double similarity = 0.0;
};

struct KnnResult {
  std::vector<std::size_t> entries;
  std::vector<double> scores;
  Distribution p_knn;
  double p_ref = 0.0;
};

// P(y) proportional to the sum of exp(similarity) over neighbors labelled y.
Distribution knn_distribution(std::span<const ClassScore> neighbors, std::size_t num_classes);

// -log(max(p_ref, kProbFloor))
double guidance_factor(double p_ref);

// (1 + beta * F) * ce; F enters as a constant weight.
double modulated_loss(double ce, double guidance, double beta);
double loss_weight(double guidance, double beta);

// (1 - lambda) * p_model + lambda * p_knn
Distribution interpolate(const Distribution& p_model, const Distribution& p_knn, double lambda);

// Softmax over <query, neighbor_i>.
std::vector<double> demo_weights(std::span<const float> query, std::span<const std::span<const float>> neighbors);

// sum_i weights[i] * neighbors[i]
std::vector<double> aggregate(std::span<const double> weights, std::span<const std::span<const float>> neighbors);

// Numerically stable softmax; shared by every probability head.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace retro
