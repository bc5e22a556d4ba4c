#include "retro/retro_math.hpp"

#include <algorithm>
#include <cmath>

#include "retro/index.hpp"

namespace retro {

void RetroHyper::validate() const {
  if (k < 1) throw Error(ErrorCode::InvalidK, "k must be at least 1");
  if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be nonnegative");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
}

std::size_t few_shot_k(std::size_t corpus_size) {
  return std::max<std::size_t>(1, std::min<std::size_t>(8, corpus_size > 0 ? corpus_size - 1 : 0));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

Distribution knn_distribution(std::span<const ClassScore> neighbors, std::size_t num_classes) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyNeighborhood, "no neighbors to vote");
  double top = neighbors.front().similarity;
  for (const auto& n : neighbors) top = std::max(top, n.similarity);
  std::vector<double> mass(num_classes, 0.0);
  for (const auto& n : neighbors) {
    if (n.label >= num_classes) throw Error(ErrorCode::UnknownLabel, "neighbor class out of range");
    mass[n.label] += std::exp(n.similarity - top);
  }
  return Distribution::normalized(std::move(mass));
}

double guidance_factor(double p_ref) { return -std::log(std::max(p_ref, kProbFloor)); }

double loss_weight(double guidance, double beta) { return 1.0 + beta * guidance; }

double modulated_loss(double ce, double guidance, double beta) { return loss_weight(guidance, beta) * ce; }

Distribution interpolate(const Distribution& p_model, const Distribution& p_knn, double lambda) {
  if (p_model.size() != p_knn.size()) {
    throw Error(ErrorCode::DimensionMismatch, "interpolating distributions of different length");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda must lie in [0, 1]");
  std::vector<double> out(p_model.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * p_model[i] + lambda * p_knn[i];
  return Distribution(std::move(out));
}

std::vector<double> demo_weights(std::span<const float> query, std::span<const std::span<const float>> neighbors) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyNeighborhood, "no demonstrations to weight");
  std::vector<double> dots(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if (neighbors[i].size() != query.size()) throw Error(ErrorCode::DimensionMismatch, "demonstration dimension");
    dots[i] = dot(query, neighbors[i]);
  }
  return softmax(dots);
}

std::vector<double> aggregate(std::span<const double> weights, std::span<const std::span<const float>> neighbors) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyNeighborhood, "no demonstrations to aggregate");
  std::vector<double> out(neighbors.front().size(), 0.0);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[i] * neighbors[i][j];
  }
  return out;
}

}  // namespace retro
