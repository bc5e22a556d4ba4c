#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "retro/encoder.hpp"
#include "retro/retro_math.hpp"

namespace retro::testing {

// A small random encoder instance for finite-difference checks.
struct GradInstance {
  LabelSpace labels;
  ToyEncoder encoder;
  TokenSeq templated;
  std::optional<FusedInput> fused;
  ClassId gold = 0;
  double weight = 1.0;
};

inline GradInstance random_grad_instance(std::mt19937_64& rng, bool with_demo, bool modulated,
                                         Aggregation g = Aggregation::Sum) {
  std::uniform_int_distribution<std::size_t> pick(0, 1000);
  const std::size_t vocab = 8 + pick(rng) % 5;
  const std::size_t dim = 3 + pick(rng) % 3;
  const std::size_t classes = 2 + pick(rng) % 2;
  // Label words are the last tokens of the vocabulary; class 0 gets two.
  std::vector<std::vector<TokenId>> words(classes);
  TokenId next = static_cast<TokenId>(vocab - 1);
  for (std::size_t c = 0; c < classes; ++c) words[c].push_back(next--);
  words[0].push_back(next--);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));

  GradInstance inst;
  inst.labels = LabelSpace(names, words, g);
  inst.encoder = ToyEncoder(vocab, inst.labels.num_words(), dim);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& p : inst.encoder.params()) p = u(rng);

  const std::size_t len = 4 + pick(rng) % 3;
  for (std::size_t i = 0; i < len; ++i) inst.templated.push_back(static_cast<TokenId>(pick(rng) % vocab));
  inst.gold = static_cast<ClassId>(pick(rng) % classes);
  if (with_demo) {
    FusedInput f;
    for (std::size_t c = 0; c < classes; ++c) {
      DemoSlot s;
      s.aggregate.resize(dim);
      for (double& x : s.aggregate) x = u(rng);
      s.label_word = inst.labels.word_token(inst.labels.verbalize_class(static_cast<ClassId>(c)));
      f.slots.push_back(std::move(s));
    }
    inst.fused = std::move(f);
  }
  if (modulated) {
    std::uniform_real_distribution<double> p(0.0, 1.0);
    inst.weight = loss_weight(guidance_factor(p(rng)), 0.1 + p(rng));
  }
  return inst;
}

// Largest relative error between the analytic gradient and central
// differences; coordinates are compared relative to max(|a|, |n|, floor).
inline double max_relative_error(const GradInstance& inst, double step = 1e-5, double floor = 1e-7) {
  const FusedInput* fused = inst.fused ? &*inst.fused : nullptr;
  const auto analytic = inst.encoder.backward(inst.templated, fused, inst.labels, inst.gold, inst.weight);
  ToyEncoder probe = inst.encoder;
  auto loss = [&]() { return inst.weight * probe.forward(inst.templated, fused, inst.labels, inst.gold).ce; };
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.num_params(); ++i) {
    const double saved = probe.params()[i];
    probe.params()[i] = saved + step;
    const double up = loss();
    probe.params()[i] = saved - step;
    const double down = loss();
    probe.params()[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace retro::testing
