#include "retro/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "retro/dataset.hpp"

namespace retro {

namespace {

std::vector<std::string> class_names_for(std::size_t classes) {
  if (classes == 2) return {"positive", "negative"};
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

std::vector<std::string> label_words_for(std::size_t classes) {
  if (classes == 2) return {"great", "terrible"};
  std::vector<std::string> words;
  for (std::size_t c = 0; c < classes; ++c) words.push_back("word" + std::to_string(c));
  return words;
}

std::string join_ids(const Vocabulary& vocab, const TokenSeq& ids) { return vocab.detokenize(ids); }

}  // namespace

TextBenchmark make_text_benchmark(const TextSynthConfig& cfg) {
  if (cfg.classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
  if (cfg.cluster_tokens == 0 || cfg.cluster_tokens > cfg.pool_size) {
    throw Error(ErrorCode::InvalidArgument, "cluster signature must be a nonempty subset of the pool");
  }
  if (cfg.clusters_per_class == 0 || cfg.length == 0) throw Error(ErrorCode::InvalidArgument, "empty clusters");
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::string> tokens{"[CLS]", "[SEP]", "[MASK]", "[UNK]", "It", "was", "."};
  const auto words = label_words_for(cfg.classes);
  tokens.insert(tokens.end(), words.begin(), words.end());
  const TokenId pool_start = static_cast<TokenId>(tokens.size());
  for (std::size_t i = 0; i < cfg.pool_size; ++i) tokens.push_back("w" + std::to_string(i));
  const TokenId class_start = static_cast<TokenId>(tokens.size());
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t i = 0; i < cfg.class_tokens; ++i) tokens.push_back("c" + std::to_string(c) + "_" + std::to_string(i));
  }

  TextBenchmark bench;
  bench.task.vocab = Vocabulary(tokens);
  bench.task.tmpl = Template::sst2(bench.task.vocab);
  std::vector<std::vector<TokenId>> word_ids;
  for (const auto& w : words) word_ids.push_back({bench.task.vocab.id(w)});
  bench.task.labels = LabelSpace(class_names_for(cfg.classes), word_ids);

  std::vector<TokenId> pool(cfg.pool_size);
  std::iota(pool.begin(), pool.end(), pool_start);
  // signatures[c][t]: token subset of cluster t of class c
  std::vector<std::vector<std::vector<TokenId>>> signatures(cfg.classes);
  if (cfg.parity_clusters) {
    const std::size_t half = std::max<std::size_t>(1, cfg.cluster_tokens / 2);
    if (2 * cfg.classes * half > cfg.pool_size) {
      throw Error(ErrorCode::InvalidArgument, "pool too small for disjoint parity groups");
    }
    std::vector<TokenId> shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto group = [&](std::size_t g) {
      return std::vector<TokenId>(shuffled.begin() + static_cast<std::ptrdiff_t>(g * half),
                                  shuffled.begin() + static_cast<std::ptrdiff_t>((g + 1) * half));
    };
    for (std::size_t a = 0; a < cfg.classes; ++a) {
      for (std::size_t b = 0; b < cfg.classes; ++b) {
        auto sig = group(a);
        const auto second = group(cfg.classes + b);
        sig.insert(sig.end(), second.begin(), second.end());
        signatures[(a + b) % cfg.classes].push_back(std::move(sig));
      }
    }
  } else {
    for (auto& clusters : signatures) {
      for (std::size_t t = 0; t < cfg.clusters_per_class; ++t) {
        std::vector<TokenId> shuffled = pool;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        shuffled.resize(cfg.cluster_tokens);
        clusters.push_back(std::move(shuffled));
      }
    }
  }

  ExampleId next_id = 0;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_pool(0, cfg.pool_size - 1);
  auto sample = [&](ClassId c, bool labeled) {
    const auto& clusters = signatures[c];
    const auto& sig = clusters[std::uniform_int_distribution<std::size_t>(0, clusters.size() - 1)(rng)];
    std::uniform_int_distribution<std::size_t> any_sig(0, sig.size() - 1);
    TokenSeq seq;
    std::uniform_int_distribution<std::size_t> any_class_token(0, cfg.class_tokens > 0 ? cfg.class_tokens - 1 : 0);
    for (std::size_t i = 0; i < cfg.length; ++i) {
      const double u = coin(rng);
      if (cfg.class_tokens > 0 && u < cfg.class_signal) {
        seq.push_back(class_start + static_cast<TokenId>(c * cfg.class_tokens + any_class_token(rng)));
      } else if (u < cfg.class_signal + cfg.signal) {
        seq.push_back(sig[any_sig(rng)]);
      } else {
        seq.push_back(pool[any_pool(rng)]);
      }
    }
    Example ex;
    ex.id = next_id++;
    ex.input = std::move(seq);
    if (labeled) ex.label = c;
    return ex;
  };
  auto split = [&](std::size_t per_class, bool labeled) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (ClassId c = 0; c < cfg.classes; ++c) out.push_back(sample(c, labeled));
    }
    return out;
  };
  bench.train = split(cfg.shots, true);
  bench.dev = split(cfg.dev_per_class, true);
  bench.test = split(cfg.test_per_class, true);
  bench.unlabeled = split(cfg.unlabeled_per_class, false);
  return bench;
}

FeatureBenchmark make_feature_benchmark(const FeatureSynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.dim == 0) throw Error(ErrorCode::InvalidArgument, "need >= 2 classes and dim > 0");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };

  std::vector<std::vector<double>> centers(cfg.classes);
  for (auto& c : centers) {
    c.resize(cfg.dim);
    for (double& x : c) x = normal(rng);
    c = unit(std::move(c));
  }
  std::vector<std::vector<double>> protos(cfg.classes);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    protos[c] = centers[c];
    for (double& x : protos[c]) x += cfg.prototype_noise * normal(rng);
  }

  FeatureBenchmark bench;
  bench.labels = feature_label_space(class_names_for(cfg.classes));
  bench.base = PrototypeClassifier(protos, cfg.context_tokens, cfg.tau);

  ExampleId next_id = 0;
  auto sample = [&](ClassId c, bool labeled) {
    std::vector<double> v = centers[c];
    for (double& x : v) x += cfg.spread * normal(rng);
    v = unit(std::move(v));
    Example ex;
    ex.id = next_id++;
    ex.input = Embedding(std::vector<float>(v.begin(), v.end()));
    if (labeled) ex.label = c;
    return ex;
  };
  auto split = [&](std::size_t per_class, bool labeled) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (ClassId c = 0; c < cfg.classes; ++c) out.push_back(sample(c, labeled));
    }
    return out;
  };
  bench.train = split(cfg.shots, true);
  bench.dev = split(cfg.dev_per_class, true);
  bench.test = split(cfg.test_per_class, true);
  bench.unlabeled = split(cfg.unlabeled_per_class, false);
  return bench;
}

void write_text_benchmark(const TextBenchmark& bench, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto& task = bench.task;
  task.vocab.save(dir + "/vocab.txt");
  {
    std::ofstream t(dir + "/template.txt");
    t << join_ids(task.vocab, task.tmpl.prefix()) << '|' << join_ids(task.vocab, task.tmpl.infix()) << " [MASK]|"
      << join_ids(task.vocab, task.tmpl.suffix()) << '\n';
  }
  {
    std::ofstream v(dir + "/verbalizer.tsv");
    for (ClassId c = 0; c < task.labels.num_classes(); ++c) {
      v << task.labels.class_name(c) << '\t';
      const auto& ws = task.labels.words_of(c);
      for (std::size_t i = 0; i < ws.size(); ++i) {
        v << (i ? "," : "") << task.vocab.token(task.labels.word_token(ws[i]));
      }
      v << '\n';
    }
  }
  save_jsonl(dir + "/train.jsonl", bench.train, &task.vocab, task.labels);
  save_jsonl(dir + "/dev.jsonl", bench.dev, &task.vocab, task.labels);
  save_jsonl(dir + "/test.jsonl", bench.test, &task.vocab, task.labels);
  if (!bench.unlabeled.empty()) save_jsonl(dir + "/unlabeled.jsonl", bench.unlabeled, &task.vocab, task.labels);
}

void write_feature_benchmark(const FeatureBenchmark& bench, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream c(dir + "/classes.txt");
    for (const auto& n : bench.labels.class_names()) c << n << '\n';
  }
  bench.base.save(dir + "/prototypes.json");
  save_jsonl(dir + "/train.jsonl", bench.train, nullptr, bench.labels);
  save_jsonl(dir + "/dev.jsonl", bench.dev, nullptr, bench.labels);
  save_jsonl(dir + "/test.jsonl", bench.test, nullptr, bench.labels);
  if (!bench.unlabeled.empty()) save_jsonl(dir + "/unlabeled.jsonl", bench.unlabeled, nullptr, bench.labels);
}

}  // namespace retro
