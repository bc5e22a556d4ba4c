#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "retro/error.hpp"

namespace retro {

using TokenId = std::uint32_t;
using ClassId = std::uint32_t;
using ExampleId = std::uint64_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kUnkToken = "[UNK]";

// Fixed-dimension float vector; the unit stored as a key in the knowledge store.
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::size_t dim) : values_(dim, 0.0f) {}
  explicit Embedding(std::vector<float> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  std::span<float> mutable_values() noexcept {
    norm_.reset();
    return values_;
  }
  float operator[](std::size_t i) const { return values_[i]; }

  // Euclidean norm, computed once and cached.
  double norm() const;

  bool operator==(const Embedding& other) const { return values_ == other.values_; }

 private:
  std::vector<float> values_;
  mutable std::optional<double> norm_;
};

// Per-class probabilities: nonnegative, summing to 1 within 1e-6.
class Distribution {
 public:
  static constexpr double kSumTolerance = 1e-6;

  Distribution() = default;
  explicit Distribution(std::vector<double> probs);

  // Builds a distribution from nonnegative masses by dividing through by their sum.
  static Distribution normalized(std::vector<double> mass);
  static Distribution uniform(std::size_t classes);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  // Lowest class index among the maxima.
  ClassId argmax() const;

  bool operator==(const Distribution& other) const { return probs_ == other.probs_; }

 private:
  std::vector<double> probs_;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Special tokens missing from `tokens` are appended.
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;  // throws UnknownToken
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenId cls() const { return id(kClsToken); }
  TokenId sep() const { return id(kSepToken); }
  TokenId mask() const { return id(kMaskToken); }
  TokenId unk() const { return id(kUnkToken); }

  // Whitespace tokenization; words missing from the vocabulary become [UNK]
  // and are appended to `misses` when provided.
  TokenSeq tokenize(std::string_view text, std::vector<std::string>* misses = nullptr) const;
  std::string detokenize(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TemplatedSequence {
  TokenSeq tokens;
  std::size_t mask_position = 0;
};

// prefix ++ input ++ infix ++ [MASK] ++ suffix
class Template {
 public:
  Template() = default;
  // The mask id must occur exactly once across infix and suffix; it may not
  // appear in the prefix since the slot has to follow the input.
  Template(TokenSeq prefix, TokenSeq infix, TokenSeq suffix, TokenId mask);

  // One line `prefix|infix|suffix` with a literal [MASK] marking the slot.
  static Template parse(std::string_view line, const Vocabulary& vocab);
  static Template load(const std::string& path, const Vocabulary& vocab);

  // "[CLS] <x> It was [MASK] . [SEP]"
  static Template sst2(const Vocabulary& vocab);

  const TokenSeq& prefix() const noexcept { return prefix_; }
  const TokenSeq& infix() const noexcept { return infix_; }
  const TokenSeq& suffix() const noexcept { return suffix_; }
  TokenId mask() const noexcept { return mask_; }
  std::size_t overhead() const noexcept { return prefix_.size() + infix_.size() + 1 + suffix_.size(); }

 private:
  TokenSeq prefix_, infix_, suffix_;
  TokenId mask_ = 0;
};

TemplatedSequence apply_template(std::span<const TokenId> tokens, const Template& t);

enum class Aggregation { Sum, Max };

// Classes, their label words and the maps f (class -> word) and g
// (word probabilities -> class probabilities).
class LabelSpace {
 public:
  LabelSpace() = default;
  LabelSpace(std::vector<std::string> class_names, std::vector<std::vector<TokenId>> words,
             Aggregation g = Aggregation::Sum);

  // `class_name<TAB>word1,word2` per line, class order = line order.
  static LabelSpace load(const std::string& path, const Vocabulary& vocab,
                         Aggregation g = Aggregation::Sum);

  std::size_t num_classes() const noexcept { return names_.size(); }
  std::size_t num_words() const noexcept { return word_tokens_.size(); }
  Aggregation aggregation() const noexcept { return g_; }

  const std::string& class_name(ClassId c) const { return names_.at(c); }
  std::optional<ClassId> find_class(std::string_view name) const;

  // Label-word indices (0..|V|-1) belonging to class c.
  const std::vector<std::size_t>& words_of(ClassId c) const { return class_words_.at(c); }
  // Verbalizer f: the first label word of the class.
  std::size_t verbalize_class(ClassId c) const { return class_words_.at(c).front(); }
  ClassId class_of_word(std::size_t word) const { return word_class_.at(word); }
  TokenId word_token(std::size_t word) const { return word_tokens_.at(word); }
  const std::vector<TokenId>& word_tokens() const noexcept { return word_tokens_; }
  const std::vector<std::string>& class_names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<TokenId> word_tokens_;
  std::vector<ClassId> word_class_;
  std::vector<std::vector<std::size_t>> class_words_;
  Aggregation g_ = Aggregation::Sum;
};

// g: label-word probabilities (indexed by label-word index) to a class distribution.
Distribution verbalize(std::span<const double> word_probs, const LabelSpace& ls);

struct Example {
  ExampleId id = 0;
  std::variant<TokenSeq, Embedding> input;
  std::optional<ClassId> label;

  bool is_text() const noexcept { return std::holds_alternative<TokenSeq>(input); }
  const TokenSeq& tokens() const { return std::get<TokenSeq>(input); }
  const Embedding& feature() const { return std::get<Embedding>(input); }
};

}  // namespace retro
