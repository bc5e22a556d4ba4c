#include "retro/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace retro {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidTemplate: return "InvalidTemplate";
    case ErrorCode::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::InvalidLabelSpace: return "InvalidLabelSpace";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::TooManyLists: return "TooManyLists";
    case ErrorCode::EmptyNeighborhood: return "EmptyNeighborhood";
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::MixedModes: return "MixedModes";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

// ---------------------------------------------------------------- Embedding

Embedding::Embedding(std::vector<float> values) : values_(std::move(values)) {
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "embedding has a non-finite entry");
  }
}

double Embedding::norm() const {
  if (!norm_) {
    double acc = 0.0;
    for (float v : values_) acc += static_cast<double>(v) * v;
    norm_ = std::sqrt(acc);
  }
  return *norm_;
}

// ------------------------------------------------------------- Distribution

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorCode::InvalidDistribution, "probabilities must be finite and nonnegative");
    }
    sum += p;
  }
  if (probs_.empty() || std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::InvalidDistribution, "probabilities sum to " + std::to_string(sum));
  }
}

Distribution Distribution::normalized(std::vector<double> mass) {
  double total = 0.0;
  for (double m : mass) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw Error(ErrorCode::InvalidDistribution, "mass must be finite and nonnegative");
    }
    total += m;
  }
  if (total <= 0.0) throw Error(ErrorCode::DegenerateDistribution, "all mass is zero");
  for (double& m : mass) m /= total;
  return Distribution(std::move(mass));
}

Distribution Distribution::uniform(std::size_t classes) {
  if (classes == 0) throw Error(ErrorCode::InvalidArgument, "uniform distribution over zero classes");
  return Distribution(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

ClassId Distribution::argmax() const {
  return static_cast<ClassId>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

// --------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::string_view special : {kClsToken, kSepToken, kMaskToken, kUnkToken}) {
    if (std::find(tokens_.begin(), tokens_.end(), special) == tokens_.end()) {
      tokens_.emplace_back(special);
    }
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) tokens.push_back(std::move(t));
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw Error(ErrorCode::UnknownToken, "'" + std::string(token) + "' not in vocabulary");
  return *found;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(id));
  return tokens_[id];
}

TokenSeq Vocabulary::tokenize(std::string_view text, std::vector<std::string>* misses) const {
  TokenSeq out;
  for (const auto& word : split_ws(text)) {
    if (auto found = find(word)) {
      out.push_back(*found);
    } else {
      out.push_back(unk());
      if (misses) misses->push_back(word);
    }
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

// ----------------------------------------------------------------- Template

Template::Template(TokenSeq prefix, TokenSeq infix, TokenSeq suffix, TokenId mask)
    : prefix_(std::move(prefix)), mask_(mask) {
  auto count = [mask](const TokenSeq& s) { return std::count(s.begin(), s.end(), mask); };
  if (count(prefix_) != 0) throw Error(ErrorCode::InvalidTemplate, "mask marker in the prefix");
  const auto total = count(infix) + count(suffix);
  if (total != 1) {
    throw Error(ErrorCode::InvalidTemplate,
                "expected exactly one mask marker, found " + std::to_string(total));
  }
  // Normalize so the mask sits between infix_ and suffix_.
  TokenSeq joined = std::move(infix);
  joined.insert(joined.end(), suffix.begin(), suffix.end());
  const auto at = std::find(joined.begin(), joined.end(), mask);
  infix_.assign(joined.begin(), at);
  suffix_.assign(at + 1, joined.end());
}

Template Template::parse(std::string_view line, const Vocabulary& vocab) {
  std::vector<std::string> segments;
  std::size_t start = 0;
  while (true) {
    const auto bar = line.find('|', start);
    segments.emplace_back(line.substr(start, bar == std::string_view::npos ? bar : bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  if (segments.size() > 3) throw Error(ErrorCode::InvalidTemplate, "more than three segments");
  segments.resize(3);
  auto ids = [&vocab](const std::string& seg) {
    TokenSeq out;
    for (const auto& w : split_ws(seg)) out.push_back(vocab.id(w));
    return out;
  };
  return Template(ids(segments[0]), ids(segments[1]), ids(segments[2]), vocab.mask());
}

Template Template::load(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open template " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) return parse(line, vocab);
  }
  throw Error(ErrorCode::InvalidTemplate, "template file is empty");
}

Template Template::sst2(const Vocabulary& vocab) {
  return Template({vocab.cls()}, {vocab.id("It"), vocab.id("was")},
                  {vocab.mask(), vocab.id("."), vocab.sep()}, vocab.mask());
}

TemplatedSequence apply_template(std::span<const TokenId> tokens, const Template& t) {
  TemplatedSequence out;
  out.tokens.reserve(t.overhead() + tokens.size());
  out.tokens.insert(out.tokens.end(), t.prefix().begin(), t.prefix().end());
  out.tokens.insert(out.tokens.end(), tokens.begin(), tokens.end());
  out.tokens.insert(out.tokens.end(), t.infix().begin(), t.infix().end());
  out.mask_position = out.tokens.size();
  out.tokens.push_back(t.mask());
  out.tokens.insert(out.tokens.end(), t.suffix().begin(), t.suffix().end());
  return out;
}

// --------------------------------------------------------------- LabelSpace

LabelSpace::LabelSpace(std::vector<std::string> class_names, std::vector<std::vector<TokenId>> words,
                       Aggregation g)
    : names_(std::move(class_names)), g_(g) {
  if (names_.empty() || names_.size() != words.size()) {
    throw Error(ErrorCode::InvalidLabelSpace, "need one nonempty word list per class");
  }
  class_words_.resize(names_.size());
  for (ClassId c = 0; c < names_.size(); ++c) {
    if (words[c].empty()) throw Error(ErrorCode::InvalidLabelSpace, "class '" + names_[c] + "' has no label word");
    for (TokenId w : words[c]) {
      if (std::find(word_tokens_.begin(), word_tokens_.end(), w) != word_tokens_.end()) {
        throw Error(ErrorCode::InvalidLabelSpace, "label word shared between classes");
      }
      class_words_[c].push_back(word_tokens_.size());
      word_tokens_.push_back(w);
      word_class_.push_back(c);
    }
  }
}

LabelSpace LabelSpace::load(const std::string& path, const Vocabulary& vocab, Aggregation g) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open verbalizer " + path);
  std::vector<std::string> names;
  std::vector<std::vector<TokenId>> words;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::InvalidLabelSpace, "missing TAB in '" + line + "'");
    names.push_back(trim(line.substr(0, tab)));
    std::vector<TokenId> ids;
    std::stringstream list(line.substr(tab + 1));
    std::string w;
    while (std::getline(list, w, ',')) {
      auto t = trim(w);
      if (!t.empty()) ids.push_back(vocab.id(t));
    }
    words.push_back(std::move(ids));
  }
  return LabelSpace(std::move(names), std::move(words), g);
}

std::optional<ClassId> LabelSpace::find_class(std::string_view name) const {
  for (ClassId c = 0; c < names_.size(); ++c) {
    if (names_[c] == name) return c;
  }
  return std::nullopt;
}

Distribution verbalize(std::span<const double> word_probs, const LabelSpace& ls) {
  if (word_probs.size() != ls.num_words()) {
    throw Error(ErrorCode::DimensionMismatch, "word probabilities do not cover the label words");
  }
  std::vector<double> mass(ls.num_classes(), 0.0);
  for (ClassId c = 0; c < ls.num_classes(); ++c) {
    for (std::size_t w : ls.words_of(c)) {
      const double p = word_probs[w];
      if (!(p >= 0.0)) throw Error(ErrorCode::InvalidDistribution, "negative word probability");
      mass[c] = ls.aggregation() == Aggregation::Sum ? mass[c] + p : std::max(mass[c], p);
    }
  }
  return Distribution::normalized(std::move(mass));
}

}  // namespace retro
