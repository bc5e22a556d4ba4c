#include "retro/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "retro/retro_math.hpp"

namespace retro {

namespace {

constexpr std::string_view kEncoderMagic = "RENC";
constexpr std::uint32_t kEncoderVersion = 1;

double log_sum_exp(std::span<const double> xs) {
  const double top = *std::max_element(xs.begin(), xs.end());
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - top);
  return top + std::log(acc);
}

// Index (within ls.words_of(c)) of the highest-logit label word of class c.
std::size_t best_word(std::span<const double> logits, const LabelSpace& ls, ClassId c) {
  const auto& words = ls.words_of(c);
  std::size_t best = words.front();
  for (std::size_t w : words) {
    if (logits[w] > logits[best]) best = w;
  }
  return best;
}

}  // namespace

double class_cross_entropy(std::span<const double> logits, const LabelSpace& ls, ClassId gold) {
  if (ls.aggregation() == Aggregation::Sum) {
    std::vector<double> gold_logits;
    for (std::size_t w : ls.words_of(gold)) gold_logits.push_back(logits[w]);
    return log_sum_exp(logits) - log_sum_exp(gold_logits);
  }
  std::vector<double> chosen(ls.num_classes());
  for (ClassId c = 0; c < ls.num_classes(); ++c) chosen[c] = logits[best_word(logits, ls, c)];
  return log_sum_exp(chosen) - chosen[gold];
}

std::vector<double> class_cross_entropy_grad(std::span<const double> logits, const LabelSpace& ls, ClassId gold) {
  std::vector<double> grad(logits.size(), 0.0);
  if (ls.aggregation() == Aggregation::Sum) {
    const auto p = softmax(logits);
    double gold_mass = 0.0;
    for (std::size_t w : ls.words_of(gold)) gold_mass += p[w];
    for (std::size_t v = 0; v < p.size(); ++v) grad[v] = p[v];
    for (std::size_t w : ls.words_of(gold)) grad[w] -= p[w] / gold_mass;
    return grad;
  }
  // Max aggregation: the renormalized class distribution is a softmax over the
  // per-class best logits, so only those words carry gradient.
  std::vector<std::size_t> chosen(ls.num_classes());
  std::vector<double> chosen_logits(ls.num_classes());
  for (ClassId c = 0; c < ls.num_classes(); ++c) {
    chosen[c] = best_word(logits, ls, c);
    chosen_logits[c] = logits[chosen[c]];
  }
  const auto q = softmax(chosen_logits);
  for (ClassId c = 0; c < ls.num_classes(); ++c) grad[chosen[c]] = q[c] - (c == gold ? 1.0 : 0.0);
  return grad;
}

// --------------------------------------------------------------- ToyEncoder

ToyEncoder::ToyEncoder(std::size_t vocab_size, std::size_t num_words, std::size_t dim)
    : vocab_size_(vocab_size), num_words_(num_words), dim_(dim), params_((vocab_size + num_words) * dim, 0.0) {
  if (vocab_size == 0 || num_words == 0 || dim == 0) {
    throw Error(ErrorCode::InvalidArgument, "encoder sizes must be positive");
  }
}

ToyEncoder ToyEncoder::initialized(std::size_t vocab_size, std::size_t num_words, std::size_t dim,
                                   std::uint64_t seed) {
  ToyEncoder enc(vocab_size, num_words, dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (std::size_t i = 0; i < enc.head_offset(); ++i) enc.params_[i] = u(rng);
  return enc;
}

std::span<const double> ToyEncoder::embedding_row(TokenId token) const {
  if (token >= vocab_size_) throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(token));
  return {params_.data() + static_cast<std::size_t>(token) * dim_, dim_};
}

std::span<double> ToyEncoder::embedding_row(TokenId token) {
  if (token >= vocab_size_) throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(token));
  return {params_.data() + static_cast<std::size_t>(token) * dim_, dim_};
}

std::span<const double> ToyEncoder::head_row(std::size_t word) const {
  return {params_.data() + head_offset() + word * dim_, dim_};
}

std::span<double> ToyEncoder::head_row(std::size_t word) {
  return {params_.data() + head_offset() + word * dim_, dim_};
}

void ToyEncoder::check_tokens(std::span<const TokenId> templated, const FusedInput* fused) const {
  for (TokenId t : templated) {
    if (t >= vocab_size_) throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(t));
  }
  if (!fused) return;
  for (const auto& slot : fused->slots) {
    if (slot.label_word >= vocab_size_) throw Error(ErrorCode::UnknownToken, "label word id out of range");
    if (slot.aggregate.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "demonstration dimension");
  }
}

std::vector<double> ToyEncoder::hidden(std::span<const TokenId> templated, const FusedInput* fused) const {
  check_tokens(templated, fused);
  std::vector<double> h(dim_, 0.0);
  auto add = [&h](std::span<const double> v) {
    for (std::size_t j = 0; j < h.size(); ++j) h[j] += v[j];
  };
  std::size_t count = templated.size();
  for (TokenId t : templated) add(embedding_row(t));
  if (fused) {
    for (const auto& slot : fused->slots) {
      add(slot.aggregate);
      add(embedding_row(slot.label_word));
    }
    count += 2 * fused->slots.size();
  }
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "cannot encode an empty sequence");
  for (double& x : h) x /= static_cast<double>(count);
  return h;
}

Embedding ToyEncoder::encode(std::span<const TokenId> templated, const FusedInput* fused) const {
  const auto h = hidden(templated, fused);
  return Embedding(std::vector<float>(h.begin(), h.end()));
}

std::vector<double> ToyEncoder::word_logits(std::span<const double> h) const {
  if (h.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "hidden vector dimension");
  std::vector<double> z(num_words_, 0.0);
  for (std::size_t v = 0; v < num_words_; ++v) {
    auto w = head_row(v);
    double acc = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) acc += w[j] * h[j];
    z[v] = acc;
  }
  return z;
}

std::vector<double> ToyEncoder::predict_words(std::span<const double> h) const { return softmax(word_logits(h)); }

ForwardPass ToyEncoder::forward(std::span<const TokenId> templated, const FusedInput* fused, const LabelSpace& ls,
                                std::optional<ClassId> gold) const {
  if (ls.num_words() != num_words_) throw Error(ErrorCode::DimensionMismatch, "label space does not match head");
  ForwardPass out;
  out.hidden = hidden(templated, fused);
  const auto logits = word_logits(out.hidden);
  out.word_probs = softmax(logits);
  out.classes = verbalize(out.word_probs, ls);
  if (gold) out.ce = class_cross_entropy(logits, ls, *gold);
  return out;
}

std::vector<double> ToyEncoder::backward(std::span<const TokenId> templated, const FusedInput* fused,
                                         const LabelSpace& ls, ClassId gold, double weight, double* ce_out) const {
  if (ls.num_words() != num_words_) throw Error(ErrorCode::DimensionMismatch, "label space does not match head");
  const auto h = hidden(templated, fused);
  const auto logits = word_logits(h);
  if (ce_out) *ce_out = class_cross_entropy(logits, ls, gold);

  std::vector<double> grad(params_.size(), 0.0);
  auto dz = class_cross_entropy_grad(logits, ls, gold);
  for (double& g : dz) g *= weight;

  std::vector<double> dh(dim_, 0.0);
  for (std::size_t v = 0; v < num_words_; ++v) {
    if (dz[v] == 0.0) continue;
    auto w = head_row(v);
    double* gw = grad.data() + head_offset() + v * dim_;
    for (std::size_t j = 0; j < dim_; ++j) {
      gw[j] += dz[v] * h[j];
      dh[j] += dz[v] * w[j];
    }
  }

  const std::size_t count = templated.size() + (fused ? 2 * fused->slots.size() : 0);
  for (double& g : dh) g /= static_cast<double>(count);
  auto scatter = [&](TokenId t) {
    double* ge = grad.data() + static_cast<std::size_t>(t) * dim_;
    for (std::size_t j = 0; j < dim_; ++j) ge[j] += dh[j];
  };
  for (TokenId t : templated) scatter(t);
  if (fused) {
    for (const auto& slot : fused->slots) scatter(slot.label_word);
  }
  return grad;
}

void ToyEncoder::save(const std::string& path) const {
  detail::ByteWriter w;
  w.bytes(kEncoderMagic);
  w.u32(kEncoderVersion);
  w.u32(static_cast<std::uint32_t>(vocab_size_));
  w.u32(static_cast<std::uint32_t>(num_words_));
  w.u32(static_cast<std::uint32_t>(dim_));
  for (double p : params_) w.f32(static_cast<float>(p));
  detail::write_file(path, w.buffer());
}

ToyEncoder ToyEncoder::load(const std::string& path) {
  const auto buf = detail::read_file(path);
  detail::ByteReader r(buf, ErrorCode::CorruptStore);
  if (r.bytes(4) != kEncoderMagic) throw Error(ErrorCode::CorruptStore, "bad encoder magic");
  if (r.u32() != kEncoderVersion) throw Error(ErrorCode::CorruptStore, "unsupported encoder version");
  const std::size_t vocab = r.u32();
  const std::size_t words = r.u32();
  const std::size_t dim = r.u32();
  if (r.remaining() != (vocab + words) * dim * 4) throw Error(ErrorCode::CorruptStore, "encoder payload size");
  ToyEncoder enc(vocab, words, dim);
  for (double& p : enc.params_) p = r.f32();
  return enc;
}

std::uint64_t ToyEncoder::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (double p : params_) {
    const auto bits = std::bit_cast<std::uint64_t>(p);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

// ------------------------------------------------------ PrototypeClassifier

PrototypeClassifier::PrototypeClassifier(std::vector<std::vector<double>> class_embeddings,
                                         std::size_t context_tokens, double tau)
    : class_embeddings_(std::move(class_embeddings)), tau_(tau) {
  if (class_embeddings_.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
  if (!(tau_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  dim_ = class_embeddings_.front().size();
  for (const auto& c : class_embeddings_) {
    if (c.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "class embedding dimension");
  }
  contexts_.assign(context_tokens, std::vector<double>(dim_, 0.0));
}

std::vector<double> PrototypeClassifier::class_weight(ClassId c) const {
  std::vector<double> w = class_embeddings_.at(c);
  for (const auto& ctx : contexts_) {
    for (std::size_t j = 0; j < dim_; ++j) w[j] += ctx[j];
  }
  for (double& x : w) x /= static_cast<double>(contexts_.size() + 1);
  return w;
}

Distribution PrototypeClassifier::predict(std::span<const float> feature) const {
  if (feature.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "feature dimension");
  double fnorm = 0.0;
  for (float x : feature) fnorm += static_cast<double>(x) * x;
  fnorm = std::sqrt(fnorm);
  if (fnorm == 0.0) throw Error(ErrorCode::ZeroNorm, "zero-norm feature");
  std::vector<double> logits(num_classes());
  for (ClassId c = 0; c < num_classes(); ++c) {
    const auto w = class_weight(c);
    double d = 0.0, wn = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      d += w[j] * feature[j];
      wn += w[j] * w[j];
    }
    if (wn == 0.0) throw Error(ErrorCode::ZeroNorm, "zero-norm class weight");
    logits[c] = d / (std::sqrt(wn) * fnorm) / tau_;
  }
  return Distribution::normalized(softmax(logits));
}

PrototypeClassifier PrototypeClassifier::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open prototypes " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    PrototypeClassifier pc(j.at("classes").get<std::vector<std::vector<double>>>(),
                           j.value("context_tokens", std::size_t{4}), j.value("tau", 0.07));
    if (j.contains("contexts")) {
      auto ctx = j.at("contexts").get<std::vector<std::vector<double>>>();
      if (ctx.size() != pc.contexts_.size()) throw Error(ErrorCode::DimensionMismatch, "context count");
      for (const auto& c : ctx) {
        if (c.size() != pc.dim_) throw Error(ErrorCode::DimensionMismatch, "context dimension");
      }
      pc.contexts_ = std::move(ctx);
    }
    return pc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("prototype file: ") + e.what());
  }
}

void PrototypeClassifier::save(const std::string& path) const {
  nlohmann::json j;
  j["tau"] = tau_;
  j["context_tokens"] = contexts_.size();
  j["classes"] = class_embeddings_;
  j["contexts"] = contexts_;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write prototypes " + path);
  out << j.dump(2) << '\n';
}

}  // namespace retro
