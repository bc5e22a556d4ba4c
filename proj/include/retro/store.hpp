#pragma once

#include <cstddef>
#include <cstdint>
#include <future>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "retro/core.hpp"
#include "retro/encoder.hpp"
#include "retro/index.hpp"

namespace retro {

// Produces the key embedding for an example.
class KeyEncoder {
 public:
  virtual ~KeyEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Embedding embed(const Example& example) const = 0;
};

// Templated text through a frozen copy of the toy encoder.
class TextKeyEncoder final : public KeyEncoder {
 public:
  TextKeyEncoder(ToyEncoder encoder, Template tmpl) : encoder_(std::move(encoder)), template_(std::move(tmpl)) {}

  std::size_t dim() const override { return encoder_.dim(); }
  Embedding embed(const Example& example) const override;

 private:
  ToyEncoder encoder_;
  Template template_;
};

// Precomputed features are their own keys.
class FeatureKeyEncoder final : public KeyEncoder {
 public:
  explicit FeatureKeyEncoder(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const override { return dim_; }
  Embedding embed(const Example& example) const override;

 private:
  std::size_t dim_;
};

struct StoreEntry {
  Embedding key;
  std::uint32_t word = 0;  // label-word index f(y) within the label space
  ClassId label = 0;
  ExampleId example = 0;
  bool stale = false;
};

struct IndexConfig {
  enum class Kind { Flat, Ivf };
  Kind kind = Kind::Flat;
  IvfParams ivf;
  Metric metric = Metric::InnerProduct;
};

// Immutable entry table plus its search index; readers hold one of these for
// the duration of a query.
struct StoreSnapshot {
  std::vector<StoreEntry> entries;
  std::size_t dim = 0;
  std::uint64_t generation = 0;
  std::shared_ptr<const KeyMatrix> keys;
  std::shared_ptr<const Index> index;
  std::unordered_map<ExampleId, std::size_t> by_example;
  std::size_t num_classes = 0;
};

struct StoreHit {
  std::size_t entry = 0;
  ExampleId example = 0;
  ClassId label = 0;
  double score = 0.0;
};

struct StoreSearch {
  std::vector<StoreHit> hits;
  std::uint64_t generation = 0;
  std::shared_ptr<const StoreSnapshot> snapshot;  // the table that answered
};

// The (K, V) knowledge store. Many concurrent readers or one writer: build and
// refresh assemble a replacement snapshot off to the side and publish it with
// the generation bump in a single swap.
class KnowledgeStore {
 public:
  KnowledgeStore();
  ~KnowledgeStore();
  KnowledgeStore(KnowledgeStore&&) noexcept;
  KnowledgeStore& operator=(KnowledgeStore&&) noexcept;

  static KnowledgeStore build(const std::vector<Example>& corpus, const LabelSpace& ls, const KeyEncoder& encoder,
                              const IndexConfig& index = {});
  static KnowledgeStore build(const std::vector<Example>& corpus, const LabelSpace& ls, const ToyEncoder& encoder,
                              const Template& tmpl, const IndexConfig& index = {});

  // Independent store sharing the current snapshot and sources.
  KnowledgeStore clone() const;

  // Re-encodes every key with `encoder`, clears stale flags, bumps the
  // generation and returns the new one.
  std::uint64_t refresh(const KeyEncoder& encoder);
  std::future<std::uint64_t> refresh_async(std::shared_ptr<const KeyEncoder> encoder);

  // Flags every entry as encoded under outdated parameters.
  void mark_stale();

  StoreSearch search(std::span<const float> query, std::size_t k, std::optional<ExampleId> exclude = std::nullopt,
                     std::optional<ClassId> only_class = std::nullopt) const;

  std::shared_ptr<const StoreSnapshot> snapshot() const;
  std::size_t size() const;
  std::size_t dim() const;
  std::uint64_t generation() const;
  const IndexConfig& index_config() const;

  // Source examples kept for refresh; absent after load until reattached.
  bool has_sources() const;
  void attach_sources(const std::vector<Example>& corpus);

  // Little-endian "RKNN" file: header, fixed-width entries, trailing CRC32.
  void save(const std::string& path) const;
  static KnowledgeStore load(const std::string& path, const IndexConfig& index = {});
  std::vector<char> serialize() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace retro
