#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "retro/error.hpp"

namespace retro {

// Dense row-major |C| x d key matrix shared between indexes.
class KeyMatrix {
 public:
  KeyMatrix() = default;
  KeyMatrix(std::vector<float> data, std::size_t dim);

  std::size_t rows() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<const float> data() const noexcept { return data_; }

 private:
  std::vector<float> data_;
  std::size_t dim_ = 0;
};

// Left-to-right double accumulation, so every index scores a row identically.
double dot(std::span<const float> a, std::span<const float> b);

enum class Metric { InnerProduct, Cosine };

struct Neighbor {
  std::size_t entry = 0;
  double score = 0.0;

  bool operator==(const Neighbor&) const = default;
};

// Descending score, ties to the lower entry id.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
  return a.score > b.score || (a.score == b.score && a.entry < b.entry);
}

struct SearchFilter {
  std::optional<std::size_t> exclude;
  // Entries for which this returns false are skipped.
  std::function<bool(std::size_t)> accept;

  bool admits(std::size_t entry) const {
    return entry != exclude && (!accept || accept(entry));
  }
};

class Index {
 public:
  virtual ~Index() = default;

  // Top-k entries by similarity, sorted by ranks_before. Returns fewer than k
  // when the filter leaves fewer candidates.
  virtual std::vector<Neighbor> search(std::span<const float> query, std::size_t k,
                                       const SearchFilter& filter = {}) const = 0;

  virtual std::size_t size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Metric metric() const = 0;
};

class FlatIndex final : public Index {
 public:
  explicit FlatIndex(std::shared_ptr<const KeyMatrix> keys, Metric metric = Metric::InnerProduct);

  std::vector<Neighbor> search(std::span<const float> query, std::size_t k,
                               const SearchFilter& filter = {}) const override;
  std::size_t size() const override { return keys_->rows(); }
  std::size_t dim() const override { return keys_->dim(); }
  Metric metric() const override { return metric_; }

 private:
  std::shared_ptr<const KeyMatrix> keys_;
  Metric metric_;
};

struct IvfParams {
  std::size_t n_list = 0;   // 0: ceil(sqrt(|C|))
  std::size_t n_probe = 0;  // 0: max(1, n_list / 8)
  std::size_t iters = 20;
  std::uint64_t seed = 0;
  Metric metric = Metric::InnerProduct;
};

std::size_t default_n_list(std::size_t count);
std::size_t default_n_probe(std::size_t n_list);

// Inverted-file index: k-means coarse quantizer over the keys, one posting
// list per centroid, exact re-scoring of the probed lists.
class IvfIndex final : public Index {
 public:
  IvfIndex(std::shared_ptr<const KeyMatrix> keys, std::vector<float> centroids,
           std::vector<std::vector<std::size_t>> lists, std::size_t n_probe, Metric metric);

  std::vector<Neighbor> search(std::span<const float> query, std::size_t k,
                               const SearchFilter& filter = {}) const override;
  std::vector<Neighbor> search(std::span<const float> query, std::size_t k, std::size_t n_probe,
                               const SearchFilter& filter = {}) const;

  std::size_t size() const override { return keys_->rows(); }
  std::size_t dim() const override { return keys_->dim(); }
  Metric metric() const override { return metric_; }

  std::size_t n_list() const noexcept { return lists_.size(); }
  std::size_t n_probe() const noexcept { return n_probe_; }
  const std::vector<std::vector<std::size_t>>& lists() const noexcept { return lists_; }
  std::span<const float> centroid(std::size_t list) const {
    return {centroids_.data() + list * dim(), dim()};
  }

 private:
  std::shared_ptr<const KeyMatrix> keys_;
  std::vector<float> centroids_;
  std::vector<std::vector<std::size_t>> lists_;
  std::size_t n_probe_;
  Metric metric_;
};

// Lloyd's k-means with k-means++ seeding; each key goes to its nearest
// centroid by Euclidean distance (ties to the lower centroid index).
IvfIndex train_ivf(std::shared_ptr<const KeyMatrix> keys, const IvfParams& params);

// Copy of `keys` with unit-norm rows; throws ZeroNorm on an all-zero row.
std::shared_ptr<const KeyMatrix> normalized_rows(const KeyMatrix& keys);

}  // namespace retro
