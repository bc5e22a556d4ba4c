#include "retro/index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace retro {

KeyMatrix::KeyMatrix(std::vector<float> data, std::size_t dim) : data_(std::move(data)), dim_(dim) {
  if (dim_ == 0 || data_.size() % dim_ != 0) {
    throw Error(ErrorCode::DimensionMismatch, "key buffer is not a whole number of rows");
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

namespace {

void check_query(std::span<const float> query, std::size_t k, std::size_t dim) {
  if (k == 0) throw Error(ErrorCode::InvalidK, "k must be at least 1");
  if (query.size() != dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "query has dimension " + std::to_string(query.size()) + ", index " + std::to_string(dim));
  }
}

std::vector<float> unit(std::span<const float> v) {
  double n2 = 0.0;
  for (float x : v) n2 += static_cast<double>(x) * x;
  if (n2 == 0.0) throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero vector");
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

std::vector<Neighbor> top_k(std::vector<Neighbor> candidates, std::size_t k) {
  if (candidates.size() > k) {
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), ranks_before);
    candidates.resize(k);
  } else {
    std::sort(candidates.begin(), candidates.end(), ranks_before);
  }
  return candidates;
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

std::shared_ptr<const KeyMatrix> normalized_rows(const KeyMatrix& keys) {
  std::vector<float> data;
  data.reserve(keys.data().size());
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    auto u = unit(keys.row(r));
    data.insert(data.end(), u.begin(), u.end());
  }
  return std::make_shared<const KeyMatrix>(std::move(data), keys.dim());
}

// ---------------------------------------------------------------- FlatIndex

FlatIndex::FlatIndex(std::shared_ptr<const KeyMatrix> keys, Metric metric)
    : keys_(metric == Metric::Cosine ? normalized_rows(*keys) : std::move(keys)), metric_(metric) {}

std::vector<Neighbor> FlatIndex::search(std::span<const float> query, std::size_t k,
                                        const SearchFilter& filter) const {
  check_query(query, k, dim());
  std::vector<float> normalized;
  if (metric_ == Metric::Cosine) {
    normalized = unit(query);
    query = normalized;
  }
  std::vector<Neighbor> candidates;
  candidates.reserve(keys_->rows());
  for (std::size_t r = 0; r < keys_->rows(); ++r) {
    if (!filter.admits(r)) continue;
    candidates.push_back({r, dot(query, keys_->row(r))});
  }
  return top_k(std::move(candidates), k);
}

// ----------------------------------------------------------------- IvfIndex

std::size_t default_n_list(std::size_t count) {
  auto n = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  return std::max<std::size_t>(1, std::min(n, count));
}

std::size_t default_n_probe(std::size_t n_list) { return std::max<std::size_t>(1, n_list / 8); }

IvfIndex::IvfIndex(std::shared_ptr<const KeyMatrix> keys, std::vector<float> centroids,
                   std::vector<std::vector<std::size_t>> lists, std::size_t n_probe, Metric metric)
    : keys_(std::move(keys)),
      centroids_(std::move(centroids)),
      lists_(std::move(lists)),
      n_probe_(std::clamp<std::size_t>(n_probe, 1, std::max<std::size_t>(1, lists_.size()))),
      metric_(metric) {
  if (centroids_.size() != lists_.size() * keys_->dim()) {
    throw Error(ErrorCode::DimensionMismatch, "centroid buffer does not match list count");
  }
}

std::vector<Neighbor> IvfIndex::search(std::span<const float> query, std::size_t k,
                                       const SearchFilter& filter) const {
  return search(query, k, n_probe_, filter);
}

std::vector<Neighbor> IvfIndex::search(std::span<const float> query, std::size_t k, std::size_t n_probe,
                                       const SearchFilter& filter) const {
  check_query(query, k, dim());
  std::vector<float> normalized;
  if (metric_ == Metric::Cosine) {
    normalized = unit(query);
    query = normalized;
  }
  n_probe = std::clamp<std::size_t>(n_probe, 1, lists_.size());

  std::vector<std::pair<double, std::size_t>> order(lists_.size());
  for (std::size_t l = 0; l < lists_.size(); ++l) order[l] = {squared_distance(query, centroid(l)), l};
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_probe), order.end());

  std::vector<Neighbor> candidates;
  for (std::size_t p = 0; p < n_probe; ++p) {
    for (std::size_t r : lists_[order[p].second]) {
      if (!filter.admits(r)) continue;
      candidates.push_back({r, dot(query, keys_->row(r))});
    }
  }
  return top_k(std::move(candidates), k);
}

IvfIndex train_ivf(std::shared_ptr<const KeyMatrix> keys, const IvfParams& params) {
  if (params.metric == Metric::Cosine) keys = normalized_rows(*keys);
  const std::size_t n = keys->rows();
  const std::size_t d = keys->dim();
  if (n == 0) throw Error(ErrorCode::EmptyCorpus, "cannot cluster an empty key set");
  const std::size_t n_list = params.n_list == 0 ? default_n_list(n) : params.n_list;
  if (n_list > n) {
    throw Error(ErrorCode::TooManyLists,
                std::to_string(n_list) + " lists requested for " + std::to_string(n) + " keys");
  }

  std::mt19937_64 rng(params.seed);
  std::vector<float> centroids;
  centroids.reserve(n_list * d);

  // k-means++ seeding.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < n_list; ++c) {
    auto row = keys->row(pick);
    centroids.insert(centroids.end(), row.begin(), row.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(keys->row(i), row));
      total += nearest[i];
    }
    if (c + 1 == n_list) break;
    if (total <= 0.0) {
      // All remaining keys coincide with a centroid; take the next unused row.
      pick = (pick + 1) % n;
      continue;
    }
    double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= nearest[i];
      if (target < 0.0 && nearest[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<std::size_t> assign(n, 0);
  auto assign_all = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n_list; ++c) {
        const double dist = squared_distance(keys->row(i), {centroids.data() + c * d, d});
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      changed |= assign[i] != best;
      assign[i] = best;
    }
    return changed;
  };

  assign_all();
  for (std::size_t it = 0; it < params.iters; ++it) {
    std::vector<double> sums(n_list * d, 0.0);
    std::vector<std::size_t> counts(n_list, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = keys->row(i);
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += row[j];
    }
    for (std::size_t c = 0; c < n_list; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < d; ++j) {
        centroids[c * d + j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
      }
    }
    if (!assign_all()) break;
  }

  std::vector<std::vector<std::size_t>> lists(n_list);
  for (std::size_t i = 0; i < n; ++i) lists[assign[i]].push_back(i);
  const std::size_t n_probe = params.n_probe == 0 ? default_n_probe(n_list) : params.n_probe;
  // Cosine keys are already unit-norm, so the index scores them as inner products
  // and normalizes queries itself.
  return IvfIndex(std::move(keys), std::move(centroids), std::move(lists), n_probe, params.metric);
}

}  // namespace retro
