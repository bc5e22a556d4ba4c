#include "retro/store.hpp"

#include <algorithm>
#include <mutex>

#include <zlib.h>

#include "binary_io.hpp"

namespace retro {

namespace {

constexpr std::string_view kStoreMagic = "RKNN";
constexpr std::uint32_t kStoreVersion = 1;

std::shared_ptr<const StoreSnapshot> make_snapshot(std::vector<StoreEntry> entries, std::size_t dim,
                                                   std::uint64_t generation, std::size_t num_classes,
                                                   const IndexConfig& cfg) {
  auto snap = std::make_shared<StoreSnapshot>();
  snap->dim = dim;
  snap->generation = generation;
  snap->num_classes = num_classes;
  std::vector<float> data;
  data.reserve(entries.size() * dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.key.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "key dimension differs from store");
    data.insert(data.end(), e.key.values().begin(), e.key.values().end());
    if (!snap->by_example.emplace(e.example, i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate example id " + std::to_string(e.example));
    }
  }
  snap->keys = std::make_shared<const KeyMatrix>(std::move(data), dim);
  if (cfg.kind == IndexConfig::Kind::Ivf) {
    IvfParams p = cfg.ivf;
    p.metric = cfg.metric;
    snap->index = std::make_shared<const IvfIndex>(train_ivf(snap->keys, p));
  } else {
    snap->index = std::make_shared<const FlatIndex>(snap->keys, cfg.metric);
  }
  snap->entries = std::move(entries);
  return snap;
}

}  // namespace

Embedding TextKeyEncoder::embed(const Example& example) const {
  if (!example.is_text()) throw Error(ErrorCode::MixedModes, "text encoder given a feature example");
  return encoder_.encode(apply_template(example.tokens(), template_).tokens);
}

Embedding FeatureKeyEncoder::embed(const Example& example) const {
  if (example.is_text()) throw Error(ErrorCode::MixedModes, "feature encoder given a text example");
  if (example.feature().dim() != dim_) throw Error(ErrorCode::DimensionMismatch, "feature dimension");
  return example.feature();
}

struct KnowledgeStore::State {
  mutable std::shared_mutex publish;  // guards `current`
  std::mutex writer;                  // serializes refresh / mark_stale
  std::shared_ptr<const StoreSnapshot> current;
  std::shared_ptr<const std::vector<Example>> sources;
  IndexConfig index;

  std::shared_ptr<const StoreSnapshot> get() const {
    std::shared_lock lock(publish);
    return current;
  }
  void put(std::shared_ptr<const StoreSnapshot> snap) {
    std::unique_lock lock(publish);
    current = std::move(snap);
  }
};

KnowledgeStore::KnowledgeStore() : state_(std::make_unique<State>()) {}
KnowledgeStore::~KnowledgeStore() = default;
KnowledgeStore::KnowledgeStore(KnowledgeStore&&) noexcept = default;
KnowledgeStore& KnowledgeStore::operator=(KnowledgeStore&&) noexcept = default;

KnowledgeStore KnowledgeStore::build(const std::vector<Example>& corpus, const LabelSpace& ls,
                                     const KeyEncoder& encoder, const IndexConfig& index) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot build a store from an empty corpus");
  std::vector<StoreEntry> entries;
  entries.reserve(corpus.size());
  for (const auto& ex : corpus) {
    if (!ex.label) throw Error(ErrorCode::MissingLabel, "example " + std::to_string(ex.id) + " has no label");
    if (*ex.label >= ls.num_classes()) throw Error(ErrorCode::UnknownLabel, "class id out of range");
    entries.push_back({encoder.embed(ex), static_cast<std::uint32_t>(ls.verbalize_class(*ex.label)), *ex.label,
                       ex.id, false});
  }
  KnowledgeStore store;
  store.state_->index = index;
  store.state_->sources = std::make_shared<const std::vector<Example>>(corpus);
  store.state_->put(make_snapshot(std::move(entries), encoder.dim(), 0, ls.num_classes(), index));
  return store;
}

KnowledgeStore KnowledgeStore::build(const std::vector<Example>& corpus, const LabelSpace& ls,
                                     const ToyEncoder& encoder, const Template& tmpl, const IndexConfig& index) {
  return build(corpus, ls, TextKeyEncoder(encoder, tmpl), index);
}

KnowledgeStore KnowledgeStore::clone() const {
  KnowledgeStore copy;
  copy.state_->index = state_->index;
  copy.state_->sources = state_->sources;
  copy.state_->put(state_->get());
  return copy;
}

std::uint64_t KnowledgeStore::refresh(const KeyEncoder& encoder) {
  std::lock_guard writer(state_->writer);
  const auto old = state_->get();
  if (!old) throw Error(ErrorCode::EmptyCorpus, "refreshing an unbuilt store");
  if (!state_->sources) throw Error(ErrorCode::InvalidArgument, "store has no source examples; attach them first");
  if (encoder.dim() != old->dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "encoder dimension " + std::to_string(encoder.dim()) + " != store " + std::to_string(old->dim));
  }
  const auto& sources = *state_->sources;
  std::unordered_map<ExampleId, const Example*> by_id;
  for (const auto& ex : sources) by_id.emplace(ex.id, &ex);

  std::vector<StoreEntry> entries = old->entries;
  for (auto& e : entries) {
    auto it = by_id.find(e.example);
    if (it == by_id.end()) throw Error(ErrorCode::InvalidArgument, "no source for example " + std::to_string(e.example));
    e.key = encoder.embed(*it->second);
    e.stale = false;
  }
  state_->put(make_snapshot(std::move(entries), old->dim, old->generation + 1, old->num_classes, state_->index));
  return old->generation + 1;
}

std::future<std::uint64_t> KnowledgeStore::refresh_async(std::shared_ptr<const KeyEncoder> encoder) {
  return std::async(std::launch::async, [this, encoder = std::move(encoder)] { return refresh(*encoder); });
}

void KnowledgeStore::mark_stale() {
  std::lock_guard writer(state_->writer);
  const auto old = state_->get();
  if (!old) return;
  auto snap = std::make_shared<StoreSnapshot>(*old);
  for (auto& e : snap->entries) e.stale = true;
  state_->put(std::move(snap));
}

StoreSearch KnowledgeStore::search(std::span<const float> query, std::size_t k, std::optional<ExampleId> exclude,
                                   std::optional<ClassId> only_class) const {
  const auto snap = state_->get();
  if (!snap) throw Error(ErrorCode::EmptyCorpus, "searching an unbuilt store");
  SearchFilter filter;
  if (exclude) {
    auto it = snap->by_example.find(*exclude);
    if (it != snap->by_example.end()) filter.exclude = it->second;
  }
  if (only_class) {
    filter.accept = [&entries = snap->entries, c = *only_class](std::size_t i) { return entries[i].label == c; };
  }
  StoreSearch out;
  out.generation = snap->generation;
  out.snapshot = snap;
  for (const auto& n : snap->index->search(query, k, filter)) {
    const auto& e = snap->entries[n.entry];
    out.hits.push_back({n.entry, e.example, e.label, n.score});
  }
  return out;
}

std::shared_ptr<const StoreSnapshot> KnowledgeStore::snapshot() const { return state_->get(); }

std::size_t KnowledgeStore::size() const {
  auto s = state_->get();
  return s ? s->entries.size() : 0;
}

std::size_t KnowledgeStore::dim() const {
  auto s = state_->get();
  return s ? s->dim : 0;
}

std::uint64_t KnowledgeStore::generation() const {
  auto s = state_->get();
  return s ? s->generation : 0;
}

const IndexConfig& KnowledgeStore::index_config() const { return state_->index; }

bool KnowledgeStore::has_sources() const { return static_cast<bool>(state_->sources); }

void KnowledgeStore::attach_sources(const std::vector<Example>& corpus) {
  std::lock_guard writer(state_->writer);
  state_->sources = std::make_shared<const std::vector<Example>>(corpus);
}

std::vector<char> KnowledgeStore::serialize() const {
  const auto snap = state_->get();
  if (!snap || snap->entries.empty()) throw Error(ErrorCode::EmptyCorpus, "refusing to save an empty store");
  detail::ByteWriter w;
  w.bytes(kStoreMagic);
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(snap->dim));
  w.u64(snap->entries.size());
  w.u64(snap->generation);
  for (const auto& e : snap->entries) {
    w.u64(e.example);
    w.u32(e.label);
    w.u32(e.word);
    for (float v : e.key.values()) w.f32(v);
  }
  const auto& payload = w.buffer();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));
  w.u32(static_cast<std::uint32_t>(crc));
  return w.buffer();
}

void KnowledgeStore::save(const std::string& path) const { detail::write_file(path, serialize()); }

KnowledgeStore KnowledgeStore::load(const std::string& path, const IndexConfig& index) {
  const auto buf = detail::read_file(path);
  detail::ByteReader r(buf, ErrorCode::CorruptStore);
  if (r.bytes(4) != kStoreMagic) throw Error(ErrorCode::CorruptStore, "bad magic");
  if (r.u32() != kStoreVersion) throw Error(ErrorCode::CorruptStore, "unsupported version");
  const std::size_t dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint64_t generation = r.u64();
  if (dim == 0 || count == 0) throw Error(ErrorCode::CorruptStore, "empty header");
  const std::uint64_t entry_bytes = 16 + 4ull * dim;
  if (r.remaining() < 4 || (r.remaining() - 4) / entry_bytes != count || (r.remaining() - 4) % entry_bytes != 0) {
    throw Error(ErrorCode::CorruptStore, "payload size does not match header");
  }
  std::vector<StoreEntry> entries(count);
  ClassId max_class = 0;
  for (auto& e : entries) {
    e.example = r.u64();
    e.label = r.u32();
    e.word = r.u32();
    std::vector<float> key(dim);
    for (float& v : key) v = r.f32();
    try {
      e.key = Embedding(std::move(key));
    } catch (const Error&) {
      throw Error(ErrorCode::CorruptStore, "non-finite key value");
    }
    max_class = std::max(max_class, e.label);
  }
  const std::size_t payload_size = r.position();
  const auto expected = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(payload_size));
  if (r.u32() != static_cast<std::uint32_t>(expected)) throw Error(ErrorCode::CorruptStore, "CRC mismatch");

  KnowledgeStore store;
  store.state_->index = index;
  try {
    store.state_->put(make_snapshot(std::move(entries), dim, generation, max_class + 1, index));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvalidArgument) throw;
    throw Error(ErrorCode::CorruptStore, e.what());
  }
  return store;
}

}  // namespace retro
