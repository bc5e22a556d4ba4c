#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "retro/dataset.hpp"
#include "retro/memorization.hpp"
#include "retro/synth.hpp"
#include "retro/trainer.hpp"

namespace retro::cli {

namespace {

using nlohmann::json;

// ------------------------------------------------------------------ options

struct TaskPaths {
  std::string vocab;
  std::string tmpl;
  std::string verbalizer;
  std::string aggregation = "sum";
  std::string classes;
  std::string prototypes;

  bool feature_mode() const { return !classes.empty(); }
};

void add_task_options(CLI::App* app, TaskPaths& p, bool prototypes) {
  app->add_option("--vocab", p.vocab, "vocabulary file, one token per line (text mode)");
  app->add_option("--template", p.tmpl, "template file 'prefix|infix [MASK]|suffix' (text mode)");
  app->add_option("--verbalizer", p.verbalizer, "TSV: class TAB word[,word...] (text mode)");
  app->add_option("--aggregation", p.aggregation, "label-word aggregation g")
      ->check(CLI::IsMember({"sum", "max"}))
      ->capture_default_str();
  app->add_option("--classes", p.classes, "class names, one per line; selects feature mode");
  if (prototypes) app->add_option("--prototypes", p.prototypes, "prototype classifier JSON (feature mode)");
}

struct IndexOptions {
  std::string kind = "flat";
  std::size_t n_list = 0;
  std::size_t n_probe = 0;
  std::size_t iters = 20;
  std::string metric = "ip";

  IndexConfig config(std::uint64_t seed) const {
    IndexConfig cfg;
    cfg.kind = kind == "ivf" ? IndexConfig::Kind::Ivf : IndexConfig::Kind::Flat;
    cfg.metric = metric == "cosine" ? Metric::Cosine : Metric::InnerProduct;
    cfg.ivf.n_list = n_list;
    cfg.ivf.n_probe = n_probe;
    cfg.ivf.iters = iters;
    cfg.ivf.seed = seed;
    return cfg;
  }
};

void add_index_options(CLI::App* app, IndexOptions& o) {
  app->add_option("--index", o.kind, "search index")->check(CLI::IsMember({"flat", "ivf"}))->capture_default_str();
  app->add_option("--metric", o.metric, "similarity")->check(CLI::IsMember({"ip", "cosine"}))->capture_default_str();
  app->add_option("--n-list", o.n_list, "IVF lists (0: ceil(sqrt(n)))")->capture_default_str();
  app->add_option("--n-probe", o.n_probe, "IVF lists probed (0: max(1, n_list/8))")->capture_default_str();
  app->add_option("--kmeans-iters", o.iters, "Lloyd iterations for the IVF quantizer")->capture_default_str();
}

struct TrainOptions {
  TrainConfig cfg;
  std::string optimizer = "sgd";
  bool no_knn_train = false, no_knn_test = false, no_demo = false, no_refresh = false;

  TrainOptions() { cfg.hyper.k = 0; }

  TrainConfig resolve(const IndexOptions& index, std::uint64_t seed) const {
    TrainConfig out = cfg;
    out.optimizer = optimizer == "adamw" ? Optimizer::AdamW : Optimizer::Sgd;
    out.flags.knn_train = !no_knn_train;
    out.flags.knn_test = !no_knn_test;
    out.flags.demo = !no_demo;
    out.flags.refresh = !no_refresh;
    out.index = index.config(seed);
    return out;
  }
};

void add_flag_options(CLI::App* app, TrainOptions& o) {
  app->add_flag("--no-knn-train", o.no_knn_train, "disable kNN-guided loss weighting");
  app->add_flag("--no-knn-test", o.no_knn_test, "disable interpolation at inference (lambda = 0)");
  app->add_flag("--no-demo", o.no_demo, "disable neural demonstrations");
  app->add_flag("--no-refresh", o.no_refresh, "never refresh store keys during training");
}

void add_train_options(CLI::App* app, TrainOptions& o) {
  auto& c = o.cfg;
  app->add_option("--k", c.hyper.k, "neighbors (0: min(8, |train| - 1))")->capture_default_str();
  app->add_option("--beta", c.hyper.beta, "kNN-guided loss strength")->capture_default_str();
  app->add_option("--lambda", c.hyper.lambda, "interpolation weight")->capture_default_str();
  app->add_option("--m", c.hyper.m, "demonstrations per class")->capture_default_str();
  app->add_option("--lr", c.learning_rate, "learning rate")->capture_default_str();
  app->add_option("--batch-size", c.batch_size, "examples per step")->capture_default_str();
  app->add_option("--max-steps", c.max_steps, "optimizer steps")->capture_default_str();
  app->add_option("--eval-every", c.eval_every, "steps between dev evaluations")->capture_default_str();
  app->add_option("--refresh-period", c.refresh_period, "epochs between store refreshes")->capture_default_str();
  app->add_option("--seeds", c.seeds, "training seeds")->delimiter(',')->capture_default_str();
  app->add_option("--optimizer", o.optimizer, "optimizer")->check(CLI::IsMember({"sgd", "adamw"}))->capture_default_str();
  app->add_option("--weight-decay", c.weight_decay, "weight decay (L2 under sgd, decoupled under adamw)")->capture_default_str();
  app->add_option("--dim", c.dim, "encoder width")->capture_default_str();
  app->add_option("--threads", c.threads, "evaluation threads")->capture_default_str();
  add_flag_options(app, o);
}

// ------------------------------------------------------------------ loading

TextTask load_task(const TaskPaths& p) {
  if (p.vocab.empty() || p.tmpl.empty() || p.verbalizer.empty()) {
    throw Error(ErrorCode::InvalidArgument, "text mode needs --vocab, --template and --verbalizer");
  }
  TextTask task;
  task.vocab = Vocabulary::load(p.vocab);
  task.tmpl = Template::load(p.tmpl, task.vocab);
  task.labels = LabelSpace::load(p.verbalizer, task.vocab, p.aggregation == "max" ? Aggregation::Max : Aggregation::Sum);
  return task;
}

LabelSpace load_feature_labels(const TaskPaths& p) { return feature_label_space(load_class_names(p.classes)); }

PrototypeClassifier load_prototypes(const TaskPaths& p) {
  if (p.prototypes.empty()) throw Error(ErrorCode::InvalidArgument, "feature mode needs --prototypes");
  return PrototypeClassifier::load(p.prototypes);
}

Dataset load_text(const std::string& path, const TextTask& task) {
  if (path.empty()) throw Error(ErrorCode::InvalidArgument, "missing dataset path");
  auto ds = load_jsonl(path, &task.vocab, task.labels);
  if (ds.mode != DataMode::Text) throw Error(ErrorCode::MixedModes, path + " holds feature records; text expected");
  return ds;
}

Dataset load_features(const std::string& path, const LabelSpace& labels) {
  if (path.empty()) throw Error(ErrorCode::InvalidArgument, "missing dataset path");
  auto ds = load_jsonl(path, nullptr, labels);
  if (ds.mode != DataMode::Feature) throw Error(ErrorCode::MixedModes, path + " holds text records; features expected");
  return ds;
}

ToyEncoder encoder_or_init(const std::string& path, const TextTask& task, std::size_t dim, std::uint64_t seed) {
  if (!path.empty()) return ToyEncoder::load(path);
  return ToyEncoder::initialized(task.vocab.size(), task.labels.num_words(), dim, seed);
}

json misses_json(const std::vector<VocabMiss>& misses) {
  json out = json::array();
  for (const auto& m : misses) out.push_back({{"line", m.line}, {"word", m.word}});
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad grid value '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "grid is empty");
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// ------------------------------------------------------------------ commands

struct GenSynthOptions {
  std::string mode = "text";
  std::string out;
  std::optional<std::size_t> classes, shots, dev_per_class, test_per_class, unlabeled_per_class;
};

json cmd_gen_synth(const GenSynthOptions& o, std::uint64_t seed) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out directory is required");
  json report{{"mode", o.mode}, {"dir", o.out}, {"seed", seed}};
  auto set = [](std::size_t& field, const std::optional<std::size_t>& v) {
    if (v) field = *v;
  };
  if (o.mode == "text") {
    TextSynthConfig cfg;
    cfg.seed = seed;
    set(cfg.classes, o.classes);
    set(cfg.shots, o.shots);
    set(cfg.dev_per_class, o.dev_per_class);
    set(cfg.test_per_class, o.test_per_class);
    set(cfg.unlabeled_per_class, o.unlabeled_per_class);
    const auto bench = make_text_benchmark(cfg);
    write_text_benchmark(bench, o.out);
    report["vocab_size"] = bench.task.vocab.size();
    report["classes"] = bench.task.labels.num_classes();
    report["counts"] = {{"train", bench.train.size()},
                        {"dev", bench.dev.size()},
                        {"test", bench.test.size()},
                        {"unlabeled", bench.unlabeled.size()}};
  } else {
    FeatureSynthConfig cfg;
    cfg.seed = seed;
    set(cfg.classes, o.classes);
    set(cfg.shots, o.shots);
    set(cfg.dev_per_class, o.dev_per_class);
    set(cfg.test_per_class, o.test_per_class);
    set(cfg.unlabeled_per_class, o.unlabeled_per_class);
    const auto bench = make_feature_benchmark(cfg);
    write_feature_benchmark(bench, o.out);
    report["dim"] = cfg.dim;
    report["classes"] = bench.labels.num_classes();
    report["counts"] = {{"train", bench.train.size()},
                        {"dev", bench.dev.size()},
                        {"test", bench.test.size()},
                        {"unlabeled", bench.unlabeled.size()}};
  }
  return report;
}

struct IngestOptions {
  TaskPaths task;
  std::string data;
};

json cmd_ingest(const IngestOptions& o) {
  json report{{"data", o.data}};
  Dataset ds;
  std::size_t classes = 0;
  if (o.task.feature_mode()) {
    const auto labels = load_feature_labels(o.task);
    ds = load_features(o.data, labels);
    classes = labels.num_classes();
  } else {
    const auto task = load_task(o.task);
    ds = load_text(o.data, task);
    classes = task.labels.num_classes();
    report["label_words"] = task.labels.num_words();
  }
  report["mode"] = ds.mode == DataMode::Text ? "text" : "feature";
  report["examples"] = ds.examples.size();
  report["classes"] = classes;
  report["labeled"] = ds.labeled();
  report["dim"] = ds.dim;
  report["misses"] = misses_json(ds.misses);
  std::vector<std::size_t> per_class(classes, 0);
  for (const auto& ex : ds.examples) {
    if (ex.label) ++per_class[*ex.label];
  }
  report["per_class"] = per_class;
  return report;
}

struct BuildStoreOptions {
  TaskPaths task;
  IndexOptions index;
  std::string data;
  std::string encoder;
  std::string out;
  std::size_t dim = TrainConfig{}.dim;
};

json cmd_build_store(const BuildStoreOptions& o, std::uint64_t seed) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out path is required");
  KnowledgeStore store;
  json report;
  if (o.task.feature_mode()) {
    const auto labels = load_feature_labels(o.task);
    const auto ds = load_features(o.data, labels);
    store = KnowledgeStore::build(ds.examples, labels, FeatureKeyEncoder(ds.dim), o.index.config(seed));
    report["mode"] = "feature";
  } else {
    const auto task = load_task(o.task);
    const auto ds = load_text(o.data, task);
    const auto enc = encoder_or_init(o.encoder, task, o.dim, seed);
    store = KnowledgeStore::build(ds.examples, task.labels, enc, task.tmpl, o.index.config(seed));
    report["mode"] = "text";
    report["misses"] = misses_json(ds.misses);
  }
  store.save(o.out);
  report["store"] = o.out;
  report["entries"] = store.size();
  report["dim"] = store.dim();
  report["generation"] = store.generation();
  return report;
}

struct TrainCmdOptions {
  TaskPaths task;
  IndexOptions index;
  TrainOptions train;
  std::string data, dev, test;
  std::string save_encoder, save_store;
};

json cmd_train(const TrainCmdOptions& o, std::optional<std::uint64_t> seed) {
  const auto task = load_task(o.task);
  const auto train_ds = load_text(o.data, task);
  std::vector<Example> dev, test;
  if (!o.dev.empty()) dev = load_text(o.dev, task).examples;
  if (!o.test.empty()) test = load_text(o.test, task).examples;
  auto cfg = o.train.resolve(o.index, seed.value_or(0));
  if (seed) cfg.seeds = {*seed};
  cfg.validate();
  const std::size_t k = cfg.hyper.k == 0 ? few_shot_k(train_ds.examples.size()) : cfg.hyper.k;

  EvalReport dev_all, test_all;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const auto s = cfg.seeds[i];
    auto outcome = train(train_ds.examples, dev, task, cfg, s);
    dev_all.per_seed.push_back({s, outcome.dev.accuracy, outcome.dev.macro_f1, outcome.store.generation(),
                                outcome.best_step});
    if (!test.empty()) {
      TextClassifier model(outcome.encoder, task, cfg.flags.demo, cfg.hyper.m);
      const auto r = evaluate(model, outcome.store, test, {cfg.flags.knn_test ? cfg.hyper.lambda : 0.0, k, cfg.threads});
      test_all.per_seed.push_back({s, r.accuracy, r.macro_f1, outcome.store.generation(), outcome.best_step});
      test_all.examples = r.examples;
      test_all.notes = r.notes;
    }
    if (i == 0) {
      if (!o.save_encoder.empty()) outcome.encoder.save(o.save_encoder);
      if (!o.save_store.empty()) outcome.store.save(o.save_store);
    }
  }
  for (auto* r : {&dev_all, &test_all}) {
    r->summarize();
    r->lambda = cfg.flags.knn_test ? cfg.hyper.lambda : 0.0;
    r->k = k;
    r->beta = cfg.flags.knn_train ? cfg.hyper.beta : 0.0;
    r->flags = cfg.flags;
    r->accuracy = r->mean_accuracy;
    r->macro_f1 = r->mean_macro_f1;
  }
  dev_all.examples = dev.size();
  json report{{"config", cfg.to_json()}, {"resolved_k", k}, {"train_examples", train_ds.examples.size()},
              {"misses", misses_json(train_ds.misses)}, {"dev", dev_all.to_json()}};
  if (!test.empty()) report["test"] = test_all.to_json();
  return report;
}

struct EvalCmdOptions {
  TaskPaths task;
  IndexOptions index;
  std::string store, encoder, data;
  double lambda = RetroHyper::kFewShotLambda;
  std::size_t k = 0;
  std::size_t m = RetroHyper{}.m;
  bool no_demo = false, no_knn_test = false;
  std::size_t threads = 1;
};

json cmd_eval(const EvalCmdOptions& o, std::uint64_t seed) {
  if (o.store.empty()) throw Error(ErrorCode::InvalidArgument, "--store is required");
  const auto store = KnowledgeStore::load(o.store, o.index.config(seed));
  const std::size_t k = o.k == 0 ? few_shot_k(store.size()) : o.k;
  const EvalOptions opts{o.no_knn_test ? 0.0 : o.lambda, k, o.threads};
  EvalReport r;
  if (o.task.feature_mode()) {
    const auto labels = load_feature_labels(o.task);
    const auto base = load_prototypes(o.task);
    const auto ds = load_features(o.data, labels);
    r = evaluate(FeatureClassifier(base), store, ds.examples, opts);
  } else {
    if (o.encoder.empty()) throw Error(ErrorCode::InvalidArgument, "--encoder is required in text mode");
    const auto task = load_task(o.task);
    const auto enc = ToyEncoder::load(o.encoder);
    const auto ds = load_text(o.data, task);
    r = evaluate(TextClassifier(enc, task, !o.no_demo, o.m), store, ds.examples, opts);
  }
  json report = r.to_json();
  report["predictions"] = r.predictions;
  return report;
}

struct ZeroShotOptions {
  TaskPaths task;
  IndexOptions index;
  std::string unlabeled, test, encoder;
  double lambda = RetroHyper::kZeroShotLambda;
  std::size_t k = RetroHyper::kZeroShotK;
  std::size_t dim = TrainConfig{}.dim;
  std::size_t threads = 1;
};

EvalReport run_zero_shot(const ZeroShotOptions& o, std::uint64_t seed, double lambda, std::size_t k) {
  const EvalOptions opts{lambda, k, o.threads};
  if (o.task.feature_mode()) {
    const auto labels = load_feature_labels(o.task);
    const auto base = load_prototypes(o.task);
    return zero_shot(FeatureClassifier(base), load_features(o.unlabeled, labels).examples,
                     load_features(o.test, labels).examples, labels, opts, o.index.config(seed));
  }
  const auto task = load_task(o.task);
  const auto enc = encoder_or_init(o.encoder, task, o.dim, seed);
  return zero_shot(TextClassifier(enc, task, false, 0), load_text(o.unlabeled, task).examples,
                   load_text(o.test, task).examples, task.labels, opts, o.index.config(seed));
}

json cmd_zero_shot(const ZeroShotOptions& o, std::uint64_t seed) {
  const auto with = run_zero_shot(o, seed, o.lambda, o.k);
  const auto base = run_zero_shot(o, seed, 0.0, o.k);
  json report = with.to_json();
  report["baseline_accuracy"] = base.accuracy;
  report["gain"] = with.accuracy - base.accuracy;
  return report;
}

struct SweepOptions {
  TaskPaths task;
  IndexOptions index;
  TrainOptions train;
  std::string param = "lambda";
  std::string grid;
  std::string csv;
  std::string data, dev, test, unlabeled, encoder;
  std::size_t threads = 1;
};

std::vector<double> default_grid(const std::string& param) {
  if (param == "beta") return {0.0, 0.1, 1.0, 10.0};
  if (param == "k") return {1, 2, 4, 8, 16, 32, 64, 128, 256};
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

json cmd_sweep(const SweepOptions& o, std::optional<std::uint64_t> seed) {
  const auto grid = o.grid.empty() ? default_grid(o.param) : parse_grid(o.grid);
  for (double v : grid) {
    if (o.param == "k" && (v < 1.0 || v != std::floor(v))) throw Error(ErrorCode::InvalidArgument, "k grid needs positive integers");
  }
  std::vector<EvalReport> rows(grid.size());
  json report{{"param", o.param}, {"grid", grid}};

  if (o.task.feature_mode()) {
    if (o.param == "beta") throw Error(ErrorCode::InvalidArgument, "beta sweeps need text training data");
    ZeroShotOptions z;
    z.task = o.task;
    z.index = o.index;
    z.unlabeled = o.unlabeled;
    z.test = o.test;
    z.threads = o.threads;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double lambda = o.param == "lambda" ? grid[i] : RetroHyper::kZeroShotLambda;
      const auto k = o.param == "k" ? static_cast<std::size_t>(grid[i]) : RetroHyper::kZeroShotK;
      auto r = run_zero_shot(z, seed.value_or(0), lambda, k);
      r.per_seed.push_back({seed.value_or(0), r.accuracy, r.macro_f1, 0, 0});
      r.summarize();
      rows[i] = std::move(r);
    }
    report["setting"] = "pseudo-zero-shot";
  } else {
    const auto task = load_task(o.task);
    const auto train_ds = load_text(o.data, task);
    std::vector<Example> dev;
    if (!o.dev.empty()) dev = load_text(o.dev, task).examples;
    const auto test = load_text(o.test, task).examples;
    auto cfg = o.train.resolve(o.index, seed.value_or(0));
    if (seed) cfg.seeds = {*seed};
    cfg.validate();
    const std::size_t k0 = cfg.hyper.k == 0 ? few_shot_k(train_ds.examples.size()) : cfg.hyper.k;
    auto record = [&](std::size_t i, std::uint64_t s, const EvalReport& r) {
      rows[i].per_seed.push_back({s, r.accuracy, r.macro_f1, 0, 0});
    };
    for (auto s : cfg.seeds) {
      if (o.param == "beta") {
        for (std::size_t i = 0; i < grid.size(); ++i) {
          auto c = cfg;
          c.hyper.beta = grid[i];
          const auto out = train(train_ds.examples, dev, task, c, s);
          TextClassifier model(out.encoder, task, c.flags.demo, c.hyper.m);
          record(i, s, evaluate(model, out.store, test, {c.flags.knn_test ? c.hyper.lambda : 0.0, k0, o.threads}));
        }
      } else {
        // lambda and k are inference-time knobs: one trained model per seed
        const auto out = train(train_ds.examples, dev, task, cfg, s);
        TextClassifier model(out.encoder, task, cfg.flags.demo, cfg.hyper.m);
        for (std::size_t i = 0; i < grid.size(); ++i) {
          const double lambda = o.param == "lambda" ? grid[i] : cfg.hyper.lambda;
          const auto k = o.param == "k" ? static_cast<std::size_t>(grid[i]) : k0;
          record(i, s, evaluate(model, out.store, test, {lambda, k, o.threads}));
        }
      }
    }
    for (auto& r : rows) r.summarize();
    report["setting"] = "few-shot";
    report["config"] = cfg.to_json();
  }

  json table = json::array();
  std::ostringstream csv;
  csv << "value,mean_accuracy,std_accuracy\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    table.push_back({{"value", grid[i]}, {"mean_accuracy", rows[i].mean_accuracy}, {"std_accuracy", rows[i].std_accuracy}});
    csv << format_number(grid[i]) << ',' << format_number(rows[i].mean_accuracy) << ','
        << format_number(rows[i].std_accuracy) << '\n';
  }
  report["rows"] = table;
  if (o.param == "k") {
    // Flags drops of more than one accuracy point between consecutive k.
    json drops = json::array();
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (rows[i].mean_accuracy < rows[i - 1].mean_accuracy - 0.01) {
        drops.push_back({{"from", grid[i - 1]}, {"to", grid[i]}, {"drop", rows[i - 1].mean_accuracy - rows[i].mean_accuracy}});
      }
    }
    report["trend_violations"] = drops;
  }
  if (!o.csv.empty()) {
    std::ofstream f(o.csv);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + o.csv);
    f << csv.str();
    report["csv"] = o.csv;
  } else {
    report["csv_text"] = csv.str();
  }
  return report;
}

struct BenchIndexOptions {
  std::string store;
  std::string queries;
  std::size_t num_queries = 1000;
  double noise = 0.05;
  std::size_t k = 10;
  std::size_t n_list = 0;
  std::size_t iters = 20;
  std::vector<std::size_t> probes;
};

json cmd_bench_index(const BenchIndexOptions& o, std::uint64_t seed) {
  if (o.store.empty()) throw Error(ErrorCode::InvalidArgument, "--store is required");
  const auto store = KnowledgeStore::load(o.store);
  const auto snap = store.snapshot();
  const std::size_t dim = snap->dim;

  std::vector<std::vector<float>> queries;
  if (!o.queries.empty()) {
    std::ifstream in(o.queries);
    if (!in) throw Error(ErrorCode::Io, "cannot open queries " + o.queries);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto v = json::parse(line).at("feature").get<std::vector<float>>();
      if (v.size() != dim) throw Error(ErrorCode::DimensionMismatch, "query dimension differs from the store");
      queries.push_back(std::move(v));
    }
  } else {
    // Perturbed copies of stored keys.
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, snap->entries.size() - 1);
    std::normal_distribution<float> noise(0.0f, static_cast<float>(o.noise));
    for (std::size_t q = 0; q < o.num_queries; ++q) {
      auto v = snap->keys->row(pick(rng));
      std::vector<float> out(v.begin(), v.end());
      for (float& x : out) x += noise(rng);
      queries.push_back(std::move(out));
    }
  }
  if (queries.empty()) throw Error(ErrorCode::EmptyCorpus, "no queries");

  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  const FlatIndex flat(snap->keys);
  std::vector<std::vector<Neighbor>> truth;
  const auto t0 = clock::now();
  for (const auto& q : queries) truth.push_back(flat.search(q, o.k));
  const double flat_s = seconds(t0, clock::now());

  IvfParams params;
  params.n_list = o.n_list;
  params.iters = o.iters;
  params.seed = seed;
  const auto ivf = train_ivf(snap->keys, params);
  std::vector<std::size_t> grid = o.probes;
  if (grid.empty()) {
    for (std::size_t p = 1; p < ivf.n_list(); p *= 2) grid.push_back(p);
    grid.push_back(ivf.n_list());
  }

  json rows = json::array();
  for (std::size_t probe : grid) {
    if (probe == 0 || probe > ivf.n_list()) throw Error(ErrorCode::InvalidArgument, "n_probe outside [1, n_list]");
    std::size_t found = 0, wanted = 0;
    bool identical = true;
    const auto t1 = clock::now();
    std::vector<std::vector<Neighbor>> got;
    got.reserve(queries.size());
    for (const auto& q : queries) got.push_back(ivf.search(q, o.k, probe));
    const double s = seconds(t1, clock::now());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      wanted += truth[i].size();
      for (const auto& n : truth[i]) {
        found += std::any_of(got[i].begin(), got[i].end(), [&](const Neighbor& g) { return g.entry == n.entry; });
      }
      identical &= got[i].size() == truth[i].size() &&
                   std::equal(got[i].begin(), got[i].end(), truth[i].begin(),
                              [](const Neighbor& a, const Neighbor& b) { return a.entry == b.entry; });
    }
    rows.push_back({{"n_probe", probe},
                    {"recall", wanted ? static_cast<double>(found) / static_cast<double>(wanted) : 1.0},
                    {"identical_to_flat", identical},
                    {"queries_per_second", s > 0 ? static_cast<double>(queries.size()) / s : 0.0}});
  }
  return {{"store", o.store},
          {"entries", snap->entries.size()},
          {"dim", dim},
          {"queries", queries.size()},
          {"k", o.k},
          {"n_list", ivf.n_list()},
          {"flat_queries_per_second", flat_s > 0 ? static_cast<double>(queries.size()) / flat_s : 0.0},
          {"rows", rows}};
}

struct MemorizeOptions {
  TaskPaths task;
  TrainOptions train;
  std::string data;
  std::string variants = "finetune,prompt,retro";
  std::string target = "self";
  std::string probe;
  std::size_t probe_index = 0;
  std::string damping = "0,1e-4,1e-3,1e-2";
  std::size_t max_params = 2000;

  MemorizeOptions() {
    train.cfg.dim = 8;
    train.cfg.max_steps = 4000;
    train.cfg.eval_every = 4000;
    train.cfg.weight_decay = 1e-2;
    train.cfg.seeds = {13};
  }
};

// Items frozen at the trained parameters: templated tokens, the
// demonstrations and loss weight the training step would use.
std::vector<EncoderInfluenceModel::Item> influence_items(const std::vector<Example>& examples, const TextTask& task,
                                                         const TrainOutcome& out, const TrainConfig& cfg,
                                                         std::size_t k, bool leave_one_out) {
  std::vector<EncoderInfluenceModel::Item> items;
  for (const auto& ex : examples) {
    EncoderInfluenceModel::Item item;
    item.templated = apply_template(ex.tokens(), task.tmpl).tokens;
    item.label = ex.label.value_or(0);
    const auto q = out.encoder.encode(item.templated);
    const std::optional<ExampleId> exclude = leave_one_out ? std::optional<ExampleId>(ex.id) : std::nullopt;
    if (cfg.flags.knn_train && leave_one_out) {
      const auto found = out.store.search(q.values(), k, exclude);
      double p_ref = 0.0;
      if (!found.hits.empty()) {
        std::vector<ClassScore> votes;
        for (const auto& h : found.hits) votes.push_back({h.label, h.score});
        p_ref = knn_distribution(votes, task.labels.num_classes())[item.label];
      }
      item.weight = loss_weight(guidance_factor(p_ref), cfg.hyper.beta);
    }
    if (cfg.flags.demo) item.fused = build_demonstrations(out.store, q.values(), task.labels, cfg.hyper.m, exclude);
    items.push_back(std::move(item));
  }
  return items;
}

json cmd_memorize(const MemorizeOptions& o, std::optional<std::uint64_t> seed) {
  const auto task = load_task(o.task);
  const auto ds = load_text(o.data, task);
  std::vector<Example> probes;
  if (o.target == "probe") {
    if (o.probe.empty()) throw Error(ErrorCode::InvalidArgument, "--target probe needs --probe");
    probes = load_text(o.probe, task).examples;
    if (o.probe_index >= probes.size()) throw Error(ErrorCode::InvalidArgument, "--probe-index out of range");
    if (!probes[o.probe_index].label) throw Error(ErrorCode::MissingLabel, "probe example has no label");
  }
  InfluenceOptions iopt;
  iopt.damping_sweep = parse_grid(o.damping);
  if (o.target == "probe") iopt.target = {InfluenceTarget::Kind::Probe, o.probe_index};

  std::vector<std::string> variants;
  {
    std::stringstream ss(o.variants);
    std::string v;
    while (std::getline(ss, v, ',')) {
      if (v.empty()) continue;
      if (v != "finetune" && v != "prompt" && v != "retro") throw Error(ErrorCode::InvalidArgument, "unknown variant " + v);
      variants.push_back(v);
    }
  }
  if (variants.empty()) throw Error(ErrorCode::InvalidArgument, "no variants selected");

  auto base_cfg = o.train.resolve(IndexOptions{}, seed.value_or(0));
  if (seed) base_cfg.seeds = {*seed};
  base_cfg.validate();
  const std::uint64_t s = base_cfg.seeds.front();
  const std::size_t k = base_cfg.hyper.k == 0 ? few_shot_k(ds.examples.size()) : base_cfg.hyper.k;
  std::vector<ExampleId> ids;
  for (const auto& ex : ds.examples) ids.push_back(ex.id);

  json out{{"target", o.target}, {"seed", s}, {"config", base_cfg.to_json()}};
  json means = json::object();
  for (const auto& name : variants) {
    // finetune: bare input and mask, no retrieval. prompt: the task template,
    // no retrieval. retro: the task template with the selected mode flags.
    TextTask vt = task;
    auto cfg = base_cfg;
    if (name != "retro") cfg.flags = ModeFlags::none();
    if (name == "finetune") vt.tmpl = Template({}, {}, {task.vocab.mask()}, task.vocab.mask());
    const auto trained = train(ds.examples, {}, vt, cfg, s);
    if (trained.encoder.num_params() > o.max_params) {
      throw Error(ErrorCode::InvalidArgument, "encoder has " + std::to_string(trained.encoder.num_params()) +
                                                  " parameters; the explicit Hessian budget is " +
                                                  std::to_string(o.max_params));
    }
    const EncoderInfluenceModel model(trained.encoder, vt.labels, influence_items(ds.examples, vt, trained, cfg, k, true),
                                      influence_items(probes, vt, trained, cfg, k, false), cfg.weight_decay);
    const auto report = decile_report(memorization_scores(model, iopt), ids);
    out["variants"][name] = report.to_json();
    means[name] = report.mean_score;
  }
  out["mean_scores"] = means;
  return out;
}

std::string error_name(ErrorCode c) { return std::string(to_string(c)); }

bool given(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
}

// Splices the key=value lines of a --config file in as flags, skipping keys
// that also appear on the command line so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty() || args.empty()) return args;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path);
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  std::vector<std::string> extra;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto flag = "--" + key;
    if (given(args, flag)) continue;
    if (value == "true") {
      extra.push_back(flag);
    } else if (value != "false") {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  std::vector<std::string> out{args.front()};
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented prompt classification toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::string report_path, config_path;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file of long option names; command-line flags override it");
    sub->add_option("--seed", seed, "seed (falls back to RETRO_SEED)")->envname("RETRO_SEED");
    sub->add_option("--report", report_path, "write the JSON report here instead of stdout");
  };

  GenSynthOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "write a seeded synthetic benchmark");
  common(gen_cmd);
  gen_cmd->add_option("--mode", gen.mode, "task family")->check(CLI::IsMember({"text", "feature"}))->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "classes (text default 2, feature default 5)");
  gen_cmd->add_option("--shots", gen.shots, "training examples per class (default 16)");
  gen_cmd->add_option("--dev-per-class", gen.dev_per_class, "dev examples per class (default 16)");
  gen_cmd->add_option("--test-per-class", gen.test_per_class, "test examples per class (text 500, feature 200)");
  gen_cmd->add_option("--unlabeled-per-class", gen.unlabeled_per_class, "unlabeled examples per class (text 0, feature 400)");

  IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "validate a dataset against its task files");
  common(ingest_cmd);
  add_task_options(ingest_cmd, ingest.task, false);
  ingest_cmd->add_option("--data", ingest.data, "JSON-lines dataset")->required();

  BuildStoreOptions build;
  auto* build_cmd = app.add_subcommand("build-store", "encode a labeled corpus into a knowledge store");
  common(build_cmd);
  add_task_options(build_cmd, build.task, false);
  add_index_options(build_cmd, build.index);
  build_cmd->add_option("--data", build.data, "labeled JSON-lines corpus")->required();
  build_cmd->add_option("--encoder", build.encoder, "encoder checkpoint (text mode; default: seeded init)");
  build_cmd->add_option("--dim", build.dim, "width of a freshly initialized encoder")->capture_default_str();
  build_cmd->add_option("--out", build.out, "store file")->required();

  TrainCmdOptions trainer;
  auto* train_cmd = app.add_subcommand("train", "kNN-guided few-shot training (text mode)");
  common(train_cmd);
  add_task_options(train_cmd, trainer.task, false);
  add_index_options(train_cmd, trainer.index);
  add_train_options(train_cmd, trainer.train);
  train_cmd->add_option("--data", trainer.data, "labeled training corpus")->required();
  train_cmd->add_option("--dev", trainer.dev, "dev set for checkpoint selection");
  train_cmd->add_option("--test", trainer.test, "test set");
  train_cmd->add_option("--save-encoder", trainer.save_encoder, "write the first seed's encoder here");
  train_cmd->add_option("--save-store", trainer.save_store, "write the first seed's store here");

  EvalCmdOptions evalo;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate with kNN interpolation");
  common(eval_cmd);
  add_task_options(eval_cmd, evalo.task, true);
  add_index_options(eval_cmd, evalo.index);
  eval_cmd->add_option("--store", evalo.store, "store file")->required();
  eval_cmd->add_option("--encoder", evalo.encoder, "encoder checkpoint (text mode)");
  eval_cmd->add_option("--data", evalo.data, "evaluation set")->required();
  eval_cmd->add_option("--lambda", evalo.lambda, "interpolation weight")->capture_default_str();
  eval_cmd->add_option("--k", evalo.k, "neighbors (0: min(8, |store| - 1))")->capture_default_str();
  eval_cmd->add_option("--m", evalo.m, "demonstrations per class")->capture_default_str();
  eval_cmd->add_flag("--no-demo", evalo.no_demo, "disable neural demonstrations");
  eval_cmd->add_flag("--no-knn-test", evalo.no_knn_test, "model-only predictions (lambda = 0)");
  eval_cmd->add_option("--threads", evalo.threads, "evaluation threads")->capture_default_str();

  ZeroShotOptions zs;
  auto* zs_cmd = app.add_subcommand("pseudo-zero-shot", "pseudo-label unlabeled data and predict without updates");
  common(zs_cmd);
  add_task_options(zs_cmd, zs.task, true);
  add_index_options(zs_cmd, zs.index);
  zs_cmd->add_option("--unlabeled", zs.unlabeled, "unlabeled corpus")->required();
  zs_cmd->add_option("--test", zs.test, "labeled test set")->required();
  zs_cmd->add_option("--encoder", zs.encoder, "encoder checkpoint (text mode; default: seeded init)");
  zs_cmd->add_option("--dim", zs.dim, "width of a freshly initialized encoder")->capture_default_str();
  zs_cmd->add_option("--lambda", zs.lambda, "interpolation weight")->capture_default_str();
  zs_cmd->add_option("--k", zs.k, "neighbors")->capture_default_str();
  zs_cmd->add_option("--threads", zs.threads, "evaluation threads")->capture_default_str();

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sweep over beta, lambda or k");
  common(sweep_cmd);
  add_task_options(sweep_cmd, sweep.task, true);
  add_index_options(sweep_cmd, sweep.index);
  add_train_options(sweep_cmd, sweep.train);
  sweep_cmd->add_option("--param", sweep.param, "swept parameter")
      ->check(CLI::IsMember({"beta", "lambda", "k"}))
      ->capture_default_str();
  sweep_cmd->add_option("--grid", sweep.grid,
                        "comma-separated values (default beta 0,0.1,1,10; lambda 0..1 by 0.1; k 1..256 by powers of 2)");
  sweep_cmd->add_option("--csv", sweep.csv, "CSV output path (value,mean_accuracy,std_accuracy)");
  sweep_cmd->add_option("--data", sweep.data, "training corpus (text mode)");
  sweep_cmd->add_option("--dev", sweep.dev, "dev set (text mode)");
  sweep_cmd->add_option("--test", sweep.test, "test set")->required();
  sweep_cmd->add_option("--unlabeled", sweep.unlabeled, "unlabeled corpus (feature mode)");

  BenchIndexOptions bench;
  auto* bench_cmd = app.add_subcommand("bench-index", "IVF recall and throughput against flat search");
  common(bench_cmd);
  bench_cmd->add_option("--store", bench.store, "store file")->required();
  bench_cmd->add_option("--queries", bench.queries, "JSON-lines feature queries (default: perturbed keys)");
  bench_cmd->add_option("--num-queries", bench.num_queries, "sampled queries when --queries is absent")
      ->capture_default_str();
  bench_cmd->add_option("--noise", bench.noise, "std of the perturbation of sampled queries")->capture_default_str();
  bench_cmd->add_option("--k", bench.k, "neighbors")->capture_default_str();
  bench_cmd->add_option("--n-list", bench.n_list, "IVF lists (0: ceil(sqrt(n)))")->capture_default_str();
  bench_cmd->add_option("--kmeans-iters", bench.iters, "Lloyd iterations")->capture_default_str();
  bench_cmd->add_option("--n-probe", bench.probes, "n_probe grid (default powers of 2 up to n_list)")->delimiter(',');

  MemorizeOptions mem;
  auto* mem_cmd = app.add_subcommand("memorize", "influence-function memorization scores");
  common(mem_cmd);
  add_task_options(mem_cmd, mem.task, false);
  add_train_options(mem_cmd, mem.train);
  mem_cmd->add_option("--data", mem.data, "labeled training corpus")->required();
  mem_cmd->add_option("--variants", mem.variants, "trained variants reported side by side")->capture_default_str();
  mem_cmd->add_option("--target", mem.target, "prediction whose change is scored")
      ->check(CLI::IsMember({"self", "probe"}))
      ->capture_default_str();
  mem_cmd->add_option("--probe", mem.probe, "probe examples for --target probe");
  mem_cmd->add_option("--probe-index", mem.probe_index, "which probe to score")->capture_default_str();
  mem_cmd->add_option("--damping", mem.damping, "damping sweep; the smallest value with condition < 1e8 is used")
      ->capture_default_str();
  mem_cmd->add_option("--max-params", mem.max_params, "explicit-Hessian parameter budget")->capture_default_str();

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const Error& e) {
    json report{{"command", args.empty() ? "" : args.front()},
                {"error", {{"code", error_name(e.code())}, {"message", e.what()}}}};
    out << report.dump(2) << '\n';
    err << e.what() << '\n';
    return 1;
  }
  std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  json report;
  std::string command;
  for (auto* sub : app.get_subcommands()) command = sub->get_name();
  report["command"] = command;
  try {
    json body;
    const auto s = seed.value_or(13);
    // Multi-seed commands: an explicit --seed wins, then --seeds, then RETRO_SEED.
    const auto single = given(expanded, "--seed") || !given(expanded, "--seeds") ? seed : std::nullopt;
    if (gen_cmd->parsed()) body = cmd_gen_synth(gen, s);
    else if (ingest_cmd->parsed()) body = cmd_ingest(ingest);
    else if (build_cmd->parsed()) body = cmd_build_store(build, s);
    else if (train_cmd->parsed()) body = cmd_train(trainer, single);
    else if (eval_cmd->parsed()) body = cmd_eval(evalo, s);
    else if (zs_cmd->parsed()) body = cmd_zero_shot(zs, s);
    else if (sweep_cmd->parsed()) body = cmd_sweep(sweep, single);
    else if (bench_cmd->parsed()) body = cmd_bench_index(bench, s);
    else if (mem_cmd->parsed()) body = cmd_memorize(mem, single);
    report["result"] = std::move(body);
  } catch (const Error& e) {
    report["error"] = {{"code", error_name(e.code())}, {"message", e.what()}};
  } catch (const json::exception& e) {
    report["error"] = {{"code", error_name(ErrorCode::InvalidArgument)}, {"message", e.what()}};
  } catch (const std::exception& e) {
    report["error"] = {{"code", error_name(ErrorCode::Io)}, {"message", e.what()}};
  }

  const auto text = report.dump(2) + "\n";
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) {
      err << "cannot write report " << report_path << '\n';
      return 1;
    }
    f << text;
  } else {
    out << text;
  }
  if (report.contains("error")) {
    err << report["error"]["message"].get<std::string>() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace retro::cli
