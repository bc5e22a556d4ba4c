#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "retro/dataset.hpp"
#include "retro/synth.hpp"

using namespace retro;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

void write(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

struct Sst2 {
  Vocabulary vocab{{"good", "bad", "movie", "It", "was", ".", "great", "terrible"}};
  LabelSpace labels{{"positive", "negative"}, {{vocab.id("great")}, {vocab.id("terrible")}}};
};

}  // namespace

TEST_CASE("text records tokenize and resolve labels") {
  testing::TempDir dir("ds");
  Sst2 t;
  write(dir.file("a.jsonl"),
        "{\"id\": 3, \"text\": \"good movie\", \"label\": \"positive\"}\n"
        "\n"
        "{\"id\": 9, \"text\": \"bad film\"}\n");
  const auto ds = load_jsonl(dir.file("a.jsonl"), &t.vocab, t.labels);
  CHECK(ds.mode == DataMode::Text);
  REQUIRE(ds.examples.size() == 2);
  CHECK(ds.examples[0].id == 3);
  CHECK(ds.examples[0].tokens().size() == 2);
  CHECK(*ds.examples[0].label == 0);
  CHECK_FALSE(ds.examples[1].label);
  CHECK_FALSE(ds.labeled());
  // "film" is missing and reported against line 3.
  REQUIRE(ds.misses.size() == 1);
  CHECK(ds.misses[0].line == 3);
  CHECK(ds.misses[0].word == "film");
  CHECK(ds.examples[1].tokens()[1] == t.vocab.unk());
}

TEST_CASE("feature records keep their dimension") {
  testing::TempDir dir("ds");
  const auto ls = feature_label_space({"a", "b"});
  write(dir.file("f.jsonl"), "{\"id\": 0, \"feature\": [1, 2, 3], \"label\": \"b\"}\n{\"id\": 1, \"feature\": [0, 0.5, 1]}\n");
  const auto ds = load_jsonl(dir.file("f.jsonl"), nullptr, ls);
  CHECK(ds.mode == DataMode::Feature);
  CHECK(ds.dim == 3);
  CHECK(ds.examples[0].feature()[2] == 3.0f);
  CHECK(*ds.examples[0].label == 1);
}

TEST_CASE("malformed datasets are rejected with their codes") {
  testing::TempDir dir("ds");
  Sst2 t;
  const auto ls = feature_label_space({"a", "b"});
  write(dir.file("mixed.jsonl"), "{\"id\": 0, \"feature\": [1]}\n{\"id\": 1, \"text\": \"good\"}\n");
  CHECK(code_of([&] { load_jsonl(dir.file("mixed.jsonl"), &t.vocab, t.labels); }) == ErrorCode::MixedModes);
  write(dir.file("dims.jsonl"), "{\"id\": 0, \"feature\": [1, 2]}\n{\"id\": 1, \"feature\": [1, 2, 3]}\n");
  CHECK(code_of([&] { load_jsonl(dir.file("dims.jsonl"), nullptr, ls); }) == ErrorCode::DimensionMismatch);
  write(dir.file("label.jsonl"), "{\"id\": 0, \"text\": \"good\", \"label\": \"neutral\"}\n");
  CHECK(code_of([&] { load_jsonl(dir.file("label.jsonl"), &t.vocab, t.labels); }) == ErrorCode::UnknownLabel);
  write(dir.file("empty.jsonl"), "");
  CHECK(code_of([&] { load_jsonl(dir.file("empty.jsonl"), &t.vocab, t.labels); }) == ErrorCode::EmptyCorpus);
  write(dir.file("dup.jsonl"), "{\"id\": 0, \"text\": \"good\"}\n{\"id\": 0, \"text\": \"bad\"}\n");
  CHECK(code_of([&] { load_jsonl(dir.file("dup.jsonl"), &t.vocab, t.labels); }) == ErrorCode::InvalidArgument);
  write(dir.file("both.jsonl"), "{\"id\": 0, \"text\": \"good\", \"feature\": [1]}\n");
  CHECK(code_of([&] { load_jsonl(dir.file("both.jsonl"), &t.vocab, t.labels); }) == ErrorCode::InvalidArgument);
  write(dir.file("junk.jsonl"), "{not json\n");
  CHECK(code_of([&] { load_jsonl(dir.file("junk.jsonl"), &t.vocab, t.labels); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { load_jsonl(dir.file("absent.jsonl"), &t.vocab, t.labels); }) == ErrorCode::Io);
}

TEST_CASE("save and load round-trip") {
  testing::TempDir dir("ds");
  TextSynthConfig cfg;
  cfg.test_per_class = 5;
  cfg.seed = 2;
  const auto bench = make_text_benchmark(cfg);
  save_jsonl(dir.file("t.jsonl"), bench.train, &bench.task.vocab, bench.task.labels);
  const auto back = load_jsonl(dir.file("t.jsonl"), &bench.task.vocab, bench.task.labels);
  REQUIRE(back.examples.size() == bench.train.size());
  for (std::size_t i = 0; i < back.examples.size(); ++i) {
    CHECK(back.examples[i].id == bench.train[i].id);
    CHECK(back.examples[i].label == bench.train[i].label);
    CHECK(back.examples[i].tokens() == bench.train[i].tokens());
  }
  CHECK(back.misses.empty());
}

TEST_CASE("synthetic benchmarks write loadable task files") {
  testing::TempDir dir("ds");
  TextSynthConfig cfg;
  cfg.test_per_class = 4;
  write_text_benchmark(make_text_benchmark(cfg), dir.file("text"));
  const auto vocab = Vocabulary::load(dir.file("text/vocab.txt"));
  const auto tmpl = Template::load(dir.file("text/template.txt"), vocab);
  const auto ls = LabelSpace::load(dir.file("text/verbalizer.tsv"), vocab);
  CHECK(ls.num_classes() == 2);
  const auto train = load_jsonl(dir.file("text/train.jsonl"), &vocab, ls);
  CHECK(train.examples.size() == 32);
  CHECK(train.labeled());
  CHECK(apply_template(train.examples[0].tokens(), tmpl).tokens.size() == 16 + tmpl.overhead());

  FeatureSynthConfig fcfg;
  fcfg.test_per_class = 3;
  fcfg.unlabeled_per_class = 2;
  write_feature_benchmark(make_feature_benchmark(fcfg), dir.file("feat"));
  const auto names = load_class_names(dir.file("feat/classes.txt"));
  CHECK(names.size() == 5);
  const auto unl = load_jsonl(dir.file("feat/unlabeled.jsonl"), nullptr, feature_label_space(names));
  CHECK(unl.examples.size() == 10);
  CHECK(unl.dim == 32);
  CHECK_FALSE(unl.labeled());
  CHECK(PrototypeClassifier::load(dir.file("feat/prototypes.json")).num_classes() == 5);
}

TEST_CASE("synthetic generation is seeded") {
  TextSynthConfig cfg;
  cfg.test_per_class = 3;
  cfg.seed = 5;
  const auto a = make_text_benchmark(cfg), b = make_text_benchmark(cfg);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].tokens() == b.train[i].tokens());
  cfg.seed = 6;
  const auto c = make_text_benchmark(cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train[i].tokens() != c.train[i].tokens();
  CHECK(differs);

  TextSynthConfig tiny;
  tiny.pool_size = 4;
  CHECK(code_of([&] { make_text_benchmark(tiny); }) == ErrorCode::InvalidArgument);
}
