#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "helpers.hpp"

using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;

  json report() const { return json::parse(out); }
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = retro::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> task_args(const retro::testing::TempDir& dir) {
  return {"--vocab", dir.file("t/vocab.txt"), "--template", dir.file("t/template.txt"), "--verbalizer",
          dir.file("t/verbalizer.tsv")};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("cli text workflow") {
  retro::testing::TempDir dir("cli");
  auto gen = run({"gen-synth", "--out", dir.file("t"), "--seed", "4", "--test-per-class", "20"});
  REQUIRE(gen.code == 0);
  CHECK(gen.report().at("result").at("counts").at("train") == 32);

  const auto task = task_args(dir);
  auto ingest = run(std::vector<std::string>{"ingest"} + task + std::vector<std::string>{"--data", dir.file("t/train.jsonl")});
  REQUIRE(ingest.code == 0);
  const auto ing = ingest.report().at("result");
  CHECK(ing.at("classes") == 2);
  CHECK(ing.at("mode") == "text");
  CHECK(ing.at("misses").empty());

  const std::vector<std::string> train_args{"--data", dir.file("t/train.jsonl"), "--dev", dir.file("t/dev.jsonl"),
                                            "--test", dir.file("t/test.jsonl"), "--max-steps", "40",
                                            "--eval-every", "20", "--seeds", "3,4"};
  auto a = run(std::vector<std::string>{"train"} + task + train_args +
               std::vector<std::string>{"--report", dir.file("a.json"), "--save-encoder", dir.file("enc.bin"),
                                        "--save-store", dir.file("store.bin")});
  auto b = run(std::vector<std::string>{"train"} + task + train_args + std::vector<std::string>{"--report", dir.file("b.json")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir.file("a.json")) == slurp(dir.file("b.json")));
  const auto rep = json::parse(slurp(dir.file("a.json"))).at("result");
  CHECK(rep.at("test").at("per_seed").size() == 2);
  CHECK(rep.at("config").at("max_steps") == 40);

  auto ev = run(std::vector<std::string>{"eval"} + task +
                std::vector<std::string>{"--encoder", dir.file("enc.bin"), "--store", dir.file("store.bin"), "--data",
                                         dir.file("t/test.jsonl")});
  REQUIRE(ev.code == 0);
  CHECK(ev.report().at("result").at("examples") == 40);
  CHECK(ev.report().at("result").at("predictions").size() == 40);

  auto flagged = run(std::vector<std::string>{"train"} + task + train_args +
                     std::vector<std::string>{"--no-knn-train", "--no-knn-test", "--no-demo", "--no-refresh"});
  REQUIRE(flagged.code == 0);
  const auto flags = flagged.report().at("result").at("config").at("flags");
  CHECK(flags.at("knn_train") == false);
  CHECK(flags.at("refresh") == false);

  auto mem = run(std::vector<std::string>{"memorize"} + task +
                 std::vector<std::string>{"--data", dir.file("t/train.jsonl")});
  REQUIRE(mem.code == 0);
  const auto mr = mem.report().at("result");
  CHECK(mr.at("mean_scores").size() == 3);
  CHECK(mr.at("variants").at("retro").at("top_decile").size() == 3);
}

TEST_CASE("cli config file, overrides and seed fallback") {
  retro::testing::TempDir dir("cli");
  REQUIRE(run({"gen-synth", "--out", dir.file("t"), "--test-per-class", "5"}).code == 0);
  {
    std::ofstream cfg(dir.file("c.ini"));
    cfg << "# comment\nvocab=" << dir.file("t/vocab.txt") << "\ntemplate=" << dir.file("t/template.txt")
        << "\nverbalizer=" << dir.file("t/verbalizer.tsv") << "\ndata=" << dir.file("t/train.jsonl")
        << "\nbeta = 0.5\nmax-steps=8\neval-every=8\nno-demo=true\nno-refresh=false\n";
  }
  auto r = run({"train", "--config", dir.file("c.ini"), "--beta", "0.25", "--seed", "11"});
  REQUIRE(r.code == 0);
  const auto cfg = r.report().at("result").at("config");
  CHECK(cfg.at("beta") == 0.25);
  CHECK(cfg.at("max_steps") == 8);
  CHECK(cfg.at("flags").at("demo") == false);
  CHECK(cfg.at("flags").at("refresh") == true);
  CHECK(cfg.at("seeds") == json::array({11}));

  ::setenv("RETRO_SEED", "17", 1);
  auto env = run({"train", "--config", dir.file("c.ini")});
  auto listed = run({"train", "--config", dir.file("c.ini"), "--seeds", "1,2"});
  ::unsetenv("RETRO_SEED");
  REQUIRE(env.code == 0);
  CHECK(env.report().at("result").at("config").at("seeds") == json::array({17}));
  CHECK(listed.report().at("result").at("config").at("seeds") == json::array({1, 2}));

  auto missing = run({"train", "--config", dir.file("nope.ini")});
  CHECK(missing.code == 1);
  CHECK(missing.report().at("error").at("code") == "Io");
}

TEST_CASE("cli feature workflow, sweep and index benchmark") {
  retro::testing::TempDir dir("cli");
  REQUIRE(run({"gen-synth", "--mode", "feature", "--out", dir.file("f"), "--test-per-class", "20",
               "--unlabeled-per-class", "40"})
              .code == 0);
  const std::vector<std::string> feat{"--classes", dir.file("f/classes.txt"), "--prototypes", dir.file("f/prototypes.json")};
  auto zs = run(std::vector<std::string>{"pseudo-zero-shot"} + feat +
                std::vector<std::string>{"--unlabeled", dir.file("f/unlabeled.jsonl"), "--test", dir.file("f/test.jsonl"),
                                         "--k", "16"});
  REQUIRE(zs.code == 0);
  const auto z = zs.report().at("result");
  CHECK(z.at("lambda") == 0.7);
  CHECK(z.contains("baseline_accuracy"));

  auto sw = run(std::vector<std::string>{"sweep"} + feat +
                std::vector<std::string>{"--param", "k", "--grid", "1,4,16", "--unlabeled", dir.file("f/unlabeled.jsonl"),
                                         "--test", dir.file("f/test.jsonl"), "--csv", dir.file("k.csv")});
  REQUIRE(sw.code == 0);
  CHECK(sw.report().at("result").at("rows").size() == 3);
  CHECK(sw.report().at("result").contains("trend_violations"));
  const auto csv = slurp(dir.file("k.csv"));
  CHECK(csv.starts_with("value,mean_accuracy,std_accuracy\n1,"));

  auto beta = run(std::vector<std::string>{"sweep"} + feat +
                  std::vector<std::string>{"--param", "beta", "--unlabeled", dir.file("f/unlabeled.jsonl"), "--test",
                                           dir.file("f/test.jsonl")});
  CHECK(beta.code == 1);
  CHECK(beta.report().at("error").at("code") == "InvalidArgument");

  auto store = run({"build-store", "--classes", dir.file("f/classes.txt"), "--data", dir.file("f/test.jsonl"), "--out",
                    dir.file("s.bin")});
  REQUIRE(store.code == 0);
  CHECK(store.report().at("result").at("entries") == 100);
  auto bench = run({"bench-index", "--store", dir.file("s.bin"), "--num-queries", "50", "--n-list", "4"});
  REQUIRE(bench.code == 0);
  const auto rows = bench.report().at("result").at("rows");
  REQUIRE(rows.size() == 3);  // 1, 2, 4
  CHECK(rows.back().at("recall") == 1.0);
  CHECK(rows.back().at("identical_to_flat") == true);
  for (const auto& row : rows) CHECK(row.contains("queries_per_second"));
}

TEST_CASE("cli error records and help") {
  retro::testing::TempDir dir("cli");
  {
    std::ofstream f(dir.file("empty.jsonl"));
  }
  auto empty = run({"ingest", "--classes", dir.file("missing.txt"), "--data", dir.file("empty.jsonl")});
  CHECK(empty.code == 1);
  CHECK(empty.report().contains("error"));

  {
    std::ofstream f(dir.file("classes.txt"));
    f << "a\nb\n";
  }
  auto none = run({"ingest", "--classes", dir.file("classes.txt"), "--data", dir.file("empty.jsonl")});
  CHECK(none.code == 1);
  CHECK(none.report().at("error").at("code") == "EmptyCorpus");

  auto help = run({"train", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--beta FLOAT [0.1]") != std::string::npos);
  CHECK(help.out.find("--no-knn-train") != std::string::npos);
  CHECK(help.out.find("RETRO_SEED") != std::string::npos);

  CHECK(run({}).code != 0);
  CHECK(run({"train", "--bogus"}).code != 0);
}
