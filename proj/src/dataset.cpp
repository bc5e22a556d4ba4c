#include "retro/dataset.hpp"

#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace retro {

bool Dataset::labeled() const {
  for (const auto& ex : examples) {
    if (!ex.label) return false;
  }
  return true;
}

Dataset load_jsonl(const std::string& path, const Vocabulary* vocab, const LabelSpace& labels) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset " + path);
  Dataset ds;
  std::optional<DataMode> mode;
  std::unordered_set<ExampleId> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, where + ": " + e.what());
    }
    Example ex;
    try {
      ex.id = rec.at("id").get<ExampleId>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::InvalidArgument, where + ": missing integer \"id\"");
    }
    if (!seen.insert(ex.id).second) throw Error(ErrorCode::InvalidArgument, where + ": duplicate id");

    const bool text = rec.contains("text");
    const bool feature = rec.contains("feature");
    if (text == feature) throw Error(ErrorCode::InvalidArgument, where + ": need exactly one of text/feature");
    const DataMode this_mode = text ? DataMode::Text : DataMode::Feature;
    if (mode && *mode != this_mode) throw Error(ErrorCode::MixedModes, where + ": file mixes text and feature records");
    mode = this_mode;

    if (text) {
      if (!vocab) throw Error(ErrorCode::InvalidArgument, "text dataset requires a vocabulary");
      std::vector<std::string> misses;
      ex.input = vocab->tokenize(rec.at("text").get<std::string>(), &misses);
      for (auto& w : misses) ds.misses.push_back({lineno, std::move(w)});
    } else {
      auto values = rec.at("feature").get<std::vector<float>>();
      if (ds.dim == 0) ds.dim = values.size();
      if (values.size() != ds.dim || values.empty()) {
        throw Error(ErrorCode::DimensionMismatch, where + ": feature has dimension " + std::to_string(values.size()) +
                                                      ", expected " + std::to_string(ds.dim));
      }
      ex.input = Embedding(std::move(values));
    }
    if (rec.contains("label") && !rec.at("label").is_null()) {
      const auto name = rec.at("label").get<std::string>();
      auto c = labels.find_class(name);
      if (!c) throw Error(ErrorCode::UnknownLabel, where + ": unknown label '" + name + "'");
      ex.label = *c;
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw Error(ErrorCode::EmptyCorpus, path + " has no records");
  ds.mode = *mode;
  return ds;
}

void save_jsonl(const std::string& path, const std::vector<Example>& examples, const Vocabulary* vocab,
                const LabelSpace& labels) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write dataset " + path);
  for (const auto& ex : examples) {
    nlohmann::json rec;
    rec["id"] = ex.id;
    if (ex.is_text()) {
      if (!vocab) throw Error(ErrorCode::InvalidArgument, "text dataset requires a vocabulary");
      rec["text"] = vocab->detokenize(ex.tokens());
    } else {
      rec["feature"] = std::vector<float>(ex.feature().values().begin(), ex.feature().values().end());
    }
    if (ex.label) rec["label"] = labels.class_name(*ex.label);
    out << rec.dump() << '\n';
  }
}

std::vector<std::string> load_class_names(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open class list " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    auto name = line.substr(0, tab);
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    if (!name.empty()) names.push_back(name);
  }
  return names;
}

}  // namespace retro
