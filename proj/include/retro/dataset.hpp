#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "retro/core.hpp"

namespace retro {

enum class DataMode { Text, Feature };

struct VocabMiss {
  std::size_t line = 0;
  std::string word;
};

struct Dataset {
  DataMode mode = DataMode::Text;
  std::vector<Example> examples;
  std::size_t dim = 0;  // feature mode only
  std::vector<VocabMiss> misses;

  bool labeled() const;
};

// JSON lines: {"id": int, "text": str} or {"id": int, "feature": [...]},
// each with an optional "label" class name. Text mode needs `vocab`.
Dataset load_jsonl(const std::string& path, const Vocabulary* vocab, const LabelSpace& labels);
void save_jsonl(const std::string& path, const std::vector<Example>& examples, const Vocabulary* vocab,
                const LabelSpace& labels);

// Class names, one per line (feature mode has no verbalizer words).
std::vector<std::string> load_class_names(const std::string& path);

}  // namespace retro
