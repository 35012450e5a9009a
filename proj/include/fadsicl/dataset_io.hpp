#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fadsicl/core.hpp"

namespace fadsicl {

// Dataset on disk: a JSON manifest next to JSON Lines files. The manifest
// carries name/classes/verbalizer/template plus optional train/test paths
// (default train.jsonl / test.jsonl beside the manifest). A manifest may set
// "preset": "<task>" to inherit a bundled template and label space.
TaskDataset load_dataset(const std::filesystem::path& manifest_path);

// One JSON object per line with fields `text` (string) and `label` (int).
std::vector<LabeledExample> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<LabeledExample>& examples);

void save_dataset(const std::filesystem::path& manifest_path, const TaskDataset& dataset);

// Bundled task presets: sst2, subj, mpqa, agnews, cb, cr, dbpedia, mr, rte,
// trec. Each preset fixes the template, label names and verbalizer tokens;
// train/test data still come from the user.
struct TaskPreset {
    std::string name;
    std::vector<std::string> classes;
    std::vector<std::string> verbalizer;
    PromptTemplate prompt_template;
};

const std::vector<TaskPreset>& task_presets();
std::optional<TaskPreset> find_preset(const std::string& name);

}  // namespace fadsicl
