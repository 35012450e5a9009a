#include "fadsicl/dataset_io.hpp"

#include <fstream>

namespace fadsicl {

namespace {

PromptTemplate make_template(const char* example_pattern, const char* query_pattern) {
    PromptTemplate t;
    t.example_pattern = example_pattern;
    t.separator = "\n\n";
    t.query_pattern = query_pattern;
    return t;
}

std::vector<TaskPreset> build_presets() {
    std::vector<TaskPreset> presets;
    presets.push_back({"sst2",
                       {"negative", "positive"},
                       {"negative", "positive"},
                       make_template("Review: {input}\nSentiment: {output}",
                                     "Review: {input}\nSentiment:")});
    presets.push_back({"subj",
                       {"subjective", "objective"},
                       {"subjective", "objective"},
                       make_template("Input: {input}\nType: {output}", "Input: {input}\nType:")});
    presets.push_back({"mpqa",
                       {"negative", "positive"},
                       {"negative", "positive"},
                       make_template("Review: {input}\nSentiment: {output}",
                                     "Review: {input}\nSentiment:")});
    presets.push_back({"agnews",
                       {"world", "sports", "business", "technology"},
                       {"world", "sports", "business", "technology"},
                       make_template("Input: {input}\nType: {output}", "Input: {input}\nType:")});
    // CB and RTE pair a premise with a hypothesis; the input text is expected
    // pre-joined as "<premise>\nHypothesis: <hypothesis>".
    presets.push_back({"cb",
                       {"False", "True", "Neither"},
                       {"False", "True", "Neither"},
                       make_template("Premise: {input}\nPrediction: {output}",
                                     "Premise: {input}\nPrediction:")});
    presets.push_back({"cr",
                       {"negative", "positive"},
                       {"negative", "positive"},
                       make_template("Review: {input}\nSentiment: {output}",
                                     "Review: {input}\nSentiment:")});
    presets.push_back({"dbpedia",
                       {"company", "school", "artist", "athlete", "politics", "transportation",
                        "building", "nature", "village", "animal", "plant", "album", "film",
                        "book"},
                       {"company", "school", "artist", "athlete", "politics", "transportation",
                        "building", "nature", "village", "animal", "plant", "album", "film",
                        "book"},
                       make_template("Input: {input}\nType: {output}", "Input: {input}\nType:")});
    presets.push_back({"mr",
                       {"negative", "positive"},
                       {"negative", "positive"},
                       make_template("Review: {input}\nSentiment: {output}",
                                     "Review: {input}\nSentiment:")});
    presets.push_back({"rte",
                       {"false", "true"},
                       {"false", "true"},
                       make_template("Premise: {input}\nPrediction: {output}",
                                     "Premise: {input}\nPrediction:")});
    presets.push_back({"trec",
                       {"description", "entity", "expression", "human", "location", "number"},
                       {"description", "entity", "expression", "human", "location", "number"},
                       make_template("Question: {input}\nType: {output}",
                                     "Question: {input}\nType:")});
    return presets;
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in.good()) throw_data("MissingFile", "cannot read " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw_data("BadDataset", path.string() + ": " + e.what());
    }
}

}  // namespace

const std::vector<TaskPreset>& task_presets() {
    static const std::vector<TaskPreset> presets = build_presets();
    return presets;
}

std::optional<TaskPreset> find_preset(const std::string& name) {
    for (const auto& preset : task_presets()) {
        if (preset.name == name) return preset;
    }
    return std::nullopt;
}

std::vector<LabeledExample> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in.good()) throw_data("MissingFile", "cannot read " + path.string());
    std::vector<LabeledExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("text").get<std::string>(), j.at("label").get<int>()});
        } catch (const nlohmann::json::exception& e) {
            throw_data("BadDataset",
                       path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<LabeledExample>& examples) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& ex : examples) {
        out << nlohmann::json{{"text", ex.text}, {"label", ex.label}}.dump() << "\n";
    }
    if (!out.good()) throw_data("WriteFailed", "cannot write " + path.string());
}

TaskDataset load_dataset(const std::filesystem::path& manifest_path) {
    const nlohmann::json manifest = parse_json_file(manifest_path);
    TaskDataset dataset;

    if (manifest.contains("preset")) {
        const auto preset_name = manifest.at("preset").get<std::string>();
        const auto preset = find_preset(preset_name);
        if (!preset) throw_config("BadConfig", "unknown preset '" + preset_name + "'");
        dataset.name = preset->name;
        dataset.classes = preset->classes;
        dataset.verbalizer = preset->verbalizer;
        dataset.prompt_template = preset->prompt_template;
    }

    dataset.name = manifest.value("name", dataset.name);
    if (manifest.contains("classes")) {
        dataset.classes = manifest.at("classes").get<std::vector<std::string>>();
    }
    if (manifest.contains("verbalizer")) {
        dataset.verbalizer = manifest.at("verbalizer").get<std::vector<std::string>>();
    }
    if (manifest.contains("template")) {
        const auto& t = manifest.at("template");
        dataset.prompt_template.example_pattern = t.at("example_pattern").get<std::string>();
        dataset.prompt_template.separator = t.value("separator", std::string("\n\n"));
        dataset.prompt_template.query_pattern = t.at("query_pattern").get<std::string>();
    }

    const auto base = manifest_path.parent_path();
    const auto train_path = base / manifest.value("train", std::string("train.jsonl"));
    const auto test_path = base / manifest.value("test", std::string("test.jsonl"));
    dataset.train = load_jsonl(train_path);
    if (std::filesystem::exists(test_path)) dataset.test = load_jsonl(test_path);

    dataset.validate();
    return dataset;
}

void save_dataset(const std::filesystem::path& manifest_path, const TaskDataset& dataset) {
    const auto base = manifest_path.parent_path();
    if (!base.empty()) std::filesystem::create_directories(base);
    const nlohmann::json manifest{
        {"name", dataset.name},
        {"classes", dataset.classes},
        {"verbalizer", dataset.verbalizer},
        {"template",
         {{"example_pattern", dataset.prompt_template.example_pattern},
          {"separator", dataset.prompt_template.separator},
          {"query_pattern", dataset.prompt_template.query_pattern}}},
        {"train", "train.jsonl"},
        {"test", "test.jsonl"}};
    std::ofstream out(manifest_path, std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out.good()) throw_data("WriteFailed", "cannot write " + manifest_path.string());
    save_jsonl(base / "train.jsonl", dataset.train);
    save_jsonl(base / "test.jsonl", dataset.test);
}

}  // namespace fadsicl
