#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "fadsicl/dataset_io.hpp"
#include "test_helpers.hpp"

using namespace fadsicl;
using fadsicl::testing::synthetic_dataset;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("fadsicl-io-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("dataset-io") {

TEST_CASE("dataset round trips through manifest plus jsonl") {
    const auto dir = temp_dir("roundtrip");
    const auto ds = synthetic_dataset(3, 5, 2, "demo-task");
    save_dataset(dir / "manifest.json", ds);

    const auto loaded = load_dataset(dir / "manifest.json");
    CHECK(loaded.name == "demo-task");
    CHECK(loaded.classes == ds.classes);
    CHECK(loaded.verbalizer == ds.verbalizer);
    CHECK(loaded.prompt_template.example_pattern == ds.prompt_template.example_pattern);
    CHECK(loaded.prompt_template.separator == ds.prompt_template.separator);
    REQUIRE(loaded.train.size() == ds.train.size());
    REQUIRE(loaded.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(loaded.train[i].text == ds.train[i].text);
        CHECK(loaded.train[i].label == ds.train[i].label);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifests may inherit a preset") {
    const auto dir = temp_dir("preset");
    {
        std::ofstream manifest(dir / "manifest.json");
        manifest << R"({"preset": "sst2", "train": "data.jsonl", "test": "data.jsonl"})";
        std::ofstream data(dir / "data.jsonl");
        data << R"({"text": "a fine movie .", "label": 1})" << "\n";
        data << R"({"text": "dreadful .", "label": 0})" << "\n";
    }
    const auto ds = load_dataset(dir / "manifest.json");
    CHECK(ds.name == "sst2");
    CHECK(ds.classes == std::vector<std::string>{"negative", "positive"});
    CHECK(ds.prompt_template.example_pattern == "Review: {input}\nSentiment: {output}");
    CHECK(ds.prompt_template.query_pattern == "Review: {input}\nSentiment:");
    CHECK(ds.train.size() == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("unknown preset and missing files are reported") {
    const auto dir = temp_dir("errors");
    {
        std::ofstream manifest(dir / "bad.json");
        manifest << R"({"preset": "not-a-task"})";
    }
    CHECK_THROWS_WITH_AS(load_dataset(dir / "bad.json"), doctest::Contains("unknown preset"),
                         Error);
    CHECK_THROWS_WITH_AS(load_dataset(dir / "absent.json"), doctest::Contains("MissingFile"),
                         Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("jsonl parse errors carry the line number") {
    const auto dir = temp_dir("lines");
    {
        std::ofstream data(dir / "broken.jsonl");
        data << R"({"text": "ok", "label": 0})" << "\n";
        data << "not json at all\n";
    }
    CHECK_THROWS_WITH_AS(load_jsonl(dir / "broken.jsonl"), doctest::Contains(":2"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("out-of-range labels fail dataset validation") {
    const auto dir = temp_dir("labels");
    auto ds = synthetic_dataset(2, 3, 1);
    ds.train[0].label = 7;
    save_dataset(dir / "manifest.json", ds);
    CHECK_THROWS_WITH_AS(load_dataset(dir / "manifest.json"), doctest::Contains("BadDataset"),
                         Error);
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
