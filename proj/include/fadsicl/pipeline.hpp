#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "fadsicl/baselines.hpp"
#include "fadsicl/core.hpp"
#include "fadsicl/extraction.hpp"
#include "fadsicl/feature_cache.hpp"
#include "fadsicl/modulators.hpp"

namespace fadsicl {

// One scored test sample; serialized as a JSON Lines record.
struct PredictionRecord {
    std::size_t index = 0;
    int gold = -1;
    int predicted = -1;
    std::vector<double> proba;
};

struct RunOutput {
    std::vector<PredictionRecord> predictions;
    std::unique_ptr<FittedModulator> modulator;  // FADS only
    ExtractionOutput features;                   // feature-space methods only
    nlohmann::json metadata;

    double accuracy() const;
};

// The FADS pipeline for one seed: sample -> split -> freeze the prompt ->
// extract features for residual + test -> fit the modulator -> predict.
// All randomness flows from `seed` through named substreams; metadata records
// backend id, feature kind, per-stage timing and cache statistics.
RunOutput run_fads(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                   FeatureCacheStore* cache, std::uint64_t seed);

// Vanilla ICL (context filled to the budget, answer-cue scoring),
// kNN-prompting (KL vote over residual distributions) and kNN-prompt
// (interpolation), sharing the sampling/split/prompt machinery.
RunOutput run_baseline(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                       FeatureCacheStore* cache, std::uint64_t seed);

// Dispatches on cfg.method.
RunOutput run_method(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                     FeatureCacheStore* cache, std::uint64_t seed);

void write_predictions_jsonl(std::ostream& out, const std::vector<PredictionRecord>& records,
                             const nlohmann::json& extra_fields = nlohmann::json::object());

}  // namespace fadsicl
