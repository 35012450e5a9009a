#pragma once

#include <string>
#include <vector>

#include "fadsicl/pipeline.hpp"

namespace fadsicl {

// Aggregated accuracy of one configuration over its seeds. mean is the
// arithmetic mean; stddev the population standard deviation (divisor n).
struct RunResult {
    ExperimentConfig config;
    std::string fingerprint;                  // short hash of the canonical config
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed_accuracy;    // successful seeds only
    std::vector<std::string> per_seed_error;  // "" when the cell succeeded
    double mean = 0.0;
    double stddev = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

Aggregate aggregate_accuracies(const std::vector<double>& accuracies);

std::string config_fingerprint(const ExperimentConfig& cfg);

// Runs every (config, seed) cell, aggregates per config and orders results by
// method then shot count. Failed cells are annotated, not fatal. `workers`
// bounds concurrent cells; collection order is stable regardless.
std::vector<RunResult> evaluate(const TaskDataset& dataset,
                                const std::vector<ExperimentConfig>& grid, Backend& backend,
                                FeatureCacheStore* cache, int workers = 1);

// rows = methods, columns = shot settings, cells = "mean±std" (accuracy in
// percent). The CSV carries the identical numbers.
struct ComparisonTable {
    std::string pretty;
    std::string csv;
};

ComparisonTable compare_table(const std::vector<RunResult>& results);

}  // namespace fadsicl
