#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fadsicl/error.hpp"

namespace fadsicl {

// One training or test sample: raw text plus an integer label in [0, C).
struct LabeledExample {
    std::string text;
    int label = 0;
};

// Template wrapping one example ("{input}" / "{output}" slots) plus the
// query form whose trailing answer cue the model is asked to continue.
struct PromptTemplate {
    std::string example_pattern;       // exactly one {input} and one {output}
    std::string separator = "\n\n";    // inserted between wrapped blocks
    std::string query_pattern;         // exactly one {input}, no {output}

    // Throws ConfigError("BadTemplate") when the slot counts are off.
    void validate() const;
};

// A classification task: ordered label names, the verbalizer mapping each
// label id to a vocabulary token, the template, and the two example pools.
struct TaskDataset {
    std::string name;
    std::vector<std::string> classes;        // size C >= 2
    std::vector<std::string> verbalizer;     // token per label id, pairwise distinct
    PromptTemplate prompt_template;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;

    int num_classes() const { return static_cast<int>(classes.size()); }

    // Checks C >= 2, verbalizer coverage/distinctness and label ranges.
    void validate() const;
};

// How the m-shot train set is split into the demonstration set and the
// residual set that supervises the modulator.
struct DemoRegime {
    enum class Kind { None, Fixed, Most };
    Kind kind = Kind::Fixed;
    int per_class = 1;  // meaningful for Fixed only

    static DemoRegime none() { return {Kind::None, 0}; }
    static DemoRegime fixed(int d) { return {Kind::Fixed, d}; }
    static DemoRegime most() { return {Kind::Most, 0}; }
};

struct TrainSplit {
    std::vector<LabeledExample> demonstrations;  // prompt prefix, frozen order
    std::vector<LabeledExample> residual;        // modulator supervision
    std::uint64_t seed = 0;
};

// Which general feature the extractor produces.
struct FeatureKind {
    enum class Tag { HiddenState, FuzzyK };
    Tag tag = Tag::HiddenState;
    int k = 0;  // FuzzyK only, positive

    static FeatureKind hidden() { return {Tag::HiddenState, 0}; }
    static FeatureKind fuzzy(int k) { return {Tag::FuzzyK, k}; }

    bool is_fuzzy() const { return tag == Tag::FuzzyK; }
    std::string tag_string() const;
};

struct FeatureVector {
    std::vector<float> values;
    FeatureKind kind;

    std::size_t dim() const { return values.size(); }
};

// Dense row-major feature matrix; float storage matches the cache format.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    const float* row(std::size_t i) const { return values.data() + i * cols; }
    void append_row(const std::vector<float>& v);
};

enum class Method { Fads, VanillaIcl, KnnPrompting, KnnPrompt };

enum class ModulatorKind { LogisticRegression, LinearSvm, Mlp, NearestNeighbors, DecisionTree };

enum class KlDirection { TestGivenTrain, TrainGivenTest };

// k-NN vote settings shared by the kNN-prompting and kNN-prompt baselines.
struct NeighborVoteConfig {
    std::optional<int> k;           // nullopt = Auto = ceil(sqrt(|R|))
    bool symmetric_kl = false;      // false: plain KL in `direction`
    KlDirection direction = KlDirection::TestGivenTrain;
    double temperature = 1.0;       // kNN-prompt weighting
    double lambda = 0.5;            // kNN-prompt interpolation weight
};

struct ExperimentConfig {
    Method method = Method::Fads;
    int shots_per_class = 32;                        // m
    DemoRegime demo_regime = DemoRegime::fixed(1);
    FeatureKind feature_kind = FeatureKind::hidden();
    ModulatorKind modulator_kind = ModulatorKind::LogisticRegression;
    NeighborVoteConfig vote;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::size_t context_budget = 1024;               // tokens
    std::size_t max_test = 0;                        // 0 = unlimited

    // Throws on method/regime inconsistencies, e.g. FADS with Fixed(d) needs
    // m >= 2d so the residual supervision is non-empty.
    void validate() const;
};

// Draws exactly m train examples per class, uniformly without replacement,
// deterministic in (dataset order, m, seed). Output is grouped by class id.
std::vector<LabeledExample> sample_shots(const TaskDataset& dataset, int m, std::uint64_t seed);

// Token cost model used by the Most regime: `cost` prices one wrapped
// demonstration block (including its separator); `budget` is the room left
// for the demonstration prefix.
struct BudgetGauge {
    std::size_t budget = 0;
    std::function<std::size_t(const LabeledExample&)> cost;
};

// Splits shots into demonstrations + residual. Fixed(d) takes d per class,
// None takes nothing, Most fills the gauge budget round-robin over classes in
// seeded-shuffled order and stops at the first block that does not fit.
// Demonstrations come back in prompt order; demonstrations + residual is
// always a permutation of `shots`.
TrainSplit split_train(const std::vector<LabeledExample>& shots, const DemoRegime& regime,
                       std::uint64_t seed, const BudgetGauge* gauge = nullptr);

// ceil(bytes / 4); the fallback when no backend tokenizer is available.
std::size_t approx_token_count(std::string_view text);

const char* method_name(Method m);
const char* modulator_name(ModulatorKind k);

}  // namespace fadsicl
