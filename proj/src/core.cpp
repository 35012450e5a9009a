#include "fadsicl/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "fadsicl/rng.hpp"

namespace fadsicl {

namespace {

std::size_t count_occurrences(const std::string& pattern, std::string_view slot) {
    std::size_t count = 0;
    for (std::size_t pos = pattern.find(slot); pos != std::string::npos;
         pos = pattern.find(slot, pos + slot.size())) {
        ++count;
    }
    return count;
}

bool is_blank(const std::string& text) {
    return std::all_of(text.begin(), text.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void PromptTemplate::validate() const {
    if (count_occurrences(example_pattern, "{input}") != 1 ||
        count_occurrences(example_pattern, "{output}") != 1) {
        throw_config("BadTemplate",
                     "example_pattern must contain exactly one {input} and one {output}");
    }
    if (count_occurrences(query_pattern, "{input}") != 1 ||
        count_occurrences(query_pattern, "{output}") != 0) {
        throw_config("BadTemplate",
                     "query_pattern must contain exactly one {input} and no {output}");
    }
}

void TaskDataset::validate() const {
    if (classes.size() < 2) throw_data("BadDataset", name + ": needs at least 2 classes");
    if (verbalizer.size() != classes.size()) {
        throw_data("BadDataset", name + ": verbalizer must cover every label id exactly once");
    }
    std::set<std::string> distinct(verbalizer.begin(), verbalizer.end());
    if (distinct.size() != verbalizer.size()) {
        throw_data("BadDataset", name + ": verbalizer tokens must be pairwise distinct");
    }
    prompt_template.validate();
    const int c = num_classes();
    for (const auto* pool : {&train, &test}) {
        for (const auto& ex : *pool) {
            if (ex.label < 0 || ex.label >= c) {
                throw_data("BadDataset", name + ": label " + std::to_string(ex.label) +
                                             " outside [0, " + std::to_string(c) + ")");
            }
            if (is_blank(ex.text)) throw_data("BadDataset", name + ": blank example text");
        }
    }
}

std::string FeatureKind::tag_string() const {
    if (tag == Tag::HiddenState) return "hidden";
    return "fuzzy:" + std::to_string(k);
}

void FeatureMatrix::append_row(const std::vector<float>& v) {
    if (rows == 0 && cols == 0) cols = v.size();
    if (v.size() != cols) {
        throw_backend("DimensionMismatch", "feature row of dim " + std::to_string(v.size()) +
                                               " appended to matrix of width " +
                                               std::to_string(cols));
    }
    values.insert(values.end(), v.begin(), v.end());
    ++rows;
}

void ExperimentConfig::validate() const {
    if (shots_per_class < 1) throw_config("BadConfig", "shots_per_class must be positive");
    if (feature_kind.is_fuzzy() && feature_kind.k < 1) {
        throw_config("BadConfig", "fuzzy-k requires positive k");
    }
    if (seeds.empty()) throw_config("BadConfig", "at least one seed required");
    if (method == Method::Fads && demo_regime.kind == DemoRegime::Kind::Fixed) {
        if (demo_regime.per_class < 0) throw_config("BadConfig", "demos per class negative");
        if (shots_per_class < 2 * demo_regime.per_class) {
            throw_config("BadConfig",
                         "FADS with fixed demonstrations needs shots_per_class >= 2 * "
                         "demos_per_class to leave residual supervision");
        }
    }
}

std::vector<LabeledExample> sample_shots(const TaskDataset& dataset, int m, std::uint64_t seed) {
    if (m < 1) throw_config("BadConfig", "shots per class must be positive");
    const int c = dataset.num_classes();
    std::vector<std::vector<std::size_t>> by_class(c);
    for (std::size_t i = 0; i < dataset.train.size(); ++i) {
        by_class[dataset.train[i].label].push_back(i);
    }
    std::vector<LabeledExample> shots;
    shots.reserve(static_cast<std::size_t>(m) * c);
    for (int label = 0; label < c; ++label) {
        const auto& pool = by_class[label];
        if (pool.size() < static_cast<std::size_t>(m)) {
            throw_data("InsufficientData",
                       dataset.name + ": class " + std::to_string(label) + " has " +
                           std::to_string(pool.size()) + " train examples, need " +
                           std::to_string(m));
        }
        auto rng = Rng::stream(seed, "sampling", static_cast<std::uint64_t>(label));
        for (std::size_t idx : rng.sample_indices(pool.size(), static_cast<std::size_t>(m))) {
            shots.push_back(dataset.train[pool[idx]]);
        }
    }
    return shots;
}

TrainSplit split_train(const std::vector<LabeledExample>& shots, const DemoRegime& regime,
                       std::uint64_t seed, const BudgetGauge* gauge) {
    TrainSplit split;
    split.seed = seed;

    if (regime.kind == DemoRegime::Kind::None || (regime.kind == DemoRegime::Kind::Fixed &&
                                                  regime.per_class == 0)) {
        split.residual = shots;
        return split;
    }

    // Group shot indices by class, preserving input order within a class.
    std::vector<int> class_ids;
    std::unordered_map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < shots.size(); ++i) {
        auto [it, inserted] = by_class.try_emplace(shots[i].label);
        if (inserted) class_ids.push_back(shots[i].label);
        it->second.push_back(i);
    }
    std::sort(class_ids.begin(), class_ids.end());

    auto order_rng = Rng::stream(seed, "demo-order");
    order_rng.shuffle(class_ids);
    for (int label : class_ids) order_rng.shuffle(by_class[label]);

    std::vector<bool> taken(shots.size(), false);
    std::vector<std::size_t> cursor(class_ids.size(), 0);

    auto take = [&](std::size_t shot_index) {
        split.demonstrations.push_back(shots[shot_index]);
        taken[shot_index] = true;
    };

    if (regime.kind == DemoRegime::Kind::Fixed) {
        const auto d = static_cast<std::size_t>(regime.per_class);
        for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
            if (by_class[class_ids[ci]].size() < 2 * d) {
                throw_data("InsufficientData",
                           "class " + std::to_string(class_ids[ci]) + " has " +
                               std::to_string(by_class[class_ids[ci]].size()) +
                               " shots, need >= " + std::to_string(2 * d) +
                               " for fixed(" + std::to_string(d) + ") demonstrations");
            }
        }
        // Round-robin over the shuffled class order, d rounds.
        for (std::size_t round = 0; round < d; ++round) {
            for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
                take(by_class[class_ids[ci]][cursor[ci]++]);
            }
        }
    } else {  // Most
        if (gauge == nullptr || !gauge->cost) {
            throw_config("BadConfig", "Most regime requires a budget gauge");
        }
        std::size_t used = 0;
        bool exhausted = false;
        bool overflow = false;
        while (!exhausted && !overflow) {
            exhausted = true;
            for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
                auto& pool = by_class[class_ids[ci]];
                if (cursor[ci] >= pool.size()) continue;
                exhausted = false;
                const std::size_t shot_index = pool[cursor[ci]];
                const std::size_t price = gauge->cost(shots[shot_index]);
                if (used + price > gauge->budget) {
                    overflow = true;
                    break;
                }
                used += price;
                take(shot_index);
                ++cursor[ci];
            }
        }
    }

    for (std::size_t i = 0; i < shots.size(); ++i) {
        if (!taken[i]) split.residual.push_back(shots[i]);
    }
    return split;
}

std::size_t approx_token_count(std::string_view text) {
    return (text.size() + 3) / 4;
}

const char* method_name(Method m) {
    switch (m) {
        case Method::Fads: return "fads";
        case Method::VanillaIcl: return "icl";
        case Method::KnnPrompting: return "knn-prompting";
        case Method::KnnPrompt: return "knn-prompt";
    }
    return "?";
}

const char* modulator_name(ModulatorKind k) {
    switch (k) {
        case ModulatorKind::LogisticRegression: return "lr";
        case ModulatorKind::LinearSvm: return "svm";
        case ModulatorKind::Mlp: return "mlp";
        case ModulatorKind::NearestNeighbors: return "knn";
        case ModulatorKind::DecisionTree: return "tree";
    }
    return "?";
}

}  // namespace fadsicl
