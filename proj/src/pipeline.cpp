#include "fadsicl/pipeline.hpp"

#include <chrono>
#include <ostream>

#include "fadsicl/prompting.hpp"

namespace fadsicl {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<LabeledExample> clipped_test(const TaskDataset& dataset,
                                         const ExperimentConfig& cfg) {
    if (cfg.max_test == 0 || dataset.test.size() <= cfg.max_test) return dataset.test;
    return std::vector<LabeledExample>(dataset.test.begin(),
                                       dataset.test.begin() +
                                           static_cast<std::ptrdiff_t>(cfg.max_test));
}

// Room left for the demonstration prefix once the longest wrapped query is
// reserved. `queries` holds every sample that will be wrapped: residual
// candidates and test for the feature methods, test alone for vanilla ICL.
std::size_t demo_budget(const TaskDataset& dataset, const ExperimentConfig& cfg,
                        Backend& backend,
                        std::initializer_list<const std::vector<LabeledExample>*> queries) {
    std::size_t reserve = 0;
    const auto& tmpl = dataset.prompt_template;
    for (const auto* pool : queries) {
        for (const auto& ex : *pool) {
            const auto prompt = render_prompt(tmpl, {}, dataset.verbalizer, ex.text);
            reserve = std::max(reserve, backend.count_tokens(prompt.text));
        }
    }
    if (reserve >= cfg.context_budget) {
        throw_data("BudgetExceeded", "a wrapped sample alone exceeds the context budget of " +
                                         std::to_string(cfg.context_budget) + " tokens");
    }
    return cfg.context_budget - reserve;
}

BudgetGauge make_gauge(const TaskDataset& dataset, Backend& backend, std::size_t budget) {
    BudgetGauge gauge;
    gauge.budget = budget;
    gauge.cost = [&dataset, &backend](const LabeledExample& ex) {
        const std::string block =
            render_demonstration(dataset.prompt_template, ex, dataset.verbalizer) +
            dataset.prompt_template.separator;
        return backend.count_tokens(block);
    };
    return gauge;
}

// No rendered prompt may exceed the configured context budget.
void check_budget(const PromptContext& ctx, Backend& backend, const ExperimentConfig& cfg,
                  const std::vector<LabeledExample>& samples) {
    for (const auto& ex : samples) {
        const auto tokens = backend.count_tokens(ctx.wrap(ex.text).text);
        if (tokens > cfg.context_budget) {
            throw_data("BudgetExceeded",
                       "rendered prompt of " + std::to_string(tokens) +
                           " tokens exceeds the context budget of " +
                           std::to_string(cfg.context_budget));
        }
    }
}

struct Stage {
    nlohmann::json& timing;
    const char* name;
    Clock::time_point start = Clock::now();
    ~Stage() { timing[name] = ms_since(start); }
};

// Errors escape with the failing stage named.
template <typename Fn>
auto run_stage(nlohmann::json& timing, const char* name, Fn&& fn) {
    Stage stage{timing, name};
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.category(), e.code(),
                    std::string("stage ") + name + ": " + e.what());
    }
}

FeatureCacheFile* open_cache(FeatureCacheStore* store, Backend& backend,
                             const TaskDataset& dataset, const FeatureKind& kind,
                             const FuzzyKSelector* selector) {
    if (store == nullptr) return nullptr;
    const auto tag = kind_cache_tag(kind, selector);
    nlohmann::json meta{{"backend", backend.id()},
                        {"dataset", dataset.name},
                        {"feature_kind", kind.tag_string()},
                        {"template",
                         {{"example_pattern", dataset.prompt_template.example_pattern},
                          {"separator", dataset.prompt_template.separator},
                          {"query_pattern", dataset.prompt_template.query_pattern}}}};
    return &store->open(backend.id(), template_hash(dataset.prompt_template), tag,
                        std::move(meta));
}

nlohmann::json base_metadata(const ExperimentConfig& cfg, Backend& backend, std::uint64_t seed) {
    return nlohmann::json{{"method", method_name(cfg.method)},
                          {"seed", seed},
                          {"backend", backend.id()},
                          {"shots_per_class", cfg.shots_per_class},
                          {"context_budget", cfg.context_budget},
                          {"timing_ms", nlohmann::json::object()}};
}

std::vector<VocabDistribution> extract_distributions(Backend& backend, const PromptContext& ctx,
                                                     const std::vector<LabeledExample>& samples,
                                                     std::size_t& calls) {
    std::vector<VocabDistribution> out;
    out.reserve(samples.size());
    for (const auto& ex : samples) {
        const SampleInfo info{ex.text, ex.label};
        out.push_back(extract_distribution(backend, ctx.wrap(ex.text), &info));
        ++calls;
    }
    return out;
}

}  // namespace

double RunOutput::accuracy() const {
    if (predictions.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& rec : predictions) {
        if (rec.predicted == rec.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

RunOutput run_fads(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                   FeatureCacheStore* cache, std::uint64_t seed) {
    if (cfg.method != Method::Fads) {
        throw_config("MethodMismatch", "run_fads called with method " +
                                           std::string(method_name(cfg.method)));
    }
    cfg.validate();
    dataset.validate();

    RunOutput out;
    out.metadata = base_metadata(cfg, backend, seed);
    auto& timing = out.metadata["timing_ms"];

    const auto test = clipped_test(dataset, cfg);

    const auto shots = run_stage(timing, "sample", [&] {
        return sample_shots(dataset, cfg.shots_per_class, seed);
    });

    const auto split = run_stage(timing, "split", [&] {
        if (cfg.demo_regime.kind == DemoRegime::Kind::Most) {
            const auto gauge = make_gauge(
                dataset, backend, demo_budget(dataset, cfg, backend, {&shots, &test}));
            return split_train(shots, cfg.demo_regime, seed, &gauge);
        }
        return split_train(shots, cfg.demo_regime, seed);
    });

    const PromptContext ctx(dataset.prompt_template, dataset.verbalizer, split.demonstrations);
    run_stage(timing, "budget-check", [&] {
        check_budget(ctx, backend, cfg, split.residual);
        check_budget(ctx, backend, cfg, test);
        return 0;
    });

    ExtractionOptions options;
    options.kind = cfg.feature_kind;
    options.max_parallel = backend.max_parallel();

    FuzzyKSelector selector;
    std::size_t selector_calls = 0;
    if (cfg.feature_kind.is_fuzzy()) {
        selector = run_stage(timing, "selector", [&] {
            if (backend.exposes_token_embeddings()) {
                return build_fuzzy_selector(backend, dataset.verbalizer, cfg.feature_kind.k);
            }
            // Black-box route: rank tokens by their average probability at the
            // answer cue across residual samples.
            const auto dists = extract_distributions(backend, ctx, split.residual,
                                                     selector_calls);
            return build_fuzzy_selector(backend, dataset.verbalizer, cfg.feature_kind.k,
                                        &dists);
        });
        options.selector = &selector;
        out.metadata["fuzzy_selector"] = {{"route", selector.route},
                                          {"dim", selector.dim()},
                                          {"tokens", selector.flat_tokens}};
    }

    out.features = run_stage(timing, "extract", [&] {
        options.cache = open_cache(cache, backend, dataset, cfg.feature_kind, options.selector);
        auto extracted = extract_all(backend, ctx, split, test, options);
        if (cache != nullptr) cache->flush();
        return extracted;
    });

    out.modulator = run_stage(timing, "fit", [&] {
        return fit(cfg.modulator_kind, out.features.residual_features,
                   out.features.residual_labels, dataset.num_classes(), seed);
    });

    run_stage(timing, "predict", [&] {
        for (std::size_t i = 0; i < test.size(); ++i) {
            PredictionRecord rec;
            rec.index = i;
            rec.gold = test[i].label;
            rec.proba = out.modulator->predict_proba(
                std::span<const float>(out.features.test_features.row(i),
                                       out.features.test_features.cols));
            rec.predicted = argmax_label(rec.proba);
            out.predictions.push_back(std::move(rec));
        }
        return 0;
    });

    out.metadata["feature_kind"] = cfg.feature_kind.tag_string();
    out.metadata["modulator"] = modulator_name(cfg.modulator_kind);
    out.metadata["demo_count"] = split.demonstrations.size();
    out.metadata["residual_count"] = split.residual.size();
    out.metadata["backend_calls"] = out.features.backend_calls + selector_calls;
    out.metadata["cache_hits"] = out.features.cache_hits;
    return out;
}

RunOutput run_baseline(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                       FeatureCacheStore* cache, std::uint64_t seed) {
    if (cfg.method == Method::Fads) {
        throw_config("MethodMismatch", "run_baseline called with method fads");
    }
    cfg.validate();
    dataset.validate();
    (void)cache;  // distribution-space baselines are not feature-cached

    RunOutput out;
    out.metadata = base_metadata(cfg, backend, seed);
    auto& timing = out.metadata["timing_ms"];

    const auto test = clipped_test(dataset, cfg);

    const auto shots = run_stage(timing, "sample", [&] {
        return sample_shots(dataset, cfg.shots_per_class, seed);
    });

    const auto split = run_stage(timing, "split", [&] {
        if (cfg.method == Method::VanillaIcl) {
            // The ICL regime: fill the context with as many demonstrations as
            // fit the budget; the residual is unusable by construction and
            // only test samples become queries.
            const auto gauge =
                make_gauge(dataset, backend, demo_budget(dataset, cfg, backend, {&test}));
            return split_train(shots, DemoRegime::most(), seed, &gauge);
        }
        if (cfg.demo_regime.kind == DemoRegime::Kind::Most) {
            const auto gauge = make_gauge(
                dataset, backend, demo_budget(dataset, cfg, backend, {&shots, &test}));
            return split_train(shots, cfg.demo_regime, seed, &gauge);
        }
        return split_train(shots, cfg.demo_regime, seed);
    });

    const PromptContext ctx(dataset.prompt_template, dataset.verbalizer, split.demonstrations);
    check_budget(ctx, backend, cfg, test);

    std::size_t calls = 0;
    if (cfg.method == Method::VanillaIcl) {
        run_stage(timing, "score", [&] {
            for (std::size_t i = 0; i < test.size(); ++i) {
                const SampleInfo info{test[i].text, test[i].label};
                const auto dist = extract_distribution(backend, ctx.wrap(test[i].text), &info);
                ++calls;
                PredictionRecord rec;
                rec.index = i;
                rec.gold = test[i].label;
                rec.proba = icl_predict(dist, dataset.verbalizer);
                rec.predicted = argmax_label(rec.proba);
                out.predictions.push_back(std::move(rec));
            }
            return 0;
        });
    } else {
        run_stage(timing, "budget-check", [&] {
            check_budget(ctx, backend, cfg, split.residual);
            return 0;
        });
        for (const auto& ex : split.residual) out.features.residual_labels.push_back(ex.label);
        const auto residual_dists = run_stage(timing, "extract", [&] {
            return extract_distributions(backend, ctx, split.residual, calls);
        });
        NeighborVoteConfig vote = cfg.vote;
        const int k = vote.k.value_or(auto_k(split.residual.size()));
        vote.k = k;
        out.metadata["vote_k"] = k;

        run_stage(timing, "score", [&] {
            for (std::size_t i = 0; i < test.size(); ++i) {
                const SampleInfo info{test[i].text, test[i].label};
                const auto dist = extract_distribution(backend, ctx.wrap(test[i].text), &info);
                ++calls;
                PredictionRecord rec;
                rec.index = i;
                rec.gold = test[i].label;
                if (cfg.method == Method::KnnPrompting) {
                    rec.predicted =
                        knn_prompting_predict(dist, residual_dists,
                                              out.features.residual_labels, vote,
                                              dataset.num_classes());
                    rec.proba.assign(dataset.classes.size(), 0.0);
                    rec.proba[rec.predicted] = 1.0;
                } else {
                    rec.proba =
                        knn_prompt_predict(dist, residual_dists, out.features.residual_labels,
                                           dataset.verbalizer, vote);
                    rec.predicted = argmax_label(rec.proba);
                }
                out.predictions.push_back(std::move(rec));
            }
            return 0;
        });
    }

    out.metadata["demo_count"] = split.demonstrations.size();
    out.metadata["residual_count"] = split.residual.size();
    out.metadata["backend_calls"] = calls;
    return out;
}

RunOutput run_method(const TaskDataset& dataset, const ExperimentConfig& cfg, Backend& backend,
                     FeatureCacheStore* cache, std::uint64_t seed) {
    if (cfg.method == Method::Fads) return run_fads(dataset, cfg, backend, cache, seed);
    return run_baseline(dataset, cfg, backend, cache, seed);
}

void write_predictions_jsonl(std::ostream& out, const std::vector<PredictionRecord>& records,
                             const nlohmann::json& extra_fields) {
    for (const auto& rec : records) {
        nlohmann::json j{{"index", rec.index},
                         {"gold", rec.gold},
                         {"predicted", rec.predicted},
                         {"proba", rec.proba}};
        for (const auto& [key, value] : extra_fields.items()) j[key] = value;
        out << j.dump() << "\n";
    }
}

}  // namespace fadsicl
