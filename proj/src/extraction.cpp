#include "fadsicl/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>
#include <unordered_set>

#include "fadsicl/encoding.hpp"

namespace fadsicl {

void VocabDistribution::renormalize() {
    double sum = 0.0;
    for (const auto& e : entries) {
        if (e.prob < 0.0) {
            throw_backend("BadDistribution", "negative probability for token " + e.token);
        }
        sum += e.prob;
    }
    if (entries.empty() || sum <= 0.0) {
        throw_backend("EmptySupport", "distribution has no probability mass");
    }
    if (sum > 1.0 + 1e-6) {
        throw_backend("BadDistribution",
                      "probabilities sum to " + std::to_string(sum) + " > 1");
    }
    coverage = sum;
    for (auto& e : entries) e.prob /= sum;
}

double VocabDistribution::prob_of_id(int token_id) const {
    for (const auto& e : entries) {
        if (e.id == token_id) return e.prob;
    }
    return 0.0;
}

double VocabDistribution::prob_of_token(std::string_view token) const {
    double spaced = -1.0;
    for (const auto& e : entries) {
        if (e.token == token) return e.prob;
        if (e.token.size() == token.size() + 1 && e.token.front() == ' ' &&
            std::string_view(e.token).substr(1) == token) {
            spaced = e.prob;
        }
    }
    return spaced >= 0.0 ? spaced : 0.0;
}

std::vector<float> Backend::token_embedding(int) {
    throw_backend("SimilarityUnavailable", "backend does not expose token embeddings");
}

FeatureVector extract_hidden(Backend& backend, const RenderedPrompt& prompt,
                             const SampleInfo* sample, std::optional<std::size_t> expected_dim) {
    if (!backend.supports_hidden()) {
        throw_config("BadConfig", "backend " + backend.id() + " cannot produce hidden states");
    }
    FeatureVector out;
    out.kind = FeatureKind::hidden();
    out.values = backend.hidden_state(prompt, sample);
    if (out.values.empty()) {
        throw_backend("EmptySupport", "backend returned an empty hidden state");
    }
    for (float v : out.values) {
        if (!std::isfinite(v)) {
            throw_backend("BadFeature", "non-finite value in hidden state");
        }
    }
    if (expected_dim && out.values.size() != *expected_dim) {
        throw_backend("DimensionMismatch",
                      "backend width changed from " + std::to_string(*expected_dim) + " to " +
                          std::to_string(out.values.size()) + " mid-run");
    }
    return out;
}

VocabDistribution extract_distribution(Backend& backend, const RenderedPrompt& prompt,
                                       const SampleInfo* sample) {
    if (!backend.supports_logprobs()) {
        throw_config("BadConfig", "backend " + backend.id() + " cannot produce logprobs");
    }
    VocabDistribution dist = backend.next_token_distribution(prompt, sample);
    dist.renormalize();
    return dist;
}

namespace {

struct RankedToken {
    int id;
    std::string token;
    double score;
};

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

// Descending score, ties by ascending token id.
void rank(std::vector<RankedToken>& candidates) {
    std::sort(candidates.begin(), candidates.end(), [](const RankedToken& a, const RankedToken& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
}

}  // namespace

FuzzyKSelector build_fuzzy_selector(Backend& backend, const std::vector<std::string>& verbalizer,
                                    int k, const std::vector<VocabDistribution>* residual_dists) {
    if (k < 1) throw_config("BadConfig", "fuzzy-k requires k >= 1");
    FuzzyKSelector selector;
    selector.k = k;

    // Resolve each verbalizer token to a single backend token id.
    std::vector<int> label_ids(verbalizer.size(), -1);
    std::map<int, std::string> token_names;
    for (std::size_t label = 0; label < verbalizer.size(); ++label) {
        auto id = backend.single_token_id(verbalizer[label]);
        if (!id && residual_dists) {
            // Black-box route: the id may only be discoverable from supports.
            for (const auto& dist : *residual_dists) {
                for (const auto& e : dist.entries) {
                    if (e.token == verbalizer[label] ||
                        (e.token.size() == verbalizer[label].size() + 1 &&
                         e.token.front() == ' ' &&
                         std::string_view(e.token).substr(1) == verbalizer[label])) {
                        id = e.id;
                        break;
                    }
                }
                if (id) break;
            }
        }
        if (!id) {
            throw_data("MultiTokenVerbalizer",
                       "verbalizer token '" + verbalizer[label] +
                           "' does not map to a single backend token");
        }
        label_ids[label] = *id;
        token_names[*id] = verbalizer[label];
    }

    const bool cosine_route = backend.exposes_token_embeddings();
    std::vector<RankedToken> candidates;
    if (cosine_route) {
        selector.route = "cosine";
        for (const auto& [id, token] : backend.vocabulary()) {
            candidates.push_back({id, token, 0.0});
            token_names.emplace(id, token);
        }
    } else {
        if (residual_dists == nullptr || residual_dists->empty()) {
            throw_backend("SimilarityUnavailable",
                          "backend exposes no token embeddings and no residual distributions "
                          "were provided for the average-probability fallback");
        }
        selector.route = "avg-prob";
        std::map<int, std::pair<std::string, double>> sums;
        for (const auto& dist : *residual_dists) {
            for (const auto& e : dist.entries) sums[e.id] = {e.token, 0.0};
        }
        for (const auto& dist : *residual_dists) {
            for (const auto& e : dist.entries) sums[e.id].second += e.prob;
        }
        for (auto& [id, entry] : sums) {
            candidates.push_back({id, entry.first, entry.second / residual_dists->size()});
            token_names.emplace(id, entry.first);
        }
    }

    std::unordered_set<int> seen;
    for (std::size_t label = 0; label < verbalizer.size(); ++label) {
        std::vector<RankedToken> ranked;
        if (cosine_route) {
            const auto anchor = backend.token_embedding(label_ids[label]);
            ranked = candidates;
            for (auto& c : ranked) c.score = cosine(backend.token_embedding(c.id), anchor);
        } else {
            ranked = candidates;  // average probability at the answer cue
        }
        // The label's own token is always ranked first.
        ranked.erase(std::remove_if(ranked.begin(), ranked.end(),
                                    [&](const RankedToken& c) { return c.id == label_ids[label]; }),
                     ranked.end());
        rank(ranked);

        std::vector<int> chosen{label_ids[label]};
        for (const auto& c : ranked) {
            if (static_cast<int>(chosen.size()) >= k) break;
            chosen.push_back(c.id);
        }
        for (int id : chosen) {
            if (seen.insert(id).second) {
                selector.flat_ids.push_back(id);
                selector.flat_tokens.push_back(token_names[id]);
            }
        }
        selector.per_label_ids.push_back(std::move(chosen));
    }
    return selector;
}

FeatureVector featurize(const FuzzyKSelector& selector, const VocabDistribution& dist) {
    FeatureVector out;
    out.kind = FeatureKind::fuzzy(selector.k);
    out.values.reserve(selector.flat_ids.size());
    for (int id : selector.flat_ids) {
        out.values.push_back(static_cast<float>(dist.prob_of_id(id)));
    }
    return out;
}

std::string template_hash(const PromptTemplate& tmpl) {
    return sha256_hex(tmpl.example_pattern + "\x1f" + tmpl.separator + "\x1f" +
                      tmpl.query_pattern);
}

std::string feature_cache_key(const std::string& backend_id, const std::string& template_hash,
                              std::string_view prompt_text, const std::string& kind_tag) {
    std::string payload;
    payload.reserve(backend_id.size() + template_hash.size() + prompt_text.size() +
                    kind_tag.size() + 3);
    payload += backend_id;
    payload += '\x1f';
    payload += template_hash;
    payload += '\x1f';
    payload.append(prompt_text);
    payload += '\x1f';
    payload += kind_tag;
    return sha256_hex(payload);
}

std::string kind_cache_tag(const FeatureKind& kind, const FuzzyKSelector* selector) {
    if (!kind.is_fuzzy()) return kind.tag_string();
    std::string ids;
    if (selector != nullptr) {
        for (int id : selector->flat_ids) {
            ids += std::to_string(id);
            ids += ',';
        }
    }
    return kind.tag_string() + ":sel=" + sha256_hex(ids).substr(0, 12);
}

namespace {

// Computes features for the given samples under a shared prompt prefix,
// consulting the cache first and fanning misses out over worker threads.
// Results land in sample order.
struct BatchExtractor {
    Backend& backend;
    const PromptContext& ctx;
    const ExtractionOptions& options;
    std::string tmpl_hash;
    std::string kind_tag;
    std::atomic<std::size_t> backend_calls{0};
    std::size_t cache_hits = 0;

    BatchExtractor(Backend& backend, const PromptContext& ctx, const ExtractionOptions& options)
        : backend(backend), ctx(ctx), options(options) {
        tmpl_hash = template_hash(ctx.prompt_template());
        kind_tag = kind_cache_tag(options.kind, options.selector);
        if (options.kind.is_fuzzy() && options.selector == nullptr) {
            throw_config("BadConfig", "fuzzy extraction requires a built selector");
        }
    }

    FeatureVector compute(const LabeledExample& ex) {
        const RenderedPrompt prompt = ctx.wrap(ex.text);
        const SampleInfo info{ex.text, ex.label};
        backend_calls.fetch_add(1, std::memory_order_relaxed);
        if (options.kind.is_fuzzy()) {
            return featurize(*options.selector, extract_distribution(backend, prompt, &info));
        }
        return extract_hidden(backend, prompt, &info);
    }

    void run(const std::vector<LabeledExample>& samples, std::string_view stage,
             FeatureMatrix& out, std::vector<int>& labels) {
        std::vector<std::vector<float>> rows(samples.size());
        std::vector<std::string> keys(samples.size());
        std::vector<std::size_t> misses;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            keys[i] = feature_cache_key(backend.id(), tmpl_hash, ctx.wrap(samples[i].text).text,
                                        kind_tag);
            if (options.cache != nullptr) {
                if (auto hit = options.cache->lookup(keys[i])) {
                    rows[i].assign(hit->begin(), hit->end());
                    ++cache_hits;
                    continue;
                }
            }
            misses.push_back(i);
        }

        const int workers = std::max(
            1, std::min<int>(options.max_parallel, static_cast<int>(misses.size())));
        std::vector<std::string> errors(samples.size());
        if (workers <= 1) {
            for (std::size_t i : misses) {
                try {
                    rows[i] = compute(samples[i]).values;
                } catch (const Error& e) {
                    errors[i] = e.what();
                    break;
                }
            }
        } else {
            std::atomic<std::size_t> next{0};
            auto work = [&] {
                for (;;) {
                    const std::size_t slot = next.fetch_add(1);
                    if (slot >= misses.size()) return;
                    const std::size_t i = misses[slot];
                    try {
                        rows[i] = compute(samples[i]).values;
                    } catch (const Error& e) {
                        errors[i] = e.what();
                    }
                }
            };
            std::vector<std::thread> pool;
            pool.reserve(static_cast<std::size_t>(workers));
            for (int w = 0; w < workers; ++w) pool.emplace_back(work);
            for (auto& t : pool) t.join();
        }

        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!errors[i].empty()) {
                throw_backend("ExtractionFailed", std::string(stage) + " sample " +
                                                      std::to_string(i) + ": " + errors[i]);
            }
        }

        // Commit in sample order: matrix rows, then cache inserts.
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out.append_row(rows[i]);
            labels.push_back(samples[i].label);
        }
        if (options.cache != nullptr) {
            for (std::size_t i : misses) options.cache->insert(keys[i], rows[i]);
        }
    }
};

}  // namespace

ExtractionOutput extract_all(Backend& backend, const PromptContext& ctx, const TrainSplit& split,
                             const std::vector<LabeledExample>& test,
                             const ExtractionOptions& options) {
    BatchExtractor extractor(backend, ctx, options);
    ExtractionOutput out;
    extractor.run(split.residual, "residual", out.residual_features, out.residual_labels);
    extractor.run(test, "test", out.test_features, out.test_labels);
    if (out.residual_features.rows > 0 && out.test_features.rows > 0 &&
        out.residual_features.cols != out.test_features.cols) {
        throw_backend("DimensionMismatch",
                      "residual features have dim " + std::to_string(out.residual_features.cols) +
                          " but test features have dim " +
                          std::to_string(out.test_features.cols));
    }
    out.backend_calls = extractor.backend_calls.load();
    out.cache_hits = extractor.cache_hits;
    return out;
}

}  // namespace fadsicl
