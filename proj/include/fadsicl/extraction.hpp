#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fadsicl/core.hpp"
#include "fadsicl/feature_cache.hpp"
#include "fadsicl/prompting.hpp"

namespace fadsicl {

struct TokenProb {
    int id = -1;
    std::string token;
    double prob = 0.0;
};

// Next-token distribution over the support a backend returned. Remote top-p
// truncation is allowed, so the raw mass may be < 1; renormalize() rescales
// over the support and records the original mass in `coverage`.
struct VocabDistribution {
    std::vector<TokenProb> entries;
    double coverage = 1.0;

    void renormalize();
    double prob_of_id(int token_id) const;
    // Exact token match, falling back to the single-leading-space variant
    // common in BPE vocabularies.
    double prob_of_token(std::string_view token) const;
    bool truncated() const { return coverage < 1.0 - 1e-6; }
};

// Gold record of the sample being extracted. Remote backends ignore it; the
// mock backend conditions its synthetic output on it (and never parses the
// prompt for labels).
struct SampleInfo {
    std::string text;
    int label = -1;
};

// An LLM behind a wire protocol (or the in-process mock). Implementations
// must be safe for concurrent calls.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string id() const = 0;
    virtual bool supports_hidden() const = 0;
    virtual bool supports_logprobs() const = 0;

    // Final-position representation of the full prompt.
    virtual std::vector<float> hidden_state(const RenderedPrompt& prompt,
                                            const SampleInfo* sample) = 0;

    // Raw next-token distribution at the answer cue.
    virtual VocabDistribution next_token_distribution(const RenderedPrompt& prompt,
                                                      const SampleInfo* sample) = 0;

    // Token id when `token` is a single vocabulary entry, nullopt otherwise.
    virtual std::optional<int> single_token_id(const std::string& token) = 0;

    // Output-embedding access for fuzzy-k cosine ranking; optional.
    virtual bool exposes_token_embeddings() const { return false; }
    virtual std::vector<std::pair<int, std::string>> vocabulary() { return {}; }
    virtual std::vector<float> token_embedding(int token_id);

    virtual std::size_t count_tokens(std::string_view text) const {
        return approx_token_count(text);
    }

    // Upper bound on concurrent in-flight requests extract_all may issue.
    virtual int max_parallel() const { return 1; }
};

// The token coordinates of a fuzzy-k feature: per label, the k tokens most
// similar to its verbalized form; flattened in label order with duplicates
// removed.
struct FuzzyKSelector {
    int k = 1;
    std::vector<std::vector<int>> per_label_ids;  // own token first, then neighbors
    std::vector<int> flat_ids;                    // selector order, deduplicated
    std::vector<std::string> flat_tokens;
    std::string route;  // "cosine" or "avg-prob"

    std::size_t dim() const { return flat_ids.size(); }
};

FeatureVector extract_hidden(Backend& backend, const RenderedPrompt& prompt,
                             const SampleInfo* sample = nullptr,
                             std::optional<std::size_t> expected_dim = std::nullopt);

// Renormalized distribution; throws BackendError("EmptySupport") on an empty
// return.
VocabDistribution extract_distribution(Backend& backend, const RenderedPrompt& prompt,
                                       const SampleInfo* sample = nullptr);

// Ranks neighbors by cosine over the backend's output-embedding rows when it
// exposes them; otherwise falls back to ranking tokens by their average
// probability across `residual_dists`. Ties break by ascending token id and
// the label's own token is always ranked first.
FuzzyKSelector build_fuzzy_selector(Backend& backend, const std::vector<std::string>& verbalizer,
                                    int k,
                                    const std::vector<VocabDistribution>* residual_dists = nullptr);

// Selected tokens' probabilities in selector order; absent tokens give 0.
FeatureVector featurize(const FuzzyKSelector& selector, const VocabDistribution& dist);

struct ExtractionOutput {
    FeatureMatrix residual_features;
    std::vector<int> residual_labels;
    FeatureMatrix test_features;
    std::vector<int> test_labels;
    std::size_t backend_calls = 0;
    std::size_t cache_hits = 0;
};

struct ExtractionOptions {
    FeatureKind kind = FeatureKind::hidden();
    const FuzzyKSelector* selector = nullptr;  // required for FuzzyK
    FeatureCacheFile* cache = nullptr;
    int max_parallel = 1;
};

// One feature vector per residual and test sample, wrapped with the frozen
// demonstration prefix of `ctx`. Cached vectors skip the backend; results are
// committed in sample order regardless of completion order.
ExtractionOutput extract_all(Backend& backend, const PromptContext& ctx, const TrainSplit& split,
                             const std::vector<LabeledExample>& test,
                             const ExtractionOptions& options);

// Cache key: sha256 hex over backend id, template hash, prompt bytes and the
// feature-kind tag.
std::string feature_cache_key(const std::string& backend_id, const std::string& template_hash,
                              std::string_view prompt_text, const std::string& kind_tag);

std::string template_hash(const PromptTemplate& tmpl);

// Kind tag stored in cache keys; fuzzy tags include the selector fingerprint
// so differently built selectors never collide.
std::string kind_cache_tag(const FeatureKind& kind, const FuzzyKSelector* selector);

}  // namespace fadsicl
