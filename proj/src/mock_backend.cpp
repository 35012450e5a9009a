#include "fadsicl/mock_backend.hpp"

#include <cmath>

#include "fadsicl/encoding.hpp"
#include "fadsicl/rng.hpp"

namespace fadsicl {

namespace {

std::vector<double> unit_vector(Rng& rng, int dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm <= 0.0) norm = 1.0;
    for (auto& x : v) x /= norm;
    return v;
}

}  // namespace

MockBackend::MockBackend(MockBackendConfig config) : config_(std::move(config)) {
    if (config_.classes < 2) throw_config("BadConfig", "mock backend needs >= 2 classes");
    if (config_.verbalizer.empty()) {
        for (int c = 0; c < config_.classes; ++c) {
            config_.verbalizer.push_back("label" + std::to_string(c));
        }
    }
    if (static_cast<int>(config_.verbalizer.size()) != config_.classes) {
        throw_config("BadConfig", "mock verbalizer size must equal class count");
    }

    // Vocabulary: label tokens first (id = label), then the neighbor banks.
    for (int c = 0; c < config_.classes; ++c) {
        token_ids_.emplace(config_.verbalizer[c], static_cast<int>(tokens_.size()));
        tokens_.push_back(config_.verbalizer[c]);
        token_label_.push_back(c);
    }
    for (int c = 0; c < config_.classes; ++c) {
        for (int j = 1; j <= config_.neighbors_per_label; ++j) {
            std::string token = config_.verbalizer[c] + "~" + std::to_string(j);
            token_ids_.emplace(token, static_cast<int>(tokens_.size()));
            tokens_.push_back(std::move(token));
            token_label_.push_back(c);
        }
    }

    for (int c = 0; c < config_.classes; ++c) {
        auto mean_rng = Rng::stream(config_.seed, "mock-class-mean", static_cast<std::uint64_t>(c));
        auto mean = unit_vector(mean_rng, config_.hidden_dim);
        for (auto& x : mean) x *= config_.separation * config_.noise_sigma;
        class_means_.push_back(std::move(mean));

        auto sig_rng = Rng::stream(config_.seed, "mock-signal-mean", static_cast<std::uint64_t>(c));
        auto sig = unit_vector(sig_rng, config_.signal_dims);
        for (auto& x : sig) x *= config_.signal_scale;
        signal_means_.push_back(std::move(sig));
    }

    // Token output embeddings: the label token anchors a direction; neighbor
    // j drifts away so cosine similarity decreases strictly with j.
    const int emb_dim = 8;
    embeddings_.resize(tokens_.size());
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
        const int label = token_label_[id];
        auto anchor_rng = Rng::stream(config_.seed, "mock-token-anchor",
                                      static_cast<std::uint64_t>(label));
        const auto anchor = unit_vector(anchor_rng, emb_dim);
        auto drift_rng = Rng::stream(config_.seed, "mock-token-drift",
                                     static_cast<std::uint64_t>(label));
        const auto drift = unit_vector(drift_rng, emb_dim);
        const int rank = static_cast<int>(id) < config_.classes
                             ? 0
                             : (static_cast<int>(id) - config_.classes) %
                                       config_.neighbors_per_label +
                                   1;
        std::vector<float> e(emb_dim);
        for (int d = 0; d < emb_dim; ++d) {
            e[d] = static_cast<float>(anchor[d] + 0.15 * rank * drift[d]);
        }
        embeddings_[id] = std::move(e);
    }
}

std::string MockBackend::id() const {
    // Every generative knob participates: the id keys the feature cache.
    std::string knobs;
    for (double v : {static_cast<double>(config_.classes),
                     static_cast<double>(config_.hidden_dim), config_.separation,
                     config_.noise_sigma, config_.low_variance_signal ? 1.0 : 0.0,
                     static_cast<double>(config_.signal_dims), config_.signal_scale,
                     config_.background_scale, config_.peak_mass, config_.flip_prob,
                     static_cast<double>(config_.neighbors_per_label), config_.neighbor_decay,
                     static_cast<double>(config_.seed)}) {
        knobs += std::to_string(v);
        knobs += ',';
    }
    for (const auto& token : config_.verbalizer) {
        knobs += token;
        knobs += ',';
    }
    return "mock:" + sha256_hex(knobs).substr(0, 12);
}

int MockBackend::resolve_label(const SampleInfo* sample, std::string_view text) const {
    if (sample != nullptr && sample->label >= 0 && sample->label < config_.classes) {
        return sample->label;
    }
    // Unlabeled input (e.g. scoring a raw text file): derive a stable pseudo
    // label from the text so the mock stays deterministic.
    return static_cast<int>(fnv1a64(text) % static_cast<std::uint64_t>(config_.classes));
}

std::vector<float> MockBackend::hidden_state(const RenderedPrompt&, const SampleInfo* sample) {
    const std::string_view text = sample != nullptr ? std::string_view(sample->text) : "";
    const int label = resolve_label(sample, text);
    auto rng = Rng::stream(config_.seed, "mock-feature", fnv1a64(text));

    std::vector<float> out(config_.hidden_dim);
    if (config_.low_variance_signal) {
        const auto& sig = signal_means_[label];
        for (int d = 0; d < config_.hidden_dim; ++d) {
            if (d < config_.signal_dims) {
                out[d] = static_cast<float>(sig[d] + 0.1 * config_.signal_scale * rng.normal());
            } else {
                out[d] = static_cast<float>(config_.background_scale * rng.normal());
            }
        }
    } else {
        const auto& mean = class_means_[label];
        for (int d = 0; d < config_.hidden_dim; ++d) {
            out[d] = static_cast<float>(mean[d] + config_.noise_sigma * rng.normal());
        }
    }
    return out;
}

VocabDistribution MockBackend::next_token_distribution(const RenderedPrompt&,
                                                       const SampleInfo* sample) {
    const std::string_view text = sample != nullptr ? std::string_view(sample->text) : "";
    const int true_label = resolve_label(sample, text);
    auto rng = Rng::stream(config_.seed, "mock-dist", fnv1a64(text));

    int peak = true_label;
    if (config_.flip_prob > 0.0 && rng.uniform() < config_.flip_prob) {
        const int other = static_cast<int>(rng.uniform_below(
            static_cast<std::uint64_t>(config_.classes - 1)));
        peak = other >= true_label ? other + 1 : other;
    }

    std::vector<double> weights(tokens_.size(), 0.0);
    for (int c = 0; c < config_.classes; ++c) {
        const double base = c == peak ? config_.peak_mass * (0.9 + 0.2 * rng.uniform())
                                      : (1.0 - config_.peak_mass) * (0.2 + 0.8 * rng.uniform()) /
                                            (config_.classes - 1);
        weights[c] = base;
        // Neighbor tokens carry geometrically diluted, jittered mass of their
        // label, so they are correlated with it without being redundant.
        double w = base;
        for (int j = 1; j <= config_.neighbors_per_label; ++j) {
            w *= config_.neighbor_decay;
            weights[config_.classes + c * config_.neighbors_per_label + (j - 1)] =
                w * (0.5 + rng.uniform());
        }
    }

    double sum = 0.0;
    for (double w : weights) sum += w;
    VocabDistribution dist;
    dist.entries.reserve(tokens_.size());
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
        dist.entries.push_back({static_cast<int>(id), tokens_[id], weights[id] / sum});
    }
    return dist;
}

std::optional<int> MockBackend::single_token_id(const std::string& token) {
    const auto it = token_ids_.find(token);
    if (it == token_ids_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::pair<int, std::string>> MockBackend::vocabulary() {
    std::vector<std::pair<int, std::string>> out;
    out.reserve(tokens_.size());
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
        out.emplace_back(static_cast<int>(id), tokens_[id]);
    }
    return out;
}

std::vector<float> MockBackend::token_embedding(int token_id) {
    if (token_id < 0 || static_cast<std::size_t>(token_id) >= embeddings_.size()) {
        throw_backend("SimilarityUnavailable", "unknown token id " + std::to_string(token_id));
    }
    return embeddings_[token_id];
}

}  // namespace fadsicl
