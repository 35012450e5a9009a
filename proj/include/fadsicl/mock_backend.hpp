#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fadsicl/extraction.hpp"

namespace fadsicl {

// Synthetic in-process backend. Hidden states are class-conditioned Gaussians
// (per-class mean drawn on the unit sphere, scaled by `separation`, plus
// isotropic noise); distributions are seeded peaked categoricals over the
// verbalizer tokens and a bank of synthetic neighbor tokens. The true label
// is read from the SampleInfo record, never parsed out of the prompt, and
// every draw is a pure function of (seed, sample text), so repeated calls are
// identical and thread-safe.
struct MockBackendConfig {
    int classes = 2;
    std::vector<std::string> verbalizer;  // token per label id

    // Hidden-state generator.
    int hidden_dim = 64;
    double separation = 6.0;
    double noise_sigma = 1.0;

    // Anisotropic mode: class signal lives in a few low-variance dimensions
    // while the rest is large class-independent background noise.
    bool low_variance_signal = false;
    int signal_dims = 4;
    double signal_scale = 0.5;
    double background_scale = 6.0;

    // Distribution generator.
    double peak_mass = 0.6;      // mass on the peak label's token
    double flip_prob = 0.0;      // chance the peak lands on a wrong label
    int neighbors_per_label = 32;
    double neighbor_decay = 0.7;

    std::uint64_t seed = 0;
};

class MockBackend : public Backend {
public:
    explicit MockBackend(MockBackendConfig config);

    std::string id() const override;
    bool supports_hidden() const override { return true; }
    bool supports_logprobs() const override { return true; }

    std::vector<float> hidden_state(const RenderedPrompt& prompt,
                                    const SampleInfo* sample) override;
    VocabDistribution next_token_distribution(const RenderedPrompt& prompt,
                                              const SampleInfo* sample) override;

    std::optional<int> single_token_id(const std::string& token) override;

    bool exposes_token_embeddings() const override { return true; }
    std::vector<std::pair<int, std::string>> vocabulary() override;
    std::vector<float> token_embedding(int token_id) override;

    const MockBackendConfig& config() const { return config_; }

    // The generative model behind hidden_state (isotropic mode); lets
    // known-model oracles compute Bayes-optimal predictions.
    const std::vector<double>& class_mean(int label) const { return class_means_[label]; }

private:
    int resolve_label(const SampleInfo* sample, std::string_view text) const;

    MockBackendConfig config_;
    std::vector<std::string> tokens_;                    // id -> token string
    std::unordered_map<std::string, int> token_ids_;
    std::vector<int> token_label_;                       // owning label per token
    std::vector<std::vector<double>> class_means_;       // isotropic mode
    std::vector<std::vector<double>> signal_means_;      // low-variance mode
    std::vector<std::vector<float>> embeddings_;         // per token id
};

}  // namespace fadsicl
