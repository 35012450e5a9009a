#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "fadsicl/extraction.hpp"
#include "fadsicl/mock_backend.hpp"

namespace fadsicl {

// How to reach the feature-producing model. `kind` selects the adapter:
//   remote-hidden / remote-embedding -> POST {embeddings_path}
//   remote-logprobs                  -> POST {completions_path}
//   mock                             -> in-process MockBackend
// Auth is a bearer token read from the environment variable named in
// `api_key_env`.
struct BackendDescriptor {
    std::string kind = "mock";
    std::string endpoint;
    std::string model;
    std::string api_key_env;
    double timeout_s = 30.0;
    int max_parallel = 4;
    int retries = 3;
    int retry_base_ms = 500;  // backoff: base, 2x, 4x
    std::string completions_path = "/v1/completions";
    std::string embeddings_path = "/v1/embeddings";
    int top_logprobs = 20;
    nlohmann::json mock = nlohmann::json::object();  // MockBackendConfig overrides

    static BackendDescriptor from_json(const nlohmann::json& j);
    static BackendDescriptor load(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendDescriptor descriptor);
    ~HttpBackend() override;

    std::string id() const override;
    bool supports_hidden() const override;
    bool supports_logprobs() const override;

    std::vector<float> hidden_state(const RenderedPrompt& prompt,
                                    const SampleInfo* sample) override;
    VocabDistribution next_token_distribution(const RenderedPrompt& prompt,
                                              const SampleInfo* sample) override;

    // Remote vocabularies are opaque; ids are interned from observed supports,
    // so a token resolves only after it has appeared in some response.
    std::optional<int> single_token_id(const std::string& token) override;

    int max_parallel() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Builds the backend named by the descriptor. For the mock kind, class count
// and verbalizer are bound from `dataset` unless the descriptor pins them.
std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      const TaskDataset* dataset = nullptr);

}  // namespace fadsicl
