#include "fadsicl/http_backend.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace fadsicl {

BackendDescriptor BackendDescriptor::from_json(const nlohmann::json& j) {
    BackendDescriptor d;
    d.kind = j.value("kind", d.kind);
    d.endpoint = j.value("endpoint", d.endpoint);
    d.model = j.value("model", d.model);
    d.api_key_env = j.value("api_key_env", d.api_key_env);
    d.timeout_s = j.value("timeout_s", d.timeout_s);
    d.max_parallel = j.value("max_parallel", d.max_parallel);
    d.retries = j.value("retries", d.retries);
    d.retry_base_ms = j.value("retry_base_ms", d.retry_base_ms);
    d.completions_path = j.value("completions_path", d.completions_path);
    d.embeddings_path = j.value("embeddings_path", d.embeddings_path);
    d.top_logprobs = j.value("top_logprobs", d.top_logprobs);
    if (j.contains("mock")) d.mock = j.at("mock");
    d.validate();
    return d;
}

BackendDescriptor BackendDescriptor::load(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw_config("BadConfig", "cannot read backend descriptor " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw_config("BadConfig", path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json BackendDescriptor::to_json() const {
    nlohmann::json j{{"kind", kind},
                     {"endpoint", endpoint},
                     {"model", model},
                     {"api_key_env", api_key_env},
                     {"timeout_s", timeout_s},
                     {"max_parallel", max_parallel},
                     {"retries", retries},
                     {"retry_base_ms", retry_base_ms},
                     {"completions_path", completions_path},
                     {"embeddings_path", embeddings_path},
                     {"top_logprobs", top_logprobs}};
    if (!mock.empty()) j["mock"] = mock;
    return j;
}

void BackendDescriptor::validate() const {
    if (kind != "mock" && kind != "remote-hidden" && kind != "remote-logprobs" &&
        kind != "remote-embedding") {
        throw_config("BadConfig", "unknown backend kind '" + kind + "'");
    }
    if (kind != "mock" && endpoint.empty()) {
        throw_config("BadConfig", "remote backend needs an endpoint");
    }
    if (max_parallel < 1) throw_config("BadConfig", "max_parallel must be >= 1");
    if (timeout_s <= 0) throw_config("BadConfig", "timeout must be positive");
}

struct HttpBackend::Impl {
    BackendDescriptor descriptor;
    std::string bearer;
    std::mutex intern_mutex;
    std::unordered_map<std::string, int> interned;
    std::vector<std::string> intern_names;

    explicit Impl(BackendDescriptor d) : descriptor(std::move(d)) {
        if (!descriptor.api_key_env.empty()) {
            if (const char* key = std::getenv(descriptor.api_key_env.c_str())) bearer = key;
        }
    }

    int intern(const std::string& token) {
        std::lock_guard<std::mutex> lock(intern_mutex);
        const auto it = interned.find(token);
        if (it != interned.end()) return it->second;
        const int id = static_cast<int>(intern_names.size());
        interned.emplace(token, id);
        intern_names.push_back(token);
        return id;
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& body) {
        std::string last_error;
        for (int attempt = 0; attempt <= descriptor.retries; ++attempt) {
            if (attempt > 0) {
                const auto delay = std::chrono::milliseconds(
                    static_cast<long>(descriptor.retry_base_ms) * (1L << (attempt - 1)));
                std::this_thread::sleep_for(delay);
            }
            httplib::Client client(descriptor.endpoint);
            client.set_connection_timeout(std::chrono::duration<double>(descriptor.timeout_s));
            client.set_read_timeout(std::chrono::duration<double>(descriptor.timeout_s));
            if (!bearer.empty()) client.set_bearer_token_auth(bearer);

            auto res = client.Post(path, body.dump(), "application/json");
            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw_backend("BackendUnavailable",
                              descriptor.endpoint + path + " returned status " +
                                  std::to_string(res->status) + ": " + res->body);
            }
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("bad json: ") + e.what();
            }
        }
        throw_backend("BackendUnavailable", descriptor.endpoint + path + " failed after " +
                                                std::to_string(descriptor.retries + 1) +
                                                " attempts (" + last_error + ")");
    }
};

HttpBackend::HttpBackend(BackendDescriptor descriptor)
    : impl_(std::make_unique<Impl>(std::move(descriptor))) {
    impl_->descriptor.validate();
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const {
    return impl_->descriptor.kind + ":" + impl_->descriptor.endpoint + ":" +
           impl_->descriptor.model;
}

bool HttpBackend::supports_hidden() const {
    return impl_->descriptor.kind == "remote-hidden" ||
           impl_->descriptor.kind == "remote-embedding";
}

bool HttpBackend::supports_logprobs() const {
    return impl_->descriptor.kind == "remote-logprobs";
}

std::vector<float> HttpBackend::hidden_state(const RenderedPrompt& prompt, const SampleInfo*) {
    const nlohmann::json body{{"model", impl_->descriptor.model}, {"input", prompt.text}};
    const nlohmann::json res = impl_->post(impl_->descriptor.embeddings_path, body);
    try {
        const auto& embedding = res.at("data").at(0).at("embedding");
        std::vector<float> out;
        out.reserve(embedding.size());
        for (const auto& v : embedding) out.push_back(v.get<float>());
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw_backend("BackendUnavailable",
                      std::string("malformed embeddings response: ") + e.what());
    }
}

VocabDistribution HttpBackend::next_token_distribution(const RenderedPrompt& prompt,
                                                       const SampleInfo*) {
    const nlohmann::json body{{"model", impl_->descriptor.model},
                              {"prompt", prompt.text},
                              {"max_tokens", 1},
                              {"temperature", 0.0},
                              {"logprobs", impl_->descriptor.top_logprobs}};
    const nlohmann::json res = impl_->post(impl_->descriptor.completions_path, body);

    nlohmann::json top;
    try {
        const auto& logprobs = res.at("choices").at(0).at("logprobs");
        if (logprobs.contains("top_logprobs") && !logprobs.at("top_logprobs").empty()) {
            top = logprobs.at("top_logprobs").at(0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw_backend("BackendUnavailable",
                      std::string("malformed completions response: ") + e.what());
    }
    if (!top.is_object() || top.empty()) {
        throw_backend("EmptySupport", "backend returned no top_logprobs");
    }

    VocabDistribution dist;
    dist.entries.reserve(top.size());
    for (const auto& [token, logprob] : top.items()) {
        dist.entries.push_back({impl_->intern(token), token, std::exp(logprob.get<double>())});
    }
    return dist;
}

int HttpBackend::max_parallel() const { return impl_->descriptor.max_parallel; }

std::optional<int> HttpBackend::single_token_id(const std::string& token) {
    std::lock_guard<std::mutex> lock(impl_->intern_mutex);
    const auto it = impl_->interned.find(token);
    if (it != impl_->interned.end()) return it->second;
    const auto spaced = impl_->interned.find(" " + token);
    if (spaced != impl_->interned.end()) return spaced->second;
    return std::nullopt;
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      const TaskDataset* dataset) {
    if (descriptor.kind != "mock") return std::make_unique<HttpBackend>(descriptor);

    MockBackendConfig cfg;
    if (dataset != nullptr) {
        cfg.classes = dataset->num_classes();
        cfg.verbalizer = dataset->verbalizer;
    }
    const auto& m = descriptor.mock;
    cfg.classes = m.value("classes", cfg.classes);
    if (m.contains("verbalizer")) {
        cfg.verbalizer = m.at("verbalizer").get<std::vector<std::string>>();
    }
    cfg.hidden_dim = m.value("hidden_dim", cfg.hidden_dim);
    cfg.separation = m.value("separation", cfg.separation);
    cfg.noise_sigma = m.value("noise_sigma", cfg.noise_sigma);
    cfg.low_variance_signal = m.value("low_variance_signal", cfg.low_variance_signal);
    cfg.signal_dims = m.value("signal_dims", cfg.signal_dims);
    cfg.signal_scale = m.value("signal_scale", cfg.signal_scale);
    cfg.background_scale = m.value("background_scale", cfg.background_scale);
    cfg.peak_mass = m.value("peak_mass", cfg.peak_mass);
    cfg.flip_prob = m.value("flip_prob", cfg.flip_prob);
    cfg.neighbors_per_label = m.value("neighbors_per_label", cfg.neighbors_per_label);
    cfg.neighbor_decay = m.value("neighbor_decay", cfg.neighbor_decay);
    cfg.seed = m.value("seed", cfg.seed);
    return std::make_unique<MockBackend>(cfg);
}

}  // namespace fadsicl
