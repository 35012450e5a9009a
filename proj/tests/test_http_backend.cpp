#include <doctest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "fadsicl/baselines.hpp"
#include "fadsicl/http_backend.hpp"
#include "fadsicl/modulators.hpp"
#include "fadsicl/pipeline.hpp"
#include "fadsicl/rng.hpp"

using namespace fadsicl;

namespace {

// In-process OpenAI-compatible stub. Each test configures handlers, then
// talks to it through HttpBackend.
class StubServer {
public:
    StubServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    httplib::Server& server() { return server_; }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

    BackendDescriptor descriptor(const std::string& kind) const {
        BackendDescriptor d;
        d.kind = kind;
        d.endpoint = endpoint();
        d.model = "stub-model";
        d.retries = 3;
        d.retry_base_ms = 5;  // keep test backoff short
        d.timeout_s = 5.0;
        return d;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

RenderedPrompt prompt(const std::string& text) {
    RenderedPrompt p;
    p.text = text;
    p.answer_cue_offset = text.size();
    return p;
}

}  // namespace

TEST_SUITE("http-backend") {

TEST_CASE("completions top_logprobs become a renormalized distribution") {
    StubServer stub;
    stub.server().Post("/v1/completions", [](const httplib::Request& req,
                                             httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("model") == "stub-model");
        CHECK(body.at("max_tokens") == 1);
        const nlohmann::json reply{
            {"choices",
             {{{"text", " positive"},
               {"logprobs",
                {{"top_logprobs",
                  {{{" positive", std::log(0.6)},
                    {" negative", std::log(0.3)},
                    {" the", std::log(0.05)}}}}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });

    HttpBackend backend(stub.descriptor("remote-logprobs"));
    const auto dist = extract_distribution(backend, prompt("Review: good\nSentiment:"));
    CHECK(dist.entries.size() == 3);
    CHECK(dist.coverage == doctest::Approx(0.95).epsilon(1e-9));
    CHECK(dist.truncated());
    CHECK(dist.prob_of_token("positive") == doctest::Approx(0.6 / 0.95).epsilon(1e-9));

    const auto proba = icl_predict(dist, {"negative", "positive"});
    CHECK(argmax_label(proba) == 1);

    // Token ids are interned from observed supports.
    CHECK(backend.single_token_id("positive").has_value());
    CHECK(!backend.single_token_id("unseen-token").has_value());
}

TEST_CASE("embeddings endpoint yields hidden-state features") {
    StubServer stub;
    std::atomic<int> hits{0};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request& req,
                                             httplib::Response& res) {
        hits.fetch_add(1);
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("input").get<std::string>().find("Review:") == 0);
        const nlohmann::json reply{{"data", {{{"embedding", {0.1, 0.2, 0.3, 0.4}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    HttpBackend backend(stub.descriptor("remote-embedding"));
    const auto feature = extract_hidden(backend, prompt("Review: fine\nSentiment:"));
    CHECK(feature.dim() == 4);
    CHECK(feature.values[2] == doctest::Approx(0.3f));

    // Linear call complexity: one server hit per extracted sample.
    for (int i = 1; i < 5; ++i) {
        extract_hidden(backend, prompt("Review: sample " + std::to_string(i) + "\nSentiment:"));
    }
    CHECK(hits.load() == 5);
}

TEST_CASE("transient server errors are retried with backoff") {
    StubServer stub;
    std::atomic<int> hits{0};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        if (hits.fetch_add(1) < 2) {
            res.status = 503;
            return;
        }
        const nlohmann::json reply{{"data", {{{"embedding", {1.0, 2.0}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    HttpBackend backend(stub.descriptor("remote-embedding"));
    const auto feature = extract_hidden(backend, prompt("x"));
    CHECK(feature.dim() == 2);
    CHECK(hits.load() == 3);
}

TEST_CASE("persistent failures surface as BackendUnavailable after retries") {
    StubServer stub;
    std::atomic<int> hits{0};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        hits.fetch_add(1);
        res.status = 500;
    });
    HttpBackend backend(stub.descriptor("remote-embedding"));
    CHECK_THROWS_WITH_AS(extract_hidden(backend, prompt("x")),
                         doctest::Contains("BackendUnavailable"), Error);
    CHECK(hits.load() == 4);  // initial attempt + 3 retries
}

TEST_CASE("missing logprobs report EmptySupport") {
    StubServer stub;
    stub.server().Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
        const nlohmann::json reply{
            {"choices", {{{"text", "!"}, {"logprobs", {{"top_logprobs", nlohmann::json::array()}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    HttpBackend backend(stub.descriptor("remote-logprobs"));
    CHECK_THROWS_WITH_AS(extract_distribution(backend, prompt("x")),
                         doctest::Contains("EmptySupport"), Error);
}

TEST_CASE("a fixed small support is flagged as truncated") {
    StubServer stub;
    stub.server().Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
        const nlohmann::json reply{
            {"choices",
             {{{"text", " a"},
               {"logprobs",
                {{"top_logprobs", {{{" a", std::log(0.2)}, {" b", std::log(0.15)}}}}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    HttpBackend backend(stub.descriptor("remote-logprobs"));
    const auto dist = extract_distribution(backend, prompt("x"));
    CHECK(dist.truncated());
    CHECK(dist.coverage == doctest::Approx(0.35).epsilon(1e-9));
    // All verbalizer tokens absent from the tiny support is an error.
    CHECK_THROWS_WITH_AS(icl_predict(dist, {"positive", "negative"}),
                         doctest::Contains("AllLabelsUnsupported"), Error);
}

TEST_CASE("bearer auth comes from the named environment variable") {
    StubServer stub;
    std::atomic<bool> saw_auth{false};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request& req,
                                             httplib::Response& res) {
        saw_auth = req.get_header_value("Authorization") == "Bearer sekrit";
        const nlohmann::json reply{{"data", {{{"embedding", {1.0}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    ::setenv("FADSICL_TEST_KEY", "sekrit", 1);
    auto descriptor = stub.descriptor("remote-embedding");
    descriptor.api_key_env = "FADSICL_TEST_KEY";
    HttpBackend backend(descriptor);
    extract_hidden(backend, prompt("x"));
    CHECK(saw_auth.load());
    ::unsetenv("FADSICL_TEST_KEY");
}

TEST_CASE("4xx responses fail without retries") {
    StubServer stub;
    std::atomic<int> hits{0};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        hits.fetch_add(1);
        res.status = 401;
        res.set_content("{\"error\": \"bad key\"}", "application/json");
    });
    HttpBackend backend(stub.descriptor("remote-embedding"));
    CHECK_THROWS_WITH_AS(extract_hidden(backend, prompt("x")),
                         doctest::Contains("BackendUnavailable"), Error);
    CHECK(hits.load() == 1);
}

TEST_CASE("the fads pipeline runs end to end over a remote embedding server") {
    StubServer stub;
    // Deterministic per-prompt embeddings: a few hash-derived coordinates, so
    // repeated extraction round-trips through the cache exactly.
    stub.server().Post("/v1/embeddings", [](const httplib::Request& req,
                                            httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const auto& input = body.at("input").get_ref<const std::string&>();
        // Only the query block matters; the shared demonstration prefix
        // mentions every class.
        const auto sep = input.rfind("\n\n");
        const std::string query = sep == std::string::npos ? input : input.substr(sep);
        const auto h = fnv1a64(query);
        std::vector<double> embedding(8);
        for (int d = 0; d < 8; ++d) {
            embedding[d] = static_cast<double>((h >> (8 * (d % 8))) & 0xff) / 255.0;
        }
        // A crude class signal: test fixtures put the label digit in the text.
        if (query.find("class 1") != std::string::npos) embedding[0] += 4.0;
        res.set_content(nlohmann::json{{"data", {{{"embedding", embedding}}}}}.dump(),
                        "application/json");
    });

    TaskDataset ds;
    ds.name = "remote";
    ds.classes = {"no", "yes"};
    ds.verbalizer = {"no", "yes"};
    ds.prompt_template.example_pattern = "Input: {input}\nType: {output}";
    ds.prompt_template.query_pattern = "Input: {input}\nType:";
    for (int i = 0; i < 12; ++i) {
        for (int c = 0; c < 2; ++c) {
            ds.train.push_back({"train " + std::to_string(i) + " class " + std::to_string(c), c});
        }
    }
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 2; ++c) {
            ds.test.push_back({"test " + std::to_string(i) + " class " + std::to_string(c), c});
        }
    }

    HttpBackend backend(stub.descriptor("remote-embedding"));
    ExperimentConfig cfg;
    cfg.method = Method::Fads;
    cfg.shots_per_class = 6;

    const auto dir = std::filesystem::temp_directory_path() /
                     ("fadsicl-http-e2e-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    {
        FeatureCacheStore store(dir);
        const auto out = run_fads(ds, cfg, backend, &store, 0);
        CHECK(out.accuracy() == 1.0);
        CHECK(out.metadata.at("backend_calls").get<std::size_t>() == 10 + 8);
    }
    {
        FeatureCacheStore store(dir);
        const auto warm = run_fads(ds, cfg, backend, &store, 0);
        CHECK(warm.metadata.at("backend_calls").get<std::size_t>() == 0);
        CHECK(warm.accuracy() == 1.0);
    }
    std::filesystem::remove_all(dir);

    // Embedding-only backends cannot score vanilla ICL; that is a config
    // error, not a transport failure.
    ExperimentConfig icl_cfg;
    icl_cfg.method = Method::VanillaIcl;
    icl_cfg.shots_per_class = 6;
    CHECK_THROWS_WITH_AS(run_baseline(ds, icl_cfg, backend, nullptr, 0),
                         doctest::Contains("BadConfig"), Error);
}

TEST_CASE("descriptor json round trip and validation") {
    BackendDescriptor d;
    d.kind = "remote-logprobs";
    d.endpoint = "http://localhost:9999";
    d.model = "m";
    d.top_logprobs = 50;
    const auto parsed = BackendDescriptor::from_json(d.to_json());
    CHECK(parsed.kind == d.kind);
    CHECK(parsed.endpoint == d.endpoint);
    CHECK(parsed.top_logprobs == 50);

    nlohmann::json bad{{"kind", "banana"}};
    CHECK_THROWS_AS(BackendDescriptor::from_json(bad), Error);
    nlohmann::json no_endpoint{{"kind", "remote-hidden"}};
    CHECK_THROWS_AS(BackendDescriptor::from_json(no_endpoint), Error);
}

TEST_CASE("wrong capability is a config error") {
    StubServer stub;
    HttpBackend logprobs_backend(stub.descriptor("remote-logprobs"));
    CHECK_THROWS_WITH_AS(extract_hidden(logprobs_backend, prompt("x")),
                         doctest::Contains("BadConfig"), Error);
    HttpBackend embedding_backend(stub.descriptor("remote-embedding"));
    CHECK_THROWS_WITH_AS(extract_distribution(embedding_backend, prompt("x")),
                         doctest::Contains("BadConfig"), Error);
}

}  // TEST_SUITE
