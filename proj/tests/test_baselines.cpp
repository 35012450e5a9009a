#include <doctest.h>

#include <cmath>
#include <map>

#include "fadsicl/baselines.hpp"
#include "fadsicl/modulators.hpp"
#include "fadsicl/rng.hpp"
#include "test_helpers.hpp"

using namespace fadsicl;
using fadsicl::testing::make_dist;

namespace {

// Direct two-term (or n-term) summation oracle over explicit supports with
// the same epsilon smoothing the implementation documents.
double kl_oracle(const std::map<int, double>& p, const std::map<int, double>& q) {
    std::map<int, std::pair<double, double>> joint;
    for (const auto& [id, v] : p) joint[id].first = v;
    for (const auto& [id, v] : q) joint[id].second = v;
    double psum = 0.0, qsum = 0.0;
    for (auto& [id, pq] : joint) {
        pq.first += 1e-12;
        pq.second += 1e-12;
        psum += pq.first;
        qsum += pq.second;
    }
    double kl = 0.0;
    for (const auto& [id, pq] : joint) {
        kl += (pq.first / psum) * std::log((pq.first / psum) / (pq.second / qsum));
    }
    return kl;
}

VocabDistribution random_dist(Rng& rng, int support) {
    VocabDistribution d;
    double sum = 0.0;
    for (int i = 0; i < support; ++i) {
        const double w = rng.uniform() + 1e-6;
        d.entries.push_back({i, "tok" + std::to_string(i), w});
        sum += w;
    }
    for (auto& e : d.entries) e.prob /= sum;
    return d;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("icl restricts and renormalizes over verbalizer tokens") {
    const auto dist = make_dist(
        {{0, "positive", 0.30}, {1, "negative", 0.10}, {2, "the", 0.40}, {3, "a", 0.20}});
    const auto proba = icl_predict(dist, {"positive", "negative"});
    CHECK(proba[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(proba[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("icl accepts the leading-space token variant") {
    const auto dist = make_dist({{0, " positive", 0.2}, {1, " negative", 0.6}, {2, "x", 0.2}});
    const auto proba = icl_predict(dist, {"positive", "negative"});
    CHECK(proba[1] == doctest::Approx(0.75));
}

TEST_CASE("all label tokens absent is an error") {
    const auto dist = make_dist({{0, "the", 0.5}, {1, "a", 0.5}});
    CHECK_THROWS_WITH_AS(icl_predict(dist, {"positive", "negative"}),
                         doctest::Contains("AllLabelsUnsupported"), Error);
}

TEST_CASE("equal label probabilities predict label 0 by the tie rule") {
    const auto dist = make_dist({{0, "positive", 0.3}, {1, "negative", 0.3}, {2, "x", 0.4}});
    const auto proba = icl_predict(dist, {"positive", "negative"});
    CHECK(argmax_label(proba) == 0);
}

TEST_CASE("kl of identical distributions is zero") {
    const auto p = make_dist({{0, "a", 0.5}, {1, "b", 0.5}});
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kl matches the summation oracle on the worked example") {
    const auto p = make_dist({{0, "a", 0.5}, {1, "b", 0.5}});
    const auto q = make_dist({{0, "a", 0.25}, {1, "b", 0.75}});
    const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(expected == doctest::Approx(0.143841).epsilon(1e-5));
    CHECK(kl_divergence(p, q) == doctest::Approx(expected).epsilon(1e-9));
    // Asymmetry of the same pair, both directions against the oracle.
    CHECK(kl_divergence(p, q) != doctest::Approx(kl_divergence(q, p)).epsilon(1e-9));
    CHECK(kl_divergence(q, p) ==
          doctest::Approx(kl_oracle({{0, 0.25}, {1, 0.75}}, {{0, 0.5}, {1, 0.5}})).epsilon(1e-9));
}

TEST_CASE("kl is non-negative on random pairs and zero only for equal supports") {
    Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        const int support = 2 + static_cast<int>(rng.uniform_below(12));
        const auto p = random_dist(rng, support);
        const auto q = random_dist(rng, support);
        const double kl = kl_divergence(p, q);
        CHECK(kl >= 0.0);
        std::map<int, double> pm, qm;
        for (const auto& e : p.entries) pm[e.id] = e.prob;
        for (const auto& e : q.entries) qm[e.id] = e.prob;
        CHECK(kl == doctest::Approx(kl_oracle(pm, qm)).epsilon(1e-9));
    }
}

TEST_CASE("kl handles disjoint supports after smoothing") {
    const auto p = make_dist({{0, "a", 1.0}});
    const auto q = make_dist({{1, "b", 1.0}});
    const double kl = kl_divergence(p, q);
    CHECK(std::isfinite(kl));
    CHECK(kl > 0.0);
}

TEST_CASE("auto k is the square-root heuristic") {
    CHECK(auto_k(62) == 8);
    CHECK(auto_k(64) == 8);
    CHECK(auto_k(65) == 9);
    CHECK(auto_k(1) == 1);
}

TEST_CASE("knn-prompting with k=1 copies the nearest label") {
    const auto test = make_dist({{0, "a", 0.9}, {1, "b", 0.1}});
    const std::vector<VocabDistribution> residual{
        make_dist({{0, "a", 0.85}, {1, "b", 0.15}}),  // close, label 1
        make_dist({{0, "a", 0.1}, {1, "b", 0.9}}),    // far, label 0
    };
    NeighborVoteConfig cfg;
    cfg.k = 1;
    CHECK(knn_prompting_predict(test, residual, {1, 0}, cfg, 2) == 1);
}

TEST_CASE("knn-prompting majority vote") {
    const auto test = make_dist({{0, "a", 0.5}, {1, "b", 0.5}});
    const std::vector<VocabDistribution> residual{
        make_dist({{0, "a", 0.55}, {1, "b", 0.45}}),
        make_dist({{0, "a", 0.6}, {1, "b", 0.4}}),
        make_dist({{0, "a", 0.4}, {1, "b", 0.6}}),
    };
    NeighborVoteConfig cfg;
    cfg.k = 3;
    // Labels A, A, B among the nearest three.
    CHECK(knn_prompting_predict(test, residual, {0, 0, 1}, cfg, 2) == 0);
}

TEST_CASE("knn-prompting vote ties resolve by summed distance") {
    const auto test = make_dist({{0, "a", 0.9}, {1, "b", 0.1}});
    const std::vector<VocabDistribution> residual{
        make_dist({{0, "a", 0.88}, {1, "b", 0.12}}),  // label 1: nearer
        make_dist({{0, "a", 0.5}, {1, "b", 0.5}}),    // label 0: farther
        make_dist({{0, "a", 0.05}, {1, "b", 0.95}}),  // label 0: far
    };
    NeighborVoteConfig cfg;
    cfg.k = 2;
    // Exhaustive-scan oracle: neighbors are residual[0] (label 1) and
    // residual[1] (label 0), one vote each; label 1 has the smaller summed
    // distance and must win despite the larger label id.
    const double d0 = kl_divergence(test, residual[0]);
    const double d1 = kl_divergence(test, residual[1]);
    REQUIRE(d0 < d1);
    CHECK(knn_prompting_predict(test, residual, {1, 0, 0}, cfg, 2) == 1);
}

TEST_CASE("vote is invariant under positive distance scaling") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> distances(10);
        std::vector<int> labels(10);
        for (int i = 0; i < 10; ++i) {
            distances[i] = rng.uniform() * 5.0;
            labels[i] = static_cast<int>(rng.uniform_below(3));
        }
        const int base = nearest_vote(distances, labels, 5, 3);
        auto scaled = distances;
        for (auto& d : scaled) d *= 17.5;
        CHECK(nearest_vote(scaled, labels, 5, 3) == base);
    }
}

TEST_CASE("icl argmax is invariant under renormalization of the raw distribution") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        auto dist = random_dist(rng, 6);
        dist.entries[0].token = "positive";
        dist.entries[1].token = "negative";
        const auto before = icl_predict(dist, {"positive", "negative"});
        auto scaled = dist;
        for (auto& e : scaled.entries) e.prob *= 0.4;  // truncated support
        scaled.renormalize();
        const auto after = icl_predict(scaled, {"positive", "negative"});
        CHECK(argmax_label(before) == argmax_label(after));
    }
}

TEST_CASE("knn-prompt at lambda=1 equals icl exactly") {
    const auto test = make_dist({{0, "positive", 0.4}, {1, "negative", 0.1}, {2, "x", 0.5}});
    const std::vector<VocabDistribution> residual{
        make_dist({{0, "positive", 0.5}, {1, "negative", 0.5}}),
        make_dist({{0, "positive", 0.2}, {1, "negative", 0.8}}),
    };
    NeighborVoteConfig cfg;
    cfg.k = 2;
    cfg.lambda = 1.0;
    const auto icl = icl_predict(test, {"positive", "negative"});
    const auto mix = knn_prompt_predict(test, residual, {0, 1}, {"positive", "negative"}, cfg);
    for (std::size_t c = 0; c < icl.size(); ++c) {
        CHECK(mix[c] == doctest::Approx(icl[c]).epsilon(1e-12));
    }
}

TEST_CASE("knn-prompt at lambda=0 with k=1 is one-hot on the nearest label") {
    const auto test = make_dist({{0, "positive", 0.9}, {1, "negative", 0.1}});
    const std::vector<VocabDistribution> residual{
        make_dist({{0, "positive", 0.88}, {1, "negative", 0.12}}),
        make_dist({{0, "positive", 0.1}, {1, "negative", 0.9}}),
    };
    NeighborVoteConfig cfg;
    cfg.k = 1;
    cfg.lambda = 0.0;
    const auto mix = knn_prompt_predict(test, residual, {1, 0}, {"positive", "negative"}, cfg);
    CHECK(mix[1] == doctest::Approx(1.0));
    CHECK(mix[0] == doctest::Approx(0.0));
}

TEST_CASE("knn-prompt interpolation arithmetic and tie rule") {
    // p_icl = [0.8, 0.2]; construct residuals so p_knn = [0.2, 0.8] at
    // lambda=0.5: mix = [0.5, 0.5] -> label 0.
    const std::vector<double> p_icl{0.8, 0.2};
    const std::vector<double> p_knn{0.2, 0.8};
    std::vector<double> mix(2);
    for (int c = 0; c < 2; ++c) mix[c] = 0.5 * p_icl[c] + 0.5 * p_knn[c];
    CHECK(mix[0] == doctest::Approx(0.5));
    CHECK(argmax_label(mix) == 0);
}

TEST_CASE("knn-prompt is continuous in lambda") {
    Rng rng(321);
    auto test = random_dist(rng, 5);
    test.entries[0].token = "positive";
    test.entries[1].token = "negative";
    std::vector<VocabDistribution> residual;
    for (int i = 0; i < 6; ++i) residual.push_back(random_dist(rng, 5));
    const std::vector<int> labels{0, 1, 0, 1, 0, 1};
    NeighborVoteConfig cfg;
    cfg.k = 3;
    for (double lambda : {0.1, 0.35, 0.62, 0.9}) {
        cfg.lambda = lambda;
        const auto mid = knn_prompt_predict(test, residual, labels, {"positive", "negative"}, cfg);
        cfg.lambda = lambda + 1e-7;
        const auto nudged =
            knn_prompt_predict(test, residual, labels, {"positive", "negative"}, cfg);
        for (std::size_t c = 0; c < mid.size(); ++c) {
            CHECK(std::abs(mid[c] - nudged[c]) < 1e-6);
        }
    }
}

TEST_CASE("insufficient residual is rejected") {
    const auto test = make_dist({{0, "a", 1.0}});
    const std::vector<VocabDistribution> residual{make_dist({{0, "a", 1.0}})};
    NeighborVoteConfig cfg;
    cfg.k = 5;
    CHECK_THROWS_WITH_AS(knn_prompting_predict(test, residual, {0}, cfg, 2),
                         doctest::Contains("InsufficientResidual"), Error);
}

TEST_CASE("symmetric divergence is symmetric") {
    const auto p = make_dist({{0, "a", 0.7}, {1, "b", 0.3}});
    const auto q = make_dist({{0, "a", 0.2}, {1, "b", 0.8}});
    NeighborVoteConfig cfg;
    cfg.symmetric_kl = true;
    CHECK(divergence(p, q, cfg) == doctest::Approx(divergence(q, p, cfg)).epsilon(1e-12));
    cfg.symmetric_kl = false;
    cfg.direction = KlDirection::TrainGivenTest;
    CHECK(divergence(p, q, cfg) == doctest::Approx(kl_divergence(q, p)).epsilon(1e-12));
}

}  // TEST_SUITE
