#include "fadsicl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fadsicl {

std::vector<double> icl_predict(const VocabDistribution& dist,
                                const std::vector<std::string>& verbalizer) {
    std::vector<double> proba(verbalizer.size(), 0.0);
    double sum = 0.0;
    for (std::size_t c = 0; c < verbalizer.size(); ++c) {
        proba[c] = dist.prob_of_token(verbalizer[c]);
        sum += proba[c];
    }
    if (sum <= 0.0) {
        throw_backend("AllLabelsUnsupported",
                      "no verbalizer token appears in the returned support");
    }
    for (auto& p : proba) p /= sum;
    return proba;
}

namespace {

constexpr double kSmoothing = 1e-12;

// Union support of both distributions as (p_i, q_i) pairs.
std::vector<std::pair<double, double>> union_support(const VocabDistribution& p,
                                                     const VocabDistribution& q) {
    std::map<int, std::pair<double, double>> merged;
    for (const auto& e : p.entries) merged[e.id].first += e.prob;
    for (const auto& e : q.entries) merged[e.id].second += e.prob;
    std::vector<std::pair<double, double>> out;
    out.reserve(merged.size());
    for (const auto& [id, pq] : merged) out.push_back(pq);
    return out;
}

}  // namespace

double kl_divergence(const VocabDistribution& p, const VocabDistribution& q) {
    auto support = union_support(p, q);
    double psum = 0.0, qsum = 0.0;
    for (auto& [pi, qi] : support) {
        pi += kSmoothing;
        qi += kSmoothing;
        psum += pi;
        qsum += qi;
    }
    double kl = 0.0;
    for (const auto& [pi, qi] : support) {
        const double pn = pi / psum;
        const double qn = qi / qsum;
        kl += pn * std::log(pn / qn);
    }
    return kl;
}

double divergence(const VocabDistribution& test_dist, const VocabDistribution& train_dist,
                  const NeighborVoteConfig& cfg) {
    if (cfg.symmetric_kl) {
        return kl_divergence(test_dist, train_dist) + kl_divergence(train_dist, test_dist);
    }
    if (cfg.direction == KlDirection::TrainGivenTest) {
        return kl_divergence(train_dist, test_dist);
    }
    return kl_divergence(test_dist, train_dist);
}

int auto_k(std::size_t residual_count) {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(residual_count))));
}

namespace {

// The k smallest distances as (distance, index), equal distances resolved by
// the earlier index.
std::vector<std::pair<double, std::size_t>> k_nearest(const std::vector<double>& distances,
                                                      int k) {
    std::vector<std::pair<double, std::size_t>> order(distances.size());
    for (std::size_t i = 0; i < distances.size(); ++i) order[i] = {distances[i], i};
    const auto take = static_cast<std::ptrdiff_t>(k);
    std::partial_sort(order.begin(), order.begin() + take, order.end());
    order.resize(static_cast<std::size_t>(k));
    return order;
}

int resolve_k(const NeighborVoteConfig& cfg, std::size_t residual_count) {
    const int k = cfg.k.value_or(auto_k(residual_count));
    if (k < 1) throw_config("BadConfig", "neighbor vote needs k >= 1");
    if (static_cast<std::size_t>(k) > residual_count) {
        throw_data("InsufficientResidual", "k=" + std::to_string(k) + " exceeds |R|=" +
                                               std::to_string(residual_count));
    }
    return k;
}

}  // namespace

int nearest_vote(const std::vector<double>& distances, const std::vector<int>& labels, int k,
                 int num_classes) {
    if (k < 1 || static_cast<std::size_t>(k) > distances.size()) {
        throw_data("InsufficientResidual",
                   "k=" + std::to_string(k) + " with " + std::to_string(distances.size()) +
                       " residuals");
    }
    const auto nearest = k_nearest(distances, k);
    std::vector<int> votes(num_classes, 0);
    std::vector<double> summed(num_classes, 0.0);
    for (const auto& [dist, idx] : nearest) {
        votes[labels[idx]] += 1;
        summed[labels[idx]] += dist;
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
        if (votes[c] > votes[best] ||
            (votes[c] == votes[best] && votes[c] > 0 && summed[c] < summed[best])) {
            best = c;
        }
    }
    return best;
}

int knn_prompting_predict(const VocabDistribution& test_dist,
                          const std::vector<VocabDistribution>& residual_dists,
                          const std::vector<int>& residual_labels, const NeighborVoteConfig& cfg,
                          int num_classes) {
    const int k = resolve_k(cfg, residual_dists.size());
    std::vector<double> distances(residual_dists.size());
    for (std::size_t i = 0; i < residual_dists.size(); ++i) {
        distances[i] = divergence(test_dist, residual_dists[i], cfg);
    }
    return nearest_vote(distances, residual_labels, k, num_classes);
}

std::vector<double> knn_prompt_predict(const VocabDistribution& test_dist,
                                       const std::vector<VocabDistribution>& residual_dists,
                                       const std::vector<int>& residual_labels,
                                       const std::vector<std::string>& verbalizer,
                                       const NeighborVoteConfig& cfg) {
    const int num_classes = static_cast<int>(verbalizer.size());
    const int k = resolve_k(cfg, residual_dists.size());
    const auto p_icl = icl_predict(test_dist, verbalizer);

    std::vector<double> distances(residual_dists.size());
    for (std::size_t i = 0; i < residual_dists.size(); ++i) {
        distances[i] = divergence(test_dist, residual_dists[i], cfg);
    }
    const auto nearest = k_nearest(distances, k);
    std::vector<double> p_knn(num_classes, 0.0);
    double knn_sum = 0.0;
    for (const auto& [dist, idx] : nearest) {
        const double w = std::exp(-dist / cfg.temperature);
        p_knn[residual_labels[idx]] += w;
        knn_sum += w;
    }
    if (knn_sum > 0.0) {
        for (auto& p : p_knn) p /= knn_sum;
    }

    std::vector<double> out(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        out[c] = cfg.lambda * p_icl[c] + (1.0 - cfg.lambda) * p_knn[c];
    }
    return out;
}

int feature_distance_vote(std::span<const float> query, const FeatureMatrix& residual,
                          const std::vector<int>& labels, int k, int num_classes) {
    std::vector<double> distances(residual.rows);
    for (std::size_t i = 0; i < residual.rows; ++i) {
        const float* row = residual.row(i);
        double d2 = 0.0;
        for (std::size_t d = 0; d < residual.cols; ++d) {
            const double diff = static_cast<double>(row[d]) - query[d];
            d2 += diff * diff;
        }
        distances[i] = d2;
    }
    return nearest_vote(distances, labels, k, num_classes);
}

}  // namespace fadsicl
