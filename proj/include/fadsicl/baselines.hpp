#pragma once

#include <vector>

#include "fadsicl/core.hpp"
#include "fadsicl/extraction.hpp"

namespace fadsicl {

// p(y|x) restricted to the verbalizer tokens and renormalized. Tokens absent
// from the support count as probability 0; when every label token is absent
// the distribution carries no signal and BackendError("AllLabelsUnsupported")
// is thrown.
std::vector<double> icl_predict(const VocabDistribution& dist,
                                const std::vector<std::string>& verbalizer);

// D(p || q) over the union support with epsilon smoothing (1e-12 added to
// both sides, renormalized), so zero-probability tokens never blow up.
double kl_divergence(const VocabDistribution& p, const VocabDistribution& q);

double divergence(const VocabDistribution& test_dist, const VocabDistribution& train_dist,
                  const NeighborVoteConfig& cfg);

// ceil(sqrt(n)); the Auto neighbor count.
int auto_k(std::size_t residual_count);

// Majority vote of the k residuals nearest to the test distribution. Ties are
// broken by the smaller summed distance among tied labels, then the smaller
// label id.
int knn_prompting_predict(const VocabDistribution& test_dist,
                          const std::vector<VocabDistribution>& residual_dists,
                          const std::vector<int>& residual_labels, const NeighborVoteConfig& cfg,
                          int num_classes);

// lambda * p_ICL + (1 - lambda) * p_kNN, where p_kNN(y) sums
// exp(-D(test||r_i)/tau) over the k nearest residuals with label y.
std::vector<double> knn_prompt_predict(const VocabDistribution& test_dist,
                                       const std::vector<VocabDistribution>& residual_dists,
                                       const std::vector<int>& residual_labels,
                                       const std::vector<std::string>& verbalizer,
                                       const NeighborVoteConfig& cfg);

// Generic nearest-neighbor vote over precomputed distances; shared by the
// distribution-space vote above and raw-feature-distance comparisons.
int nearest_vote(const std::vector<double>& distances, const std::vector<int>& labels, int k,
                 int num_classes);

// Euclidean k-NN vote directly on feature vectors; the no-adaptation
// comparison point for feature-space experiments.
int feature_distance_vote(std::span<const float> query, const FeatureMatrix& residual,
                          const std::vector<int>& labels, int k, int num_classes);

}  // namespace fadsicl
