#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fadsicl/core.hpp"

namespace fadsicl {

// Hyperparameters, defaulted to the library defaults of the classifiers they
// mirror. Anything changed here must be an explicit config entry.
struct ModulatorOptions {
    // logistic regression: full-batch gradient descent + backtracking
    double lr_l2 = 1.0;
    double lr_tol = 1e-6;       // gradient L2 norm
    int lr_max_iter = 1000;
    // linear SVM: one-vs-rest hinge, deterministic full-batch subgradient
    double svm_c = 1.0;
    int svm_iters = 1000;
    // MLP: one hidden layer, full-batch Adam to loss plateau
    int mlp_hidden = 100;
    double mlp_learning_rate = 1e-3;
    int mlp_max_epochs = 200;
    double mlp_plateau_tol = 1e-6;
    int mlp_patience = 10;
    // nearest neighbors: Euclidean, uniform weights
    int knn_k = 5;
    // decision tree: Gini, unlimited depth
    int tree_min_samples_split = 2;
};

// A trained task-specific modulator. predict_proba returns non-negative
// entries summing to 1; predict is its argmax with ties won by the smallest
// label id.
class FittedModulator {
public:
    virtual ~FittedModulator() = default;

    ModulatorKind kind() const { return kind_; }
    int num_classes() const { return classes_; }
    std::size_t input_dim() const { return input_dim_; }

    std::vector<double> predict_proba(std::span<const float> x) const;
    std::vector<double> predict_proba(const FeatureVector& x) const;
    int predict(std::span<const float> x) const;
    int predict(const FeatureVector& x) const;

    nlohmann::json to_json() const;
    static std::unique_ptr<FittedModulator> from_json(const nlohmann::json& j);

protected:
    FittedModulator(ModulatorKind kind, int classes, std::size_t input_dim)
        : kind_(kind), classes_(classes), input_dim_(input_dim) {}

    virtual std::vector<double> raw_proba(const std::vector<double>& x) const = 0;
    virtual void write_params(nlohmann::json& j) const = 0;

private:
    ModulatorKind kind_;
    int classes_;
    std::size_t input_dim_;
};

// Trains a modulator of the requested kind on the residual features. All
// training is deterministic given the seed. Throws
// DataError("SingleClassResidual") when y is constant.
std::unique_ptr<FittedModulator> fit(ModulatorKind kind, const FeatureMatrix& x,
                                     const std::vector<int>& y, int num_classes,
                                     std::uint64_t seed, const ModulatorOptions& options = {});

int argmax_label(const std::vector<double>& proba);

namespace detail {

// Loss + gradient of the multinomial logistic objective
//   0.5 * l2 * ||W||^2 + sum_i CE(softmax(W x_i + b), y_i)
// with parameters packed [W row-major (C x D), b (C)]. Exposed so tests can
// check the analytic gradient against finite differences.
double logistic_loss_grad(std::span<const double> params, const std::vector<double>& x,
                          std::size_t rows, std::size_t cols, const std::vector<int>& y,
                          int classes, double l2, std::span<double> grad);

// Same for the one-hidden-layer ReLU MLP with mean cross-entropy loss,
// parameters packed [W1 (H x D), b1 (H), W2 (C x H), b2 (C)].
double mlp_loss_grad(std::span<const double> params, const std::vector<double>& x,
                     std::size_t rows, std::size_t cols, const std::vector<int>& y, int classes,
                     int hidden, std::span<double> grad);

}  // namespace detail

}  // namespace fadsicl
