#include "fadsicl/modulators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "fadsicl/encoding.hpp"
#include "fadsicl/rng.hpp"

namespace fadsicl {

namespace {

std::vector<double> to_double(std::span<const float> x) {
    return std::vector<double>(x.begin(), x.end());
}

void softmax_inplace(std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
}

const char* kind_key(ModulatorKind kind) { return modulator_name(kind); }

ModulatorKind kind_from_key(const std::string& key) {
    for (ModulatorKind k : {ModulatorKind::LogisticRegression, ModulatorKind::LinearSvm,
                            ModulatorKind::Mlp, ModulatorKind::NearestNeighbors,
                            ModulatorKind::DecisionTree}) {
        if (key == modulator_name(k)) return k;
    }
    throw_data("BadModel", "unknown modulator kind '" + key + "'");
}

nlohmann::json block(const std::vector<double>& values, std::vector<std::size_t> shape) {
    std::vector<float> f(values.begin(), values.end());
    return nlohmann::json{{"shape", shape}, {"f32", floats_to_base64(f)}};
}

std::vector<double> read_block(const nlohmann::json& j, std::size_t expected) {
    const auto f = base64_to_floats(j.at("f32").get<std::string>());
    if (f.size() != expected) {
        throw_data("BadModel", "parameter block has " + std::to_string(f.size()) +
                                   " values, expected " + std::to_string(expected));
    }
    return std::vector<double>(f.begin(), f.end());
}

}  // namespace

int argmax_label(const std::vector<double>& proba) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(proba.size()); ++c) {
        if (proba[c] > proba[best]) best = c;  // ties keep the smaller id
    }
    return best;
}

std::vector<double> FittedModulator::predict_proba(std::span<const float> x) const {
    if (x.size() != input_dim_) {
        throw_backend("DimensionMismatch", "modulator expects dim " + std::to_string(input_dim_) +
                                               ", got " + std::to_string(x.size()));
    }
    auto proba = raw_proba(to_double(x));
    double sum = 0.0;
    for (double p : proba) sum += p;
    for (auto& p : proba) p /= sum;
    return proba;
}

std::vector<double> FittedModulator::predict_proba(const FeatureVector& x) const {
    return predict_proba(std::span<const float>(x.values));
}

int FittedModulator::predict(std::span<const float> x) const {
    return argmax_label(predict_proba(x));
}

int FittedModulator::predict(const FeatureVector& x) const {
    return argmax_label(predict_proba(x));
}

nlohmann::json FittedModulator::to_json() const {
    nlohmann::json j{{"format", "fadsicl-modulator"},
                     {"version", 1},
                     {"kind", kind_key(kind_)},
                     {"classes", classes_},
                     {"input_dim", input_dim_}};
    write_params(j);
    return j;
}

// ---------------------------------------------------------------------------
// Linear models

namespace detail {

double logistic_loss_grad(std::span<const double> params, const std::vector<double>& x,
                          std::size_t rows, std::size_t cols, const std::vector<int>& y,
                          int classes, double l2, std::span<double> grad) {
    const std::size_t wsize = static_cast<std::size_t>(classes) * cols;
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    std::vector<double> z(classes);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = x.data() + i * cols;
        for (int c = 0; c < classes; ++c) {
            double dot = params[wsize + c];  // bias
            const double* wc = params.data() + c * cols;
            for (std::size_t d = 0; d < cols; ++d) dot += wc[d] * xi[d];
            z[c] = dot;
        }
        softmax_inplace(z);
        loss -= std::log(std::max(z[y[i]], 1e-300));
        for (int c = 0; c < classes; ++c) {
            const double delta = z[c] - (c == y[i] ? 1.0 : 0.0);
            double* gc = grad.data() + c * cols;
            for (std::size_t d = 0; d < cols; ++d) gc[d] += delta * xi[d];
            grad[wsize + c] += delta;
        }
    }
    // L2 on weights only, bias unpenalized.
    for (std::size_t p = 0; p < wsize; ++p) {
        loss += 0.5 * l2 * params[p] * params[p];
        grad[p] += l2 * params[p];
    }
    return loss;
}

double mlp_loss_grad(std::span<const double> params, const std::vector<double>& x,
                     std::size_t rows, std::size_t cols, const std::vector<int>& y, int classes,
                     int hidden, std::span<double> grad) {
    const std::size_t h = static_cast<std::size_t>(hidden);
    const std::size_t off_b1 = h * cols;
    const std::size_t off_w2 = off_b1 + h;
    const std::size_t off_b2 = off_w2 + static_cast<std::size_t>(classes) * h;
    std::fill(grad.begin(), grad.end(), 0.0);

    double loss = 0.0;
    std::vector<double> act(h);
    std::vector<double> z(classes);
    std::vector<double> dhidden(h);
    const double scale = 1.0 / static_cast<double>(rows);

    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = x.data() + i * cols;
        for (std::size_t j = 0; j < h; ++j) {
            double dot = params[off_b1 + j];
            const double* wj = params.data() + j * cols;
            for (std::size_t d = 0; d < cols; ++d) dot += wj[d] * xi[d];
            act[j] = dot > 0.0 ? dot : 0.0;
        }
        for (int c = 0; c < classes; ++c) {
            double dot = params[off_b2 + c];
            const double* wc = params.data() + off_w2 + static_cast<std::size_t>(c) * h;
            for (std::size_t j = 0; j < h; ++j) dot += wc[j] * act[j];
            z[c] = dot;
        }
        softmax_inplace(z);
        loss -= scale * std::log(std::max(z[y[i]], 1e-300));

        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (int c = 0; c < classes; ++c) {
            const double delta = scale * (z[c] - (c == y[i] ? 1.0 : 0.0));
            double* gw2 = grad.data() + off_w2 + static_cast<std::size_t>(c) * h;
            const double* wc = params.data() + off_w2 + static_cast<std::size_t>(c) * h;
            for (std::size_t j = 0; j < h; ++j) {
                gw2[j] += delta * act[j];
                dhidden[j] += delta * wc[j];
            }
            grad[off_b2 + c] += delta;
        }
        for (std::size_t j = 0; j < h; ++j) {
            if (act[j] <= 0.0) continue;  // ReLU gate
            double* gw1 = grad.data() + j * cols;
            for (std::size_t d = 0; d < cols; ++d) gw1[d] += dhidden[j] * xi[d];
            grad[off_b1 + j] += dhidden[j];
        }
    }
    return loss;
}

}  // namespace detail

namespace {

class LinearModulator : public FittedModulator {
public:
    LinearModulator(ModulatorKind kind, int classes, std::size_t input_dim,
                    std::vector<double> weights, std::vector<double> bias)
        : FittedModulator(kind, classes, input_dim),
          weights_(std::move(weights)),
          bias_(std::move(bias)) {}

    std::vector<double> raw_proba(const std::vector<double>& x) const override {
        std::vector<double> z(num_classes());
        for (int c = 0; c < num_classes(); ++c) {
            double dot = bias_[c];
            const double* wc = weights_.data() + static_cast<std::size_t>(c) * input_dim();
            for (std::size_t d = 0; d < input_dim(); ++d) dot += wc[d] * x[d];
            z[c] = dot;
        }
        softmax_inplace(z);  // for the SVM this is the margin calibration
        return z;
    }

    void write_params(nlohmann::json& j) const override {
        j["blocks"] = {{"weights", block(weights_, {static_cast<std::size_t>(num_classes()),
                                                    input_dim()})},
                       {"bias", block(bias_, {static_cast<std::size_t>(num_classes())})}};
    }

    static std::unique_ptr<FittedModulator> read(ModulatorKind kind, int classes,
                                                 std::size_t dim, const nlohmann::json& j) {
        auto weights = read_block(j.at("blocks").at("weights"),
                                  static_cast<std::size_t>(classes) * dim);
        auto bias = read_block(j.at("blocks").at("bias"), static_cast<std::size_t>(classes));
        return std::make_unique<LinearModulator>(kind, classes, dim, std::move(weights),
                                                 std::move(bias));
    }

private:
    std::vector<double> weights_;  // C x D row-major
    std::vector<double> bias_;
};

std::unique_ptr<FittedModulator> fit_logistic(const std::vector<double>& x, std::size_t rows,
                                              std::size_t cols, const std::vector<int>& y,
                                              int classes, const ModulatorOptions& opt) {
    const std::size_t nparams = static_cast<std::size_t>(classes) * cols + classes;
    std::vector<double> params(nparams, 0.0);
    std::vector<double> grad(nparams, 0.0);
    std::vector<double> trial(nparams, 0.0);
    std::vector<double> trial_grad(nparams, 0.0);

    double loss = detail::logistic_loss_grad(params, x, rows, cols, y, classes, opt.lr_l2, grad);
    double step = 1.0;
    for (int iter = 0; iter < opt.lr_max_iter; ++iter) {
        double gnorm2 = 0.0;
        for (double g : grad) gnorm2 += g * g;
        if (std::sqrt(gnorm2) <= opt.lr_tol) break;

        // Backtracking line search with the Armijo condition.
        step = std::min(step * 2.0, 1.0);
        bool moved = false;
        for (int half = 0; half < 60; ++half) {
            for (std::size_t p = 0; p < nparams; ++p) trial[p] = params[p] - step * grad[p];
            const double trial_loss = detail::logistic_loss_grad(trial, x, rows, cols, y, classes,
                                                                 opt.lr_l2, trial_grad);
            if (trial_loss <= loss - 1e-4 * step * gnorm2) {
                params.swap(trial);
                grad.swap(trial_grad);
                loss = trial_loss;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;  // step underflow: numerically converged
    }

    std::vector<double> weights(params.begin(),
                                params.begin() + static_cast<std::ptrdiff_t>(classes * cols));
    std::vector<double> bias(params.end() - classes, params.end());
    return std::make_unique<LinearModulator>(ModulatorKind::LogisticRegression, classes, cols,
                                             std::move(weights), std::move(bias));
}

std::unique_ptr<FittedModulator> fit_svm(const std::vector<double>& x, std::size_t rows,
                                         std::size_t cols, const std::vector<int>& y, int classes,
                                         const ModulatorOptions& opt) {
    std::vector<double> weights(static_cast<std::size_t>(classes) * cols, 0.0);
    std::vector<double> bias(classes, 0.0);
    std::vector<double> gw(cols);

    // One-vs-rest, full batch: J = 0.5 ||w||^2 + C sum_i hinge_i, eta_t = 1/(t+1).
    for (int c = 0; c < classes; ++c) {
        double* wc = weights.data() + static_cast<std::size_t>(c) * cols;
        for (int t = 0; t < opt.svm_iters; ++t) {
            std::copy(wc, wc + cols, gw.begin());
            double gb = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                const double* xi = x.data() + i * cols;
                const double s = y[i] == c ? 1.0 : -1.0;
                double margin = bias[c];
                for (std::size_t d = 0; d < cols; ++d) margin += wc[d] * xi[d];
                if (s * margin < 1.0) {
                    for (std::size_t d = 0; d < cols; ++d) gw[d] -= opt.svm_c * s * xi[d];
                    gb -= opt.svm_c * s;
                }
            }
            const double eta = 1.0 / (t + 1.0);
            for (std::size_t d = 0; d < cols; ++d) wc[d] -= eta * gw[d];
            bias[c] -= eta * gb;
        }
    }
    return std::make_unique<LinearModulator>(ModulatorKind::LinearSvm, classes, cols,
                                             std::move(weights), std::move(bias));
}

// ---------------------------------------------------------------------------
// MLP

class MlpModulator : public FittedModulator {
public:
    MlpModulator(int classes, std::size_t input_dim, int hidden, std::vector<double> params)
        : FittedModulator(ModulatorKind::Mlp, classes, input_dim),
          hidden_(hidden),
          params_(std::move(params)) {}

    std::vector<double> raw_proba(const std::vector<double>& x) const override {
        const std::size_t h = static_cast<std::size_t>(hidden_);
        const std::size_t cols = input_dim();
        const std::size_t off_b1 = h * cols;
        const std::size_t off_w2 = off_b1 + h;
        const std::size_t off_b2 = off_w2 + static_cast<std::size_t>(num_classes()) * h;
        std::vector<double> act(h);
        for (std::size_t j = 0; j < h; ++j) {
            double dot = params_[off_b1 + j];
            const double* wj = params_.data() + j * cols;
            for (std::size_t d = 0; d < cols; ++d) dot += wj[d] * x[d];
            act[j] = dot > 0.0 ? dot : 0.0;
        }
        std::vector<double> z(num_classes());
        for (int c = 0; c < num_classes(); ++c) {
            double dot = params_[off_b2 + c];
            const double* wc = params_.data() + off_w2 + static_cast<std::size_t>(c) * h;
            for (std::size_t j = 0; j < h; ++j) dot += wc[j] * act[j];
            z[c] = dot;
        }
        softmax_inplace(z);
        return z;
    }

    void write_params(nlohmann::json& j) const override {
        j["hidden"] = hidden_;
        j["blocks"] = {{"params", block(params_, {params_.size()})}};
    }

    static std::unique_ptr<FittedModulator> read(int classes, std::size_t dim,
                                                 const nlohmann::json& j) {
        const int hidden = j.at("hidden").get<int>();
        const std::size_t h = static_cast<std::size_t>(hidden);
        const std::size_t expected =
            h * dim + h + static_cast<std::size_t>(classes) * h + classes;
        auto params = read_block(j.at("blocks").at("params"), expected);
        return std::make_unique<MlpModulator>(classes, dim, hidden, std::move(params));
    }

private:
    int hidden_;
    std::vector<double> params_;  // [W1, b1, W2, b2]
};

std::unique_ptr<FittedModulator> fit_mlp(const std::vector<double>& x, std::size_t rows,
                                         std::size_t cols, const std::vector<int>& y, int classes,
                                         std::uint64_t seed, const ModulatorOptions& opt) {
    const std::size_t h = static_cast<std::size_t>(opt.mlp_hidden);
    const std::size_t nparams = h * cols + h + static_cast<std::size_t>(classes) * h + classes;
    std::vector<double> params(nparams, 0.0);

    auto rng = Rng::stream(seed, "modulator-init");
    const double scale1 = std::sqrt(2.0 / static_cast<double>(cols + h));
    for (std::size_t p = 0; p < h * cols; ++p) params[p] = scale1 * rng.normal();
    const double scale2 = std::sqrt(2.0 / static_cast<double>(h + classes));
    for (std::size_t p = h * cols + h; p < nparams - classes; ++p) {
        params[p] = scale2 * rng.normal();
    }

    // Full-batch Adam to loss plateau.
    std::vector<double> grad(nparams, 0.0);
    std::vector<double> m(nparams, 0.0);
    std::vector<double> v(nparams, 0.0);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int epoch = 1; epoch <= opt.mlp_max_epochs; ++epoch) {
        const double loss =
            detail::mlp_loss_grad(params, x, rows, cols, y, classes, opt.mlp_hidden, grad);
        if (loss < best - opt.mlp_plateau_tol) {
            best = loss;
            stale = 0;
        } else if (++stale >= opt.mlp_patience) {
            break;
        }
        const double bc1 = 1.0 - std::pow(beta1, epoch);
        const double bc2 = 1.0 - std::pow(beta2, epoch);
        for (std::size_t p = 0; p < nparams; ++p) {
            m[p] = beta1 * m[p] + (1.0 - beta1) * grad[p];
            v[p] = beta2 * v[p] + (1.0 - beta2) * grad[p] * grad[p];
            params[p] -= opt.mlp_learning_rate * (m[p] / bc1) / (std::sqrt(v[p] / bc2) + eps);
        }
    }
    return std::make_unique<MlpModulator>(classes, cols, opt.mlp_hidden, std::move(params));
}

// ---------------------------------------------------------------------------
// Nearest neighbors

class KnnModulator : public FittedModulator {
public:
    KnnModulator(int classes, std::size_t input_dim, int k, std::vector<double> train_x,
                 std::vector<int> train_y)
        : FittedModulator(ModulatorKind::NearestNeighbors, classes, input_dim),
          k_(k),
          train_x_(std::move(train_x)),
          train_y_(std::move(train_y)) {}

    std::vector<double> raw_proba(const std::vector<double>& x) const override {
        const std::size_t n = train_y_.size();
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_), n);
        // (squared distance, training index); index order breaks ties.
        std::vector<std::pair<double, std::size_t>> dist(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = train_x_.data() + i * input_dim();
            double d2 = 0.0;
            for (std::size_t d = 0; d < input_dim(); ++d) {
                const double diff = xi[d] - x[d];
                d2 += diff * diff;
            }
            dist[i] = {d2, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                          dist.end());
        std::vector<double> proba(num_classes(), 0.0);
        for (std::size_t i = 0; i < k; ++i) proba[train_y_[dist[i].second]] += 1.0 / k;
        return proba;
    }

    void write_params(nlohmann::json& j) const override {
        j["k"] = k_;
        j["train_y"] = train_y_;
        j["blocks"] = {{"train_x", block(train_x_, {train_y_.size(), input_dim()})}};
    }

    static std::unique_ptr<FittedModulator> read(int classes, std::size_t dim,
                                                 const nlohmann::json& j) {
        auto train_y = j.at("train_y").get<std::vector<int>>();
        auto train_x = read_block(j.at("blocks").at("train_x"), train_y.size() * dim);
        return std::make_unique<KnnModulator>(classes, dim, j.at("k").get<int>(),
                                              std::move(train_x), std::move(train_y));
    }

private:
    int k_;
    std::vector<double> train_x_;
    std::vector<int> train_y_;
};

// ---------------------------------------------------------------------------
// Decision tree (CART, Gini)

struct TreeNode {
    int feature = -1;  // -1 = leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> proba;
};

class TreeModulator : public FittedModulator {
public:
    TreeModulator(int classes, std::size_t input_dim, std::vector<TreeNode> nodes)
        : FittedModulator(ModulatorKind::DecisionTree, classes, input_dim),
          nodes_(std::move(nodes)) {}

    std::vector<double> raw_proba(const std::vector<double>& x) const override {
        int node = 0;
        while (nodes_[node].feature >= 0) {
            node = x[nodes_[node].feature] <= nodes_[node].threshold ? nodes_[node].left
                                                                     : nodes_[node].right;
        }
        return nodes_[node].proba;
    }

    void write_params(nlohmann::json& j) const override {
        std::vector<int> feature, left, right;
        std::vector<double> threshold, proba;
        for (const auto& n : nodes_) {
            feature.push_back(n.feature);
            left.push_back(n.left);
            right.push_back(n.right);
            threshold.push_back(n.threshold);
            std::vector<double> row = n.proba;
            row.resize(static_cast<std::size_t>(num_classes()), 0.0);
            proba.insert(proba.end(), row.begin(), row.end());
        }
        j["feature"] = feature;
        j["left"] = left;
        j["right"] = right;
        j["blocks"] = {
            {"threshold", block(threshold, {nodes_.size()})},
            {"proba", block(proba, {nodes_.size(), static_cast<std::size_t>(num_classes())})}};
    }

    static std::unique_ptr<FittedModulator> read(int classes, std::size_t dim,
                                                 const nlohmann::json& j) {
        const auto feature = j.at("feature").get<std::vector<int>>();
        const auto left = j.at("left").get<std::vector<int>>();
        const auto right = j.at("right").get<std::vector<int>>();
        const auto threshold = read_block(j.at("blocks").at("threshold"), feature.size());
        const auto proba = read_block(j.at("blocks").at("proba"),
                                      feature.size() * static_cast<std::size_t>(classes));
        std::vector<TreeNode> nodes(feature.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            nodes[i].feature = feature[i];
            nodes[i].left = left[i];
            nodes[i].right = right[i];
            nodes[i].threshold = threshold[i];
            nodes[i].proba.assign(proba.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                  proba.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes));
        }
        return std::make_unique<TreeModulator>(classes, dim, std::move(nodes));
    }

private:
    std::vector<TreeNode> nodes_;
};

double gini(const std::vector<double>& counts, double total) {
    if (total <= 0.0) return 0.0;
    double g = 1.0;
    for (double c : counts) {
        const double p = c / total;
        g -= p * p;
    }
    return g;
}

class TreeBuilder {
public:
    TreeBuilder(const std::vector<double>& x, std::size_t cols, const std::vector<int>& y,
                int classes, int min_split)
        : x_(x), cols_(cols), y_(y), classes_(classes), min_split_(min_split) {}

    std::vector<TreeNode> build() {
        std::vector<std::size_t> all(y_.size());
        std::iota(all.begin(), all.end(), 0);
        grow(all);
        return std::move(nodes_);
    }

private:
    int grow(const std::vector<std::size_t>& idx) {
        std::vector<double> counts(classes_, 0.0);
        for (std::size_t i : idx) counts[y_[i]] += 1.0;
        const double total = static_cast<double>(idx.size());
        const double node_gini = gini(counts, total);

        const int node_id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (node_gini <= 0.0 || idx.size() < static_cast<std::size_t>(min_split_)) {
            make_leaf(node_id, counts, total);
            return node_id;
        }

        // Best split: max impurity decrease, ties by (feature, threshold) scan
        // order. Zero-decrease splits are allowed (children are strictly
        // smaller, so growth still terminates), which is what lets the tree
        // carve xor-like patterns down to pure leaves.
        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = std::numeric_limits<double>::infinity();
        std::vector<std::pair<double, std::size_t>> column(idx.size());
        std::vector<double> left_counts(classes_);
        for (std::size_t f = 0; f < cols_; ++f) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                column[i] = {x_[idx[i] * cols_ + f], idx[i]};
            }
            std::sort(column.begin(), column.end());
            std::fill(left_counts.begin(), left_counts.end(), 0.0);
            for (std::size_t i = 0; i + 1 < column.size(); ++i) {
                left_counts[y_[column[i].second]] += 1.0;
                if (column[i].first == column[i + 1].first) continue;
                const double nl = static_cast<double>(i + 1);
                const double nr = total - nl;
                std::vector<double> right_counts(classes_);
                for (int c = 0; c < classes_; ++c) right_counts[c] = counts[c] - left_counts[c];
                const double score =
                    (nl * gini(left_counts, nl) + nr * gini(right_counts, nr)) / total;
                if (score < best_score) {
                    best_score = score;
                    best_feature = static_cast<int>(f);
                    best_threshold = column[i].first + 0.5 * (column[i + 1].first - column[i].first);
                }
            }
        }
        if (best_feature < 0) {
            make_leaf(node_id, counts, total);
            return node_id;
        }

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx) {
            (x_[i * cols_ + best_feature] <= best_threshold ? left_idx : right_idx).push_back(i);
        }
        nodes_[node_id].feature = best_feature;
        nodes_[node_id].threshold = best_threshold;
        const int left = grow(left_idx);
        const int right = grow(right_idx);
        nodes_[node_id].left = left;
        nodes_[node_id].right = right;
        return node_id;
    }

    void make_leaf(int node_id, const std::vector<double>& counts, double total) {
        auto& node = nodes_[node_id];
        node.feature = -1;
        node.proba.resize(classes_);
        for (int c = 0; c < classes_; ++c) node.proba[c] = counts[c] / total;
    }

    const std::vector<double>& x_;
    std::size_t cols_;
    const std::vector<int>& y_;
    int classes_;
    int min_split_;
    std::vector<TreeNode> nodes_;
};

}  // namespace

namespace {

void validate_options(const ModulatorOptions& o) {
    if (o.lr_l2 <= 0.0 || o.svm_c <= 0.0) {
        throw_config("BadConfig", "regularization strengths must be positive");
    }
    if (o.knn_k < 1) throw_config("BadConfig", "nearest-neighbor k must be >= 1");
    if (o.mlp_hidden < 1) throw_config("BadConfig", "mlp hidden width must be >= 1");
    if (o.tree_min_samples_split < 2) {
        throw_config("BadConfig", "tree min_samples_split must be >= 2");
    }
}

}  // namespace

std::unique_ptr<FittedModulator> fit(ModulatorKind kind, const FeatureMatrix& x,
                                     const std::vector<int>& y, int num_classes,
                                     std::uint64_t seed, const ModulatorOptions& options) {
    validate_options(options);
    if (x.rows == 0) throw_data("InsufficientData", "no residual samples to fit on");
    if (x.rows != y.size()) {
        throw_backend("DimensionMismatch", "feature matrix has " + std::to_string(x.rows) +
                                               " rows but " + std::to_string(y.size()) +
                                               " labels");
    }
    if (num_classes < 2) throw_config("BadConfig", "modulator needs >= 2 classes");
    std::set<int> present(y.begin(), y.end());
    if (present.size() < 2) {
        throw_data("SingleClassResidual", "residual labels are constant; nothing to separate");
    }
    for (int label : present) {
        if (label < 0 || label >= num_classes) {
            throw_data("BadDataset", "label " + std::to_string(label) + " outside class range");
        }
    }

    const std::vector<double> xd(x.values.begin(), x.values.end());
    switch (kind) {
        case ModulatorKind::LogisticRegression:
            return fit_logistic(xd, x.rows, x.cols, y, num_classes, options);
        case ModulatorKind::LinearSvm:
            return fit_svm(xd, x.rows, x.cols, y, num_classes, options);
        case ModulatorKind::Mlp:
            return fit_mlp(xd, x.rows, x.cols, y, num_classes, seed, options);
        case ModulatorKind::NearestNeighbors:
            return std::make_unique<KnnModulator>(num_classes, x.cols, options.knn_k, xd,
                                                  std::vector<int>(y));
        case ModulatorKind::DecisionTree: {
            TreeBuilder builder(xd, x.cols, y, num_classes, options.tree_min_samples_split);
            return std::make_unique<TreeModulator>(num_classes, x.cols, builder.build());
        }
    }
    throw_config("BadConfig", "unknown modulator kind");
}

std::unique_ptr<FittedModulator> FittedModulator::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "fadsicl-modulator") {
        throw_data("BadModel", "not a fadsicl modulator file");
    }
    if (j.value("version", 0) != 1) throw_data("BadModel", "unsupported model version");
    const ModulatorKind kind = kind_from_key(j.at("kind").get<std::string>());
    const int classes = j.at("classes").get<int>();
    const auto dim = j.at("input_dim").get<std::size_t>();
    switch (kind) {
        case ModulatorKind::LogisticRegression:
        case ModulatorKind::LinearSvm:
            return LinearModulator::read(kind, classes, dim, j);
        case ModulatorKind::Mlp:
            return MlpModulator::read(classes, dim, j);
        case ModulatorKind::NearestNeighbors:
            return KnnModulator::read(classes, dim, j);
        case ModulatorKind::DecisionTree:
            return TreeModulator::read(classes, dim, j);
    }
    throw_data("BadModel", "unknown modulator kind");
}

}  // namespace fadsicl
