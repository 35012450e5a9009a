#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fadsicl/encoding.hpp"
#include "fadsicl/modulators.hpp"
#include "fadsicl/rng.hpp"

using namespace fadsicl;

namespace {

FeatureMatrix matrix_from_rows(const std::vector<std::vector<float>>& rows) {
    FeatureMatrix m;
    for (const auto& row : rows) m.append_row(row);
    return m;
}

// Two well-separated Gaussian blobs, n per class.
void gaussian_blobs(int n, int dim, double separation, std::uint64_t seed, FeatureMatrix& x,
                    std::vector<int>& y) {
    Rng rng(seed);
    for (int i = 0; i < 2 * n; ++i) {
        const int label = i % 2;
        std::vector<float> row(dim);
        for (int d = 0; d < dim; ++d) {
            const double mean = d == 0 ? (label == 0 ? -separation / 2 : separation / 2) : 0.0;
            row[d] = static_cast<float>(mean + rng.normal());
        }
        x.append_row(row);
        y.push_back(label);
    }
}

// Central finite differences of a loss function; the independent gradient
// oracle.
template <typename LossFn>
std::vector<double> numeric_gradient(LossFn&& loss, std::vector<double> params, double step) {
    std::vector<double> grad(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        const double keep = params[p];
        params[p] = keep + step;
        const double up = loss(params);
        params[p] = keep - step;
        const double down = loss(params);
        params[p] = keep;
        grad[p] = (up - down) / (2.0 * step);
    }
    return grad;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

std::unique_ptr<FittedModulator> zero_logistic(int classes, int dim) {
    nlohmann::json j{{"format", "fadsicl-modulator"},
                     {"version", 1},
                     {"kind", "lr"},
                     {"classes", classes},
                     {"input_dim", dim}};
    j["blocks"] = {
        {"weights", {{"shape", {classes, dim}},
                     {"f32", floats_to_base64(std::vector<float>(classes * dim, 0.0f))}}},
        {"bias",
         {{"shape", {classes}}, {"f32", floats_to_base64(std::vector<float>(classes, 0.0f))}}}};
    return FittedModulator::from_json(j);
}

}  // namespace

TEST_SUITE("modulators") {

TEST_CASE("logistic separates a trivial pair") {
    const auto x = matrix_from_rows({{0.0f, 0.0f}, {1.0f, 1.0f}});
    const std::vector<int> y{0, 1};
    const auto model = fit(ModulatorKind::LogisticRegression, x, y, 2, 0);
    CHECK(model->predict(std::vector<float>{1.0f, 1.0f}) == 1);
    CHECK(model->predict(std::vector<float>{0.0f, 0.0f}) == 0);
}

TEST_CASE("constant labels are rejected") {
    const auto x = matrix_from_rows({{0.0f}, {1.0f}});
    CHECK_THROWS_WITH_AS(fit(ModulatorKind::LogisticRegression, x, {1, 1}, 2, 0),
                         doctest::Contains("SingleClassResidual"), Error);
}

TEST_CASE("parametric kinds reach 0.99 training accuracy on separated blobs") {
    FeatureMatrix x;
    std::vector<int> y;
    gaussian_blobs(100, 8, 10.0, 7, x, y);
    for (ModulatorKind kind :
         {ModulatorKind::LogisticRegression, ModulatorKind::LinearSvm, ModulatorKind::Mlp}) {
        const auto model = fit(kind, x, y, 2, 7);
        int correct = 0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            if (model->predict(std::span<const float>(x.row(i), x.cols)) == y[i]) ++correct;
        }
        CHECK(static_cast<double>(correct) / static_cast<double>(x.rows) >= 0.99);
    }
}

TEST_CASE("logistic gradient matches central finite differences") {
    Rng rng(11);
    const std::size_t rows = 12, cols = 5;
    const int classes = 3;
    std::vector<double> x(rows * cols);
    for (auto& v : x) v = rng.normal();
    std::vector<int> y(rows);
    for (auto& label : y) label = static_cast<int>(rng.uniform_below(classes));

    const std::size_t nparams = classes * cols + classes;
    std::vector<double> params(nparams);
    for (auto& p : params) p = 0.5 * rng.normal();

    std::vector<double> analytic(nparams);
    detail::logistic_loss_grad(params, x, rows, cols, y, classes, 1.0, analytic);
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& p) {
            std::vector<double> scratch(nparams);
            return detail::logistic_loss_grad(p, x, rows, cols, y, classes, 1.0, scratch);
        },
        params, 1e-5);
    CHECK(max_relative_error(analytic, numeric) <= 1e-4);
}

TEST_CASE("mlp gradient matches central finite differences") {
    Rng rng(13);
    const std::size_t rows = 6, cols = 4;
    const int classes = 2, hidden = 7;
    std::vector<double> x(rows * cols);
    for (auto& v : x) v = rng.normal();
    std::vector<int> y(rows);
    for (auto& label : y) label = static_cast<int>(rng.uniform_below(classes));

    const std::size_t nparams = hidden * cols + hidden + classes * hidden + classes;
    std::vector<double> params(nparams);
    // Keep parameters away from the ReLU kink so the finite-difference oracle
    // sees a smooth function.
    for (auto& p : params) p = 0.8 * rng.normal() + 0.05;

    std::vector<double> analytic(nparams);
    detail::mlp_loss_grad(params, x, rows, cols, y, classes, hidden, analytic);
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& p) {
            std::vector<double> scratch(nparams);
            return detail::mlp_loss_grad(p, x, rows, cols, y, classes, hidden, scratch);
        },
        params, 1e-5);
    CHECK(max_relative_error(analytic, numeric) <= 1e-4);
}

TEST_CASE("logistic fit never ends above the zero-initialization loss") {
    for (std::uint64_t seed : {1, 2, 3}) {
        FeatureMatrix x;
        std::vector<int> y;
        gaussian_blobs(30, 4, 2.0, seed, x, y);
        const std::vector<double> xd(x.values.begin(), x.values.end());

        const std::size_t nparams = 2 * x.cols + 2;
        std::vector<double> scratch(nparams);
        const double zero_loss = detail::logistic_loss_grad(std::vector<double>(nparams, 0.0),
                                                            xd, x.rows, x.cols, y, 2, 1.0,
                                                            scratch);

        const auto model = fit(ModulatorKind::LogisticRegression, x, y, 2, seed);
        const auto j = model->to_json();
        const auto w = base64_to_floats(j["blocks"]["weights"]["f32"].get<std::string>());
        const auto b = base64_to_floats(j["blocks"]["bias"]["f32"].get<std::string>());
        std::vector<double> params(w.begin(), w.end());
        params.insert(params.end(), b.begin(), b.end());
        const double fitted_loss =
            detail::logistic_loss_grad(params, xd, x.rows, x.cols, y, 2, 1.0, scratch);
        CHECK(fitted_loss <= zero_loss);
    }
}

TEST_CASE("zero-weight logistic predicts uniformly") {
    const auto model = zero_logistic(4, 3);
    const auto proba = model->predict_proba(std::vector<float>{1.0f, -2.0f, 0.5f});
    for (double p : proba) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(model->predict(std::vector<float>{1.0f, -2.0f, 0.5f}) == 0);  // tie rule
}

TEST_CASE("scaling logistic logits leaves predictions unchanged") {
    FeatureMatrix x;
    std::vector<int> y;
    gaussian_blobs(40, 6, 3.0, 21, x, y);
    const auto model = fit(ModulatorKind::LogisticRegression, x, y, 2, 21);
    auto j = model->to_json();
    auto w = base64_to_floats(j["blocks"]["weights"]["f32"].get<std::string>());
    auto b = base64_to_floats(j["blocks"]["bias"]["f32"].get<std::string>());
    for (auto& v : w) v *= 3.5f;
    for (auto& v : b) v *= 3.5f;
    j["blocks"]["weights"]["f32"] = floats_to_base64(w);
    j["blocks"]["bias"]["f32"] = floats_to_base64(b);
    const auto scaled = FittedModulator::from_json(j);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const std::span<const float> row(x.row(i), x.cols);
        CHECK(model->predict(row) == scaled->predict(row));
    }
}

TEST_CASE("knn equals the exhaustive-scan oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 20 + rng.uniform_below(180);  // |R| <= 200
        const std::size_t dim = 2 + rng.uniform_below(6);
        const int classes = 2 + static_cast<int>(rng.uniform_below(3));
        FeatureMatrix x;
        std::vector<int> y;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<float> row(dim);
            for (auto& v : row) v = static_cast<float>(rng.normal());
            x.append_row(row);
            y.push_back(static_cast<int>(rng.uniform_below(classes)));
        }
        // Ensure at least two classes are present.
        y[0] = 0;
        y[1] = 1;
        ModulatorOptions opt;
        opt.knn_k = 1 + static_cast<int>(rng.uniform_below(8));
        const auto model = fit(ModulatorKind::NearestNeighbors, x, y, classes, 0, opt);

        std::vector<float> query(dim);
        for (auto& v : query) v = static_cast<float>(rng.normal());

        // Exhaustive scan: sort every (distance, index) pair, count the first
        // k labels, argmax with smallest-id ties.
        std::vector<std::pair<double, std::size_t>> order(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = static_cast<double>(x.row(i)[d]) - query[d];
                d2 += diff * diff;
            }
            order[i] = {d2, i};
        }
        std::sort(order.begin(), order.end());
        std::vector<int> votes(classes, 0);
        for (int i = 0; i < opt.knn_k; ++i) votes[y[order[i].second]]++;
        int oracle = 0;
        for (int c = 1; c < classes; ++c) {
            if (votes[c] > votes[oracle]) oracle = c;
        }

        CHECK(model->predict(std::span<const float>(query)) == oracle);
    }
}

TEST_CASE("knn with k=1 is one-hot on the matching training point") {
    const auto x = matrix_from_rows({{0.0f, 0.0f}, {5.0f, 5.0f}, {9.0f, 0.0f}});
    const std::vector<int> y{0, 1, 2};
    ModulatorOptions opt;
    opt.knn_k = 1;
    const auto model = fit(ModulatorKind::NearestNeighbors, x, y, 3, 0, opt);
    const auto proba = model->predict_proba(std::vector<float>{5.0f, 5.0f});
    CHECK(proba == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(model->predict(std::vector<float>{5.0f, 5.0f}) == 1);
}

TEST_CASE("row permutation leaves lr, knn and tree predictions unchanged") {
    FeatureMatrix x;
    std::vector<int> y;
    gaussian_blobs(40, 5, 4.0, 17, x, y);

    FeatureMatrix shuffled;
    std::vector<int> shuffled_y;
    std::vector<std::size_t> perm(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) perm[i] = (i * 37 + 11) % x.rows;
    for (std::size_t i : perm) {
        shuffled.append_row(std::vector<float>(x.row(i), x.row(i) + x.cols));
        shuffled_y.push_back(y[i]);
    }

    for (ModulatorKind kind : {ModulatorKind::LogisticRegression,
                               ModulatorKind::NearestNeighbors, ModulatorKind::DecisionTree}) {
        const auto a = fit(kind, x, y, 2, 3);
        const auto b = fit(kind, shuffled, shuffled_y, 2, 3);
        Rng rng(55);
        for (int probe = 0; probe < 50; ++probe) {
            std::vector<float> q(x.cols);
            for (auto& v : q) v = static_cast<float>(3.0 * rng.normal());
            CHECK(a->predict(std::span<const float>(q)) == b->predict(std::span<const float>(q)));
        }
    }
}

TEST_CASE("tree fits an xor pattern exactly") {
    const auto x = matrix_from_rows({{0.0f, 0.0f}, {0.0f, 1.0f}, {1.0f, 0.0f}, {1.0f, 1.0f}});
    const std::vector<int> y{0, 1, 1, 0};
    const auto model = fit(ModulatorKind::DecisionTree, x, y, 2, 0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        CHECK(model->predict(std::span<const float>(x.row(i), x.cols)) == y[i]);
    }
}

TEST_CASE("probability outputs sum to one and argmax equals predict") {
    FeatureMatrix x;
    std::vector<int> y;
    gaussian_blobs(25, 6, 2.0, 41, x, y);
    Rng rng(42);
    for (ModulatorKind kind :
         {ModulatorKind::LogisticRegression, ModulatorKind::LinearSvm, ModulatorKind::Mlp,
          ModulatorKind::NearestNeighbors, ModulatorKind::DecisionTree}) {
        const auto model = fit(kind, x, y, 2, 9);
        for (int probe = 0; probe < 20; ++probe) {
            std::vector<float> q(x.cols);
            for (auto& v : q) v = static_cast<float>(2.0 * rng.normal());
            const auto proba = model->predict_proba(std::span<const float>(q));
            double sum = 0.0;
            for (double p : proba) {
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
            CHECK(model->predict(std::span<const float>(q)) == argmax_label(proba));
        }
    }
}

TEST_CASE("uniform and skewed probabilities follow the tie rules") {
    CHECK(argmax_label({1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
    CHECK(argmax_label({0.1, 0.8, 0.1}) == 1);
    CHECK(argmax_label({0.4, 0.4, 0.2}) == 0);
}

TEST_CASE("dimension mismatch on predict is rejected") {
    const auto model = zero_logistic(2, 3);
    CHECK_THROWS_WITH_AS(model->predict(std::vector<float>{1.0f}),
                         doctest::Contains("DimensionMismatch"), Error);
}

TEST_CASE("all five kinds survive json persistence") {
    FeatureMatrix x;
    std::vector<int> y;
    gaussian_blobs(30, 4, 3.0, 23, x, y);
    Rng rng(71);
    for (ModulatorKind kind :
         {ModulatorKind::LogisticRegression, ModulatorKind::LinearSvm, ModulatorKind::Mlp,
          ModulatorKind::NearestNeighbors, ModulatorKind::DecisionTree}) {
        const auto model = fit(kind, x, y, 2, 5);
        const auto reloaded = FittedModulator::from_json(model->to_json());
        CHECK(reloaded->kind() == kind);
        CHECK(reloaded->num_classes() == 2);
        CHECK(reloaded->input_dim() == x.cols);
        for (int probe = 0; probe < 25; ++probe) {
            std::vector<float> q(x.cols);
            for (auto& v : q) v = static_cast<float>(2.5 * rng.normal());
            const auto before = model->predict_proba(std::span<const float>(q));
            const auto after = reloaded->predict_proba(std::span<const float>(q));
            CHECK(model->predict(std::span<const float>(q)) ==
                  reloaded->predict(std::span<const float>(q)));
            for (std::size_t c = 0; c < before.size(); ++c) {
                CHECK(after[c] == doctest::Approx(before[c]).epsilon(1e-4));
            }
        }
    }
}

}  // TEST_SUITE
