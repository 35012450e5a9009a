#include "fadsicl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <thread>

#include "fadsicl/encoding.hpp"

namespace fadsicl {

Aggregate aggregate_accuracies(const std::vector<double>& accuracies) {
    Aggregate out;
    if (accuracies.empty()) return out;
    double sum = 0.0;
    for (double a : accuracies) sum += a;
    out.mean = sum / static_cast<double>(accuracies.size());
    double sq = 0.0;
    for (double a : accuracies) sq += (a - out.mean) * (a - out.mean);
    out.stddev = std::sqrt(sq / static_cast<double>(accuracies.size()));
    return out;
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
    std::string canon = std::string(method_name(cfg.method)) + "|m=" +
                        std::to_string(cfg.shots_per_class) + "|demos=";
    switch (cfg.demo_regime.kind) {
        case DemoRegime::Kind::None: canon += "none"; break;
        case DemoRegime::Kind::Most: canon += "most"; break;
        case DemoRegime::Kind::Fixed:
            canon += std::to_string(cfg.demo_regime.per_class);
            break;
    }
    canon += "|feat=" + cfg.feature_kind.tag_string();
    canon += "|mod=" + std::string(modulator_name(cfg.modulator_kind));
    canon += "|budget=" + std::to_string(cfg.context_budget);
    if (cfg.vote.k) canon += "|k=" + std::to_string(*cfg.vote.k);
    return sha256_hex(canon).substr(0, 12);
}

std::vector<RunResult> evaluate(const TaskDataset& dataset,
                                const std::vector<ExperimentConfig>& grid, Backend& backend,
                                FeatureCacheStore* cache, int workers) {
    if (grid.empty()) throw_config("BadConfig", "empty configuration grid");

    struct Cell {
        std::size_t config_index;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::uint64_t seed : grid[i].seeds) cells.push_back({i, seed});
    }

    std::vector<double> cell_accuracy(cells.size(), 0.0);
    std::vector<std::string> cell_error(cells.size());

    auto run_cell = [&](std::size_t c) {
        try {
            const auto out = run_method(dataset, grid[cells[c].config_index], backend, cache,
                                        cells[c].seed);
            cell_accuracy[c] = out.accuracy();
        } catch (const Error& e) {
            cell_error[c] = e.what();
        }
    };

    if (workers <= 1) {
        for (std::size_t c = 0; c < cells.size(); ++c) run_cell(c);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= cells.size()) return;
                run_cell(c);
            }
        };
        std::vector<std::thread> pool;
        const int bound = std::min<int>(workers, static_cast<int>(cells.size()));
        pool.reserve(static_cast<std::size_t>(bound));
        for (int w = 0; w < bound; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<RunResult> results(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        results[i].config = grid[i];
        results[i].fingerprint = config_fingerprint(grid[i]);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto& result = results[cells[c].config_index];
        result.seeds.push_back(cells[c].seed);
        result.per_seed_error.push_back(cell_error[c]);
        if (cell_error[c].empty()) result.per_seed_accuracy.push_back(cell_accuracy[c]);
    }
    for (auto& result : results) {
        const auto agg = aggregate_accuracies(result.per_seed_accuracy);
        result.mean = agg.mean;
        result.stddev = agg.stddev;
    }

    std::stable_sort(results.begin(), results.end(), [](const RunResult& a, const RunResult& b) {
        if (a.config.method != b.config.method) {
            return static_cast<int>(a.config.method) < static_cast<int>(b.config.method);
        }
        return a.config.shots_per_class < b.config.shots_per_class;
    });
    return results;
}

namespace {

std::string format_cell(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f±%.1f", 100.0 * mean, 100.0 * stddev);
    return buf;
}

}  // namespace

ComparisonTable compare_table(const std::vector<RunResult>& results) {
    std::vector<std::string> methods;  // row order = first appearance
    std::set<int> shot_set;
    std::map<std::pair<std::string, int>, std::string> cells;
    for (const auto& r : results) {
        const std::string method = method_name(r.config.method);
        if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
            methods.push_back(method);
        }
        shot_set.insert(r.config.shots_per_class);
        cells[{method, r.config.shots_per_class}] = format_cell(r.mean, r.stddev);
    }
    const std::vector<int> shots(shot_set.begin(), shot_set.end());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"method"};
    for (int m : shots) header.push_back("m=" + std::to_string(m));
    rows.push_back(header);
    for (const auto& method : methods) {
        std::vector<std::string> row{method};
        for (int m : shots) {
            const auto it = cells.find({method, m});
            row.push_back(it == cells.end() ? "-" : it->second);
        }
        rows.push_back(row);
    }

    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            // ± is two bytes in UTF-8; count display columns.
            std::size_t display = row[i].size();
            for (std::size_t p = row[i].find("±"); p != std::string::npos;
                 p = row[i].find("±", p + 2)) {
                --display;
            }
            widths[i] = std::max(widths[i], display);
        }
    }

    ComparisonTable table;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::string line;
        for (std::size_t i = 0; i < rows[r].size(); ++i) {
            std::size_t display = rows[r][i].size();
            for (std::size_t p = rows[r][i].find("±"); p != std::string::npos;
                 p = rows[r][i].find("±", p + 2)) {
                --display;
            }
            line += rows[r][i];
            line.append(widths[i] - display + 2, ' ');
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        table.pretty += line + "\n";
        std::string csv_line;
        for (std::size_t i = 0; i < rows[r].size(); ++i) {
            if (i > 0) csv_line += ",";
            csv_line += rows[r][i];
        }
        table.csv += csv_line + "\n";
    }
    return table;
}

}  // namespace fadsicl
