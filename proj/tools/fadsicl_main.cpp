// fadsicl command line: cache population, modulator training, scoring and
// multi-seed evaluation on top of the library. Exit codes: 0 ok, 2 config
// error, 3 backend failure, 4 data error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fadsicl/dataset_io.hpp"
#include "fadsicl/harness.hpp"
#include "fadsicl/http_backend.hpp"
#include "fadsicl/pipeline.hpp"
#include "fadsicl/prompting.hpp"

namespace {

using namespace fadsicl;

struct CommonArgs {
    std::string dataset_path;
    std::string backend_path;
    std::string method = "fads";
    std::vector<int> shots = {32};
    std::string demos = "1";
    std::string features = "hidden";
    std::string modulator = "lr";
    std::string seeds = "0,1,2,3,4";
    std::string cache_dir;
    std::string out_path;
    std::size_t max_test = 0;
    std::size_t context_budget = 1024;
    std::optional<int> vote_k;
    double vote_lambda = 0.5;
    double vote_tau = 1.0;
    int workers = 1;
};

Method parse_method(const std::string& name) {
    if (name == "fads") return Method::Fads;
    if (name == "icl") return Method::VanillaIcl;
    if (name == "knn-prompting") return Method::KnnPrompting;
    if (name == "knn-prompt") return Method::KnnPrompt;
    throw_config("BadConfig", "unknown method '" + name + "'");
}

ModulatorKind parse_modulator(const std::string& name) {
    if (name == "lr") return ModulatorKind::LogisticRegression;
    if (name == "svm") return ModulatorKind::LinearSvm;
    if (name == "mlp") return ModulatorKind::Mlp;
    if (name == "knn") return ModulatorKind::NearestNeighbors;
    if (name == "tree") return ModulatorKind::DecisionTree;
    throw_config("BadConfig", "unknown modulator '" + name + "'");
}

DemoRegime parse_demos(const std::string& text) {
    if (text == "none") return DemoRegime::none();
    if (text == "most") return DemoRegime::most();
    try {
        return DemoRegime::fixed(std::stoi(text));
    } catch (const std::exception&) {
        throw_config("BadConfig", "--demos expects an integer, 'most' or 'none'");
    }
}

FeatureKind parse_features(const std::string& text) {
    if (text == "hidden") return FeatureKind::hidden();
    if (text.rfind("fuzzy:", 0) == 0) {
        try {
            return FeatureKind::fuzzy(std::stoi(text.substr(6)));
        } catch (const std::exception&) {
        }
    }
    throw_config("BadConfig", "--features expects 'hidden' or 'fuzzy:<k>'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw_config("BadConfig", "--seeds needs at least one seed");
    return seeds;
}

void require_single_shot_setting(const CommonArgs& args, const char* command) {
    if (args.shots.size() != 1) {
        throw_config("BadConfig", std::string(command) +
                                      " takes one --shots value; use compare for grids");
    }
}

ExperimentConfig build_config(const CommonArgs& args, int shots) {
    ExperimentConfig cfg;
    cfg.method = parse_method(args.method);
    cfg.shots_per_class = shots;
    cfg.demo_regime = parse_demos(args.demos);
    cfg.feature_kind = parse_features(args.features);
    cfg.modulator_kind = parse_modulator(args.modulator);
    cfg.seeds = parse_seeds(args.seeds);
    cfg.max_test = args.max_test;
    cfg.context_budget = args.context_budget;
    cfg.vote.k = args.vote_k;
    cfg.vote.lambda = args.vote_lambda;
    cfg.vote.temperature = args.vote_tau;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_method) {
    cmd->add_option("--dataset", args.dataset_path, "dataset manifest (JSON)")->required();
    cmd->add_option("--backend", args.backend_path, "backend descriptor file (JSON)")->required();
    if (needs_method) {
        cmd->add_option("--method", args.method, "fads|icl|knn-prompting|knn-prompt");
    }
    cmd->add_option("--demos", args.demos, "demonstrations per class, 'most' or 'none'");
    cmd->add_option("--features", args.features, "hidden|fuzzy:<k>");
    cmd->add_option("--modulator", args.modulator, "lr|svm|mlp|knn|tree");
    cmd->add_option("--seeds", args.seeds, "comma-separated seed list");
    cmd->add_option("--cache", args.cache_dir, "feature cache directory");
    cmd->add_option("--out", args.out_path, "output path");
    cmd->add_option("--max-test", args.max_test, "cap on test samples (0 = all)");
    cmd->add_option("--budget", args.context_budget, "context budget in tokens");
    cmd->add_option("--k", args.vote_k, "neighbor count (default: ceil(sqrt(|R|)))");
    cmd->add_option("--lambda", args.vote_lambda, "kNN-prompt interpolation weight");
    cmd->add_option("--tau", args.vote_tau, "kNN-prompt temperature");
    cmd->add_option("--workers", args.workers, "concurrent evaluation cells");
}

std::unique_ptr<FeatureCacheStore> open_store(const CommonArgs& args) {
    if (args.cache_dir.empty()) return nullptr;
    return std::make_unique<FeatureCacheStore>(args.cache_dir);
}

// --- subcommand bodies -----------------------------------------------------

int cmd_extract(const CommonArgs& args) {
    require_single_shot_setting(args, "extract");
    const auto dataset = load_dataset(args.dataset_path);
    const auto descriptor = BackendDescriptor::load(args.backend_path);
    const auto backend = make_backend(descriptor, &dataset);
    auto store = open_store(args);
    if (!store) throw_config("BadConfig", "extract needs --cache");

    ExperimentConfig cfg = build_config(args, args.shots.front());
    cfg.method = Method::Fads;
    std::size_t calls = 0;
    for (std::uint64_t seed : cfg.seeds) {
        const auto out = run_fads(dataset, cfg, *backend, store.get(), seed);
        calls += out.metadata.value("backend_calls", std::size_t{0});
    }
    store->flush();
    std::cout << "cache populated: " << calls << " backend calls over " << cfg.seeds.size()
              << " seeds\n";
    return 0;
}

int cmd_fit(const CommonArgs& args) {
    require_single_shot_setting(args, "fit");
    const auto dataset = load_dataset(args.dataset_path);
    const auto descriptor = BackendDescriptor::load(args.backend_path);
    const auto backend = make_backend(descriptor, &dataset);
    auto store = open_store(args);

    ExperimentConfig cfg = build_config(args, args.shots.front());
    cfg.method = Method::Fads;
    const std::uint64_t seed = cfg.seeds.front();
    auto out = run_fads(dataset, cfg, *backend, store.get(), seed);

    // Self-contained predictor bundle: the modulator plus everything needed
    // to reproduce its input features for new texts.
    nlohmann::json bundle{
        {"format", "fadsicl-bundle"},
        {"version", 1},
        {"modulator", out.modulator->to_json()},
        {"backend", backend->id()},
        {"classes", dataset.classes},
        {"verbalizer", dataset.verbalizer},
        {"template",
         {{"example_pattern", dataset.prompt_template.example_pattern},
          {"separator", dataset.prompt_template.separator},
          {"query_pattern", dataset.prompt_template.query_pattern}}},
        {"feature_kind", cfg.feature_kind.tag_string()},
        {"demos", nlohmann::json::array()},
        {"metadata", out.metadata}};
    nlohmann::json demos = nlohmann::json::array();
    const auto shots = sample_shots(dataset, cfg.shots_per_class, seed);
    TrainSplit split = split_train(shots, cfg.demo_regime, seed);
    for (const auto& demo : split.demonstrations) {
        demos.push_back({{"text", demo.text}, {"label", demo.label}});
    }
    bundle["demos"] = demos;
    if (out.metadata.contains("fuzzy_selector")) {
        bundle["fuzzy_selector"] = out.metadata["fuzzy_selector"];
        bundle["fuzzy_k"] = cfg.feature_kind.k;
    }

    const std::string path = args.out_path.empty() ? "modulator.json" : args.out_path;
    std::ofstream file(path, std::ios::trunc);
    file << bundle.dump(2) << "\n";
    if (!file.good()) throw_data("WriteFailed", "cannot write " + path);
    std::cout << "fitted " << args.modulator << " on " << out.features.residual_features.rows
              << " residual samples (seed " << seed << "), accuracy "
              << out.accuracy() << " on " << out.predictions.size() << " test samples\n"
              << "bundle written to " << path << "\n";
    return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& model_path,
                const std::string& input_path) {
    std::ifstream model_file(model_path);
    if (!model_file.good()) throw_data("MissingFile", "cannot read " + model_path);
    nlohmann::json bundle;
    model_file >> bundle;
    if (bundle.value("format", "") != "fadsicl-bundle") {
        throw_data("BadModel", model_path + " is not a predictor bundle");
    }

    const auto modulator = FittedModulator::from_json(bundle.at("modulator"));
    PromptTemplate tmpl;
    tmpl.example_pattern = bundle.at("template").at("example_pattern").get<std::string>();
    tmpl.separator = bundle.at("template").at("separator").get<std::string>();
    tmpl.query_pattern = bundle.at("template").at("query_pattern").get<std::string>();
    const auto verbalizer = bundle.at("verbalizer").get<std::vector<std::string>>();
    std::vector<LabeledExample> demos;
    for (const auto& d : bundle.at("demos")) {
        demos.push_back({d.at("text").get<std::string>(), d.at("label").get<int>()});
    }
    const PromptContext ctx(tmpl, verbalizer, demos);

    const auto descriptor = BackendDescriptor::load(args.backend_path);
    TaskDataset shim;  // binds the mock to the bundle's label space
    shim.name = "predict";
    shim.classes = bundle.at("classes").get<std::vector<std::string>>();
    shim.verbalizer = verbalizer;
    shim.prompt_template = tmpl;
    const auto backend = make_backend(descriptor, &shim);

    // Fuzzy bundles carry the selected token strings; featurizing by token
    // string keeps the coordinates aligned with training on any backend.
    std::vector<std::string> selector_tokens;
    const bool fuzzy = bundle.contains("fuzzy_selector");
    if (fuzzy) {
        selector_tokens =
            bundle.at("fuzzy_selector").at("tokens").get<std::vector<std::string>>();
    }

    std::ifstream in(input_path);
    if (!in.good()) throw_data("MissingFile", "cannot read " + input_path);
    std::ostream* out_stream = &std::cout;
    std::ofstream out_file;
    if (!args.out_path.empty()) {
        out_file.open(args.out_path, std::ios::trunc);
        out_stream = &out_file;
    }

    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto prompt = ctx.wrap(line);
        const SampleInfo info{line, -1};
        FeatureVector feature;
        if (fuzzy) {
            const auto dist = extract_distribution(*backend, prompt, &info);
            feature.kind = FeatureKind::fuzzy(bundle.at("fuzzy_k").get<int>());
            for (const auto& token : selector_tokens) {
                feature.values.push_back(static_cast<float>(dist.prob_of_token(token)));
            }
        } else {
            feature = extract_hidden(*backend, prompt, &info);
        }
        const auto proba = modulator->predict_proba(feature);
        const int predicted = argmax_label(proba);
        (*out_stream) << nlohmann::json{{"index", index},
                                        {"text", line},
                                        {"predicted", predicted},
                                        {"label_name", shim.classes[predicted]},
                                        {"proba", proba}}
                             .dump()
                      << "\n";
        ++index;
    }
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    require_single_shot_setting(args, "eval");
    const auto dataset = load_dataset(args.dataset_path);
    const auto descriptor = BackendDescriptor::load(args.backend_path);
    const auto backend = make_backend(descriptor, &dataset);
    auto store = open_store(args);

    const ExperimentConfig cfg = build_config(args, args.shots.front());

    std::ofstream out_file;
    const bool write_out = !args.out_path.empty();
    if (write_out) out_file.open(args.out_path, std::ios::trunc);

    std::vector<double> accuracies;
    for (std::uint64_t seed : cfg.seeds) {
        auto out = run_method(dataset, cfg, *backend, store.get(), seed);
        accuracies.push_back(out.accuracy());
        std::cout << "seed " << seed << ": accuracy " << out.accuracy() << " ("
                  << out.predictions.size() << " test samples)\n";
        if (write_out) {
            out.metadata["record"] = "run-metadata";
            out.metadata["accuracy"] = out.accuracy();
            out_file << out.metadata.dump() << "\n";
            write_predictions_jsonl(out_file, out.predictions, {{"seed", seed}});
        }
    }
    if (store) store->flush();
    const auto agg = aggregate_accuracies(accuracies);
    std::cout << method_name(cfg.method) << " m=" << cfg.shots_per_class << ": mean "
              << 100.0 * agg.mean << " population std " << 100.0 * agg.stddev << " over "
              << accuracies.size() << " seeds\n";
    return 0;
}

int cmd_compare(const CommonArgs& args, const std::vector<std::string>& methods) {
    const auto dataset = load_dataset(args.dataset_path);
    const auto descriptor = BackendDescriptor::load(args.backend_path);
    const auto backend = make_backend(descriptor, &dataset);
    auto store = open_store(args);

    std::vector<ExperimentConfig> grid;
    for (const auto& method : methods) {
        for (int shots : args.shots) {
            CommonArgs cell = args;
            cell.method = method;
            grid.push_back(build_config(cell, shots));
        }
    }
    const auto results = evaluate(dataset, grid, *backend, store.get(), args.workers);
    if (store) store->flush();

    for (const auto& r : results) {
        for (std::size_t s = 0; s < r.per_seed_error.size(); ++s) {
            if (!r.per_seed_error[s].empty()) {
                std::cerr << method_name(r.config.method) << " m=" << r.config.shots_per_class
                          << " seed " << r.seeds[s] << " failed: " << r.per_seed_error[s] << "\n";
            }
        }
    }

    const auto table = compare_table(results);
    std::cout << table.pretty;
    if (!args.out_path.empty()) {
        std::ofstream csv(args.out_path, std::ios::trunc);
        csv << table.csv;
        if (!csv.good()) throw_data("WriteFailed", "cannot write " + args.out_path);
        std::cout << "csv written to " << args.out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FADS-ICL: feature-adaptive few-shot classification over LLM backends"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string model_path, input_path;
    std::vector<std::string> methods{"fads", "icl", "knn-prompting", "knn-prompt"};

    auto* extract = app.add_subcommand("extract", "populate the feature cache");
    add_common(extract, args, false);
    extract->add_option("--shots", args.shots, "shots per class");

    auto* fit = app.add_subcommand("fit", "train a modulator and persist a predictor bundle");
    add_common(fit, args, false);
    fit->add_option("--shots", args.shots, "shots per class");

    auto* predict = app.add_subcommand("predict", "score a file of texts with a fitted bundle");
    predict->add_option("--model", model_path, "predictor bundle from 'fit'")->required();
    predict->add_option("--in", input_path, "input file, one text per line")->required();
    predict->add_option("--backend", args.backend_path, "backend descriptor file")->required();
    predict->add_option("--out", args.out_path, "predictions JSONL (default stdout)");

    auto* eval = app.add_subcommand("eval", "run one configuration over its seeds");
    add_common(eval, args, true);
    eval->add_option("--shots", args.shots, "shots per class");

    auto* compare = app.add_subcommand("compare", "run a method x shots grid and print a table");
    add_common(compare, args, true);  // --method restricts the grid to one row
    compare->add_option("--methods", methods, "methods to compare");
    compare->add_option("--shots", args.shots, "shot settings");

    CLI11_PARSE(app, argc, argv);

    try {
        if (extract->parsed()) return cmd_extract(args);
        if (fit->parsed()) return cmd_fit(args);
        if (predict->parsed()) return cmd_predict(args, model_path, input_path);
        if (eval->parsed()) return cmd_eval(args);
        if (compare->parsed()) {
            if (compare->count("--method") > 0) methods = {args.method};
            return cmd_compare(args, methods);
        }
    } catch (const fadsicl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return fadsicl::exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
