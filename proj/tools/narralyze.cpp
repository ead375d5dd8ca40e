// narralyze: batch command-line front end.
//
//   narralyze [--config run.toml] [--seed N] [--offline] [--out DIR] <command> [options]
//
// Exit codes: 0 ok, 1 validation error, 2 provider/network error, 3 internal error.

#include "narralyze/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace narralyze;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kValidation = 1, kProvider = 2, kInternal = 3 };

struct Options {
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    bool offline = false;
    std::optional<fs::path> out;
    std::vector<std::string> overrides;
    std::optional<std::size_t> threads;

    // synth
    std::optional<std::size_t> n;
    std::optional<double> signal;
    // ingest / extract
    std::optional<fs::path> corpus;
    std::optional<fs::path> dictionary;
    std::optional<std::string> layers;
    // train
    std::optional<std::string> classifier;
    std::optional<std::size_t> trees;
    bool quiet = false;
};

pipeline::RunConfig resolve(const Options& o) {
    pipeline::RunConfig cfg;
    if (o.config) cfg = pipeline::load_config(*o.config);
    for (const auto& s : o.overrides) pipeline::apply_override(cfg, s);
    if (o.seed) cfg.seed = *o.seed;
    if (o.offline) cfg.offline = true;
    if (o.out) cfg.out = *o.out;
    if (o.threads) cfg.params.threads = *o.threads;
    if (o.n) cfg.synth.n = *o.n;
    if (o.signal) cfg.synth.signal_strength = *o.signal;
    if (o.corpus) cfg.corpus = *o.corpus;
    if (o.dictionary) cfg.dictionary = *o.dictionary;
    if (o.layers) {
        cfg.l1 = cfg.l2 = cfg.l3 = false;
        std::stringstream ss(*o.layers);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (part == "l1" || part == "L1") cfg.l1 = true;
            else if (part == "l2" || part == "L2") cfg.l2 = true;
            else if (part == "l3" || part == "L3") cfg.l3 = true;
            else throw ValidationError("--layers takes a comma list of l1,l2,l3; got '" + part + "'");
        }
    }
    if (o.classifier) pipeline::apply_override(cfg, "model.classifier=\"" + *o.classifier + "\"");
    if (o.trees) cfg.params.n_trees = *o.trees;
    return cfg;
}

int run(const std::string& command, const Options& o) {
    const auto cfg = resolve(o);
    pipeline::CommandResult r;
    if (command == "synth") r = pipeline::cmd_synth(cfg);
    else if (command == "ingest") r = pipeline::cmd_ingest(cfg);
    else if (command == "extract") r = pipeline::cmd_extract(cfg);
    else if (command == "evaluate") r = pipeline::cmd_evaluate(cfg);
    else if (command == "train") r = pipeline::cmd_train(cfg);
    else if (command == "explain") r = pipeline::cmd_explain(cfg);
    else if (command == "report") r = pipeline::cmd_report(cfg);
    constexpr std::size_t kMaxShown = 20;
    for (std::size_t i = 0; i < r.warnings.size() && i < kMaxShown; ++i) std::cerr << "warning: " << r.warnings[i] << '\n';
    if (r.warnings.size() > kMaxShown) std::cerr << "warning: ... " << r.warnings.size() - kMaxShown << " more\n";
    if (!o.quiet)
        for (const auto& p : r.written) std::cout << p.generic_string() << '\n';
    if (command == "report" && !o.quiet) std::cout << '\n' << pipeline::read_text(pipeline::Artifacts{cfg.out}.table());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"narralyze: multi-layer narrative feature extraction and tree-ensemble analysis"};
    app.require_subcommand(1);
    Options o;
    std::string config, out;
    std::uint64_t seed = 0;
    app.add_option("--config", config, "TOML run configuration")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Random seed");
    app.add_flag("--offline", o.offline, "Serve provider calls from cache only");
    app.add_option("--out", out, "Output directory");
    app.add_option("--set", o.overrides, "Config override, e.g. --set model.n_trees=100 (repeatable)")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    std::size_t threads = 0;
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads (0 = all cores)");
    app.add_flag("-q,--quiet", o.quiet, "Print nothing on success");

    std::size_t n = 0;
    double signal = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted signal");
    auto* n_opt = synth->add_option("--n", n, "Number of samples");
    auto* signal_opt = synth->add_option("--signal-strength", signal, "Planted signal strength (0 = null control)");

    std::string corpus, dict, layers, classifier;
    std::size_t trees = 0;
    auto* ingest = app.add_subcommand("ingest", "Validate a JSONL corpus and keep eligible samples");
    auto* corpus_opt = ingest->add_option("--corpus", corpus, "Input JSONL corpus")->check(CLI::ExistingFile);
    auto* dict_opt1 = ingest->add_option("--dict", dict, "Lexical dictionary file");
    auto* extract = app.add_subcommand("extract", "Compute L1/L2 (and optionally L3) features");
    auto* dict_opt2 = extract->add_option("--dict", dict, "Lexical dictionary file");
    auto* layers_opt = extract->add_option("--layers", layers, "Comma list of layers to compute (l1,l2,l3)");
    app.add_subcommand("evaluate", "Run the three LLM evaluation protocols");
    auto* train = app.add_subcommand("train", "Cross-validate all tasks x feature combinations");
    auto* clf_opt = train->add_option("--classifier", classifier, "extratrees or gbdt");
    auto* trees_opt = train->add_option("--trees", trees, "Trees per ensemble");
    app.add_subcommand("explain", "TreeSHAP summaries for the trained models");
    app.add_subcommand("report", "Table and radar data from the CV report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }
    if (!config.empty()) o.config = config;
    if (*seed_opt) o.seed = seed;
    if (!out.empty()) o.out = out;
    if (*threads_opt) o.threads = threads;
    if (*n_opt) o.n = n;
    if (*signal_opt) o.signal = signal;
    if (*corpus_opt) o.corpus = corpus;
    if (*dict_opt1 || *dict_opt2) o.dictionary = dict;
    if (*layers_opt) o.layers = layers;
    if (*clf_opt) o.classifier = classifier;
    if (*trees_opt) o.trees = trees;

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, o);
    } catch (const narralyze::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const narralyze::ProviderError& e) {
        std::cerr << "provider error: " << e.what() << '\n';
        return kProvider;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInternal;
    }
}
