// forgetlab: search, combine, evaluate and report layer-wise learning-rate
// distributions against catastrophic forgetting.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "forgetlab/commands.hpp"

namespace fl = forgetlab;

int main(int argc, char** argv) {
    CLI::App app{"forgetlab: layer-wise learning rates against catastrophic forgetting"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> workers;
    std::optional<double> b;
    std::optional<std::size_t> top_k;
    std::optional<std::string> dist;
    std::string mode = "flat";
    std::vector<std::string> files;

    auto* search = app.add_subcommand("search", "run the Hyperband search for every configured pair");
    search->add_option("--config", config, "experiment config")->required();
    search->add_option("--seed", seed, "override the global seed");
    search->add_option("--out", out, "output directory");
    search->add_option("--workers", workers, "parallel trials (default: FORGETLAB_WORKERS or config)");

    auto* combine = app.add_subcommand("combine", "fold trial logs into combined.csv");
    combine->add_option("logs", files, "trials_<pair>.jsonl files")->required();
    combine->add_option("--b", b, "rank weight base (default 1.8)");
    combine->add_option("--top-k", top_k, "use only the K best ranks");
    combine->add_option("--out", out, "output directory (default .)");

    auto* evaluate = app.add_subcommand("evaluate", "run the protocol and append to results.csv");
    evaluate->add_option("--config", config, "experiment config")->required();
    evaluate->add_option("--mode", mode, "flat, dist or ewc")->check(CLI::IsMember({"flat", "dist", "ewc"}));
    evaluate->add_option("--dist", dist, "distribution csv for --mode dist");
    evaluate->add_option("--seed", seed, "override the global seed");
    evaluate->add_option("--out", out, "output directory");

    auto* report = app.add_subcommand("report", "print distribution csvs and trial-log summaries");
    report->add_option("files", files, "csv or jsonl files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? fl::kExitOk : fl::kExitConfig;
    }

    fl::CommonOptions common;
    common.seed = seed;
    if (out) common.out = *out;
    common.workers = workers;

    if (search->parsed()) return fl::cmd_search(config, common, std::cerr);
    if (combine->parsed()) {
        std::vector<std::filesystem::path> logs(files.begin(), files.end());
        return fl::cmd_combine(logs, b, top_k, out.value_or("."), std::cerr);
    }
    if (evaluate->parsed()) {
        std::optional<std::filesystem::path> d;
        if (dist) d = *dist;
        return fl::cmd_evaluate(config, d, fl::parse_eval_mode(mode), common, std::cerr);
    }
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    return fl::cmd_report(paths, std::cout, std::cerr);
}
