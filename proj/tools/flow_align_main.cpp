#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowalign/config.hpp"
#include "flowalign/errors.hpp"
#include "flowalign/stages.hpp"
#include "flowalign/worldgen.hpp"

namespace {

using namespace flowalign;

int run_experiment(runner::Stage stage, const std::string& config_path,
                   const std::string& preset_name, std::optional<uint64_t> seed,
                   const std::string& out_dir, bool deterministic, const std::string& text) {
    const runner::Preset preset = runner::preset_from_string(preset_name);
    runner::ExperimentConfig config;
    if (!config_path.empty()) {
        config = runner::load_config_file(config_path, preset, stage);
    } else if (stage == runner::Stage::tokenize || stage == runner::Stage::gradcheck) {
        nlohmann::json doc = nlohmann::json::object();
        config = runner::parse_config(doc, preset, stage);
    } else {
        std::cerr << "error: --config is required for the " << runner::to_string(stage)
                  << " stage\n";
        return 2;
    }
    if (seed) {
        config.seed = *seed;
    }
    if (!out_dir.empty()) {
        config.out_dir = out_dir;
    }
    if (deterministic) {
        config.workers = 1;
    }
    if (!text.empty()) {
        config.tokenize.text = text;
    }

    const runner::StageResult result = runner::run_stage(config);
    if (!result.message.empty()) {
        std::cout << result.message << "\n";
    }
    if (!result.checkpoint.empty()) {
        std::cout << "checkpoint: " << result.checkpoint.string() << "\n";
    }
    if (!result.metrics.empty()) {
        std::cout << "metrics: " << result.metrics.string() << "\n";
    }
    return result.ok ? 0 : 1;
}

int run_curate(const std::string& input, const std::string& report_path, int min_edge,
               double min_aspect, double max_aspect, double min_aesthetic) {
    worldgen::FilterThresholds thresholds;
    thresholds.min_edge = min_edge;
    thresholds.min_aspect = min_aspect;
    thresholds.max_aspect = max_aspect;
    thresholds.min_aesthetic = min_aesthetic;
    const auto records = worldgen::read_records_file(input);
    const worldgen::FilterReport report = worldgen::run_filter(records, thresholds);
    worldgen::write_filter_report(report_path, report);
    std::cout << "records: " << records.size() << " kept: " << report.kept
              << " report: " << report_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-align: desk-scale flow-matching alignment laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset = "rl-text";
    std::optional<uint64_t> seed;
    std::string out_dir;
    bool deterministic = false;
    std::string text;

    const auto add_common = [&](CLI::App* cmd, bool config_required) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config JSON");
        if (config_required) {
            opt->required();
        }
        cmd->add_option("--preset", preset, "hyperparameter preset: rl-text (default) or table1");
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out", out_dir, "override the output directory");
        cmd->add_flag("--deterministic", deterministic,
                      "force single-threaded execution (workers = 1)");
    };

    for (runner::Stage stage :
         {runner::Stage::pretrain, runner::Stage::sft, runner::Stage::dpo, runner::Stage::grpo,
          runner::Stage::mpo, runner::Stage::eval}) {
        add_common(app.add_subcommand(runner::to_string(stage), ""), true);
    }
    add_common(app.add_subcommand("gradcheck", "finite-difference gradient fidelity check"),
               false);
    auto* tok = app.add_subcommand("tokenize", "echo prompt token spans as JSON");
    add_common(tok, false);
    tok->add_option("--text", text, "prompt to segment");

    auto* cur = app.add_subcommand("curate", "filter metadata records, write a reason report");
    std::string curate_input;
    std::string curate_report = "filter_report.csv";
    int min_edge = 384;
    double min_aspect = 0.25, max_aspect = 4.0, min_aesthetic = 4.5;
    cur->add_option("--input", curate_input, "metadata records (JSON lines)")->required();
    cur->add_option("--report", curate_report, "output CSV path");
    cur->add_option("--min-edge", min_edge, "shortest-edge threshold in pixels");
    cur->add_option("--min-aspect", min_aspect, "minimum aspect ratio");
    cur->add_option("--max-aspect", max_aspect, "maximum aspect ratio");
    cur->add_option("--min-aesthetic", min_aesthetic, "minimum aesthetic score");

    CLI11_PARSE(app, argc, argv);

    try {
        const CLI::App* sub = app.get_subcommands().front();
        if (sub->get_name() == "curate") {
            return run_curate(curate_input, curate_report, min_edge, min_aspect, max_aspect,
                              min_aesthetic);
        }
        return run_experiment(runner::stage_from_string(sub->get_name()), config_path, preset,
                              seed, out_dir, deterministic, text);
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
