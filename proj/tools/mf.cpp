#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mf/pipeline.hpp"
#include "mf/util.hpp"

namespace {

void apply_log_level() {
    const char* env = std::getenv("MF_LOG_LEVEL");
    if (!env) return;
    static const std::map<std::string, mf::LogLevel> levels{{"error", mf::LogLevel::error},
                                                            {"warn", mf::LogLevel::warn},
                                                            {"info", mf::LogLevel::info},
                                                            {"debug", mf::LogLevel::debug}};
    auto it = levels.find(env);
    if (it == levels.end()) throw mf::InputError(std::string("MF_LOG_LEVEL must be error|warn|info|debug, got '") + env + "'");
    mf::set_log_level(it->second);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mf: latent party-preference forecasting from MLP value vectors"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(mf::kVersion));

    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<double> entropy_threshold, fence;
    std::optional<std::size_t> templates, personas;
    std::optional<std::string> norm;

    app.add_option("--config", config_path, "Run config JSON")->required();
    app.add_option("--out", out, "Output directory (overrides config)");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--entropy-threshold", entropy_threshold, "Normalized-entropy gate threshold");
    app.add_option("--fence", fence, "IQR fence multiplier")->check(CLI::PositiveNumber);
    app.add_option("--templates", templates, "Prompt templates per persona")->check(CLI::PositiveNumber);
    app.add_option("--personas", personas, "Sampled personas")->check(CLI::PositiveNumber);
    app.add_option("--norm", norm, "Latent normalization")->check(CLI::IsMember({"minshift", "softmax"}));

    const std::map<std::string, void (*)(const mf::RunConfig&)> commands{
        {"synth", mf::cmd_synth},       {"probe", mf::cmd_probe},       {"select", mf::cmd_select},
        {"forecast", mf::cmd_forecast}, {"evaluate", mf::cmd_evaluate}, {"pipeline", mf::cmd_pipeline},
    };
    const std::map<std::string, std::string> help{
        {"synth", "Build a planted model, synthetic survey and ground truth"},
        {"probe", "Train party probes over the layer band"},
        {"select", "Select and validate party value vectors"},
        {"forecast", "Record activations and build latent/prob distributions"},
        {"evaluate", "Compare against the survey and write reports"},
        {"pipeline", "Run every stage in order"},
    };
    for (const auto& [name, _] : commands) app.add_subcommand(name, help.at(name));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_log_level();
        mf::RunConfig cfg = mf::RunConfig::load(config_path);
        if (out) cfg.output_dir = *out;
        else cfg.output_dir = cfg.resolve(cfg.output_dir);
        if (seed) cfg.seed = *seed;
        if (workers) cfg.workers = *workers;
        if (entropy_threshold) cfg.entropy_threshold = *entropy_threshold;
        if (fence) cfg.fence = *fence;
        if (templates) cfg.templates = *templates;
        if (personas) cfg.personas = *personas;
        if (norm) cfg.latent.norm = *norm == "softmax" ? mf::LatentNorm::softmax : mf::LatentNorm::minshift;

        const std::string name = app.get_subcommands().front()->get_name();
        commands.at(name)(cfg);
        return 0;
    } catch (const mf::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
