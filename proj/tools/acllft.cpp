// acllft command-line entry point.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acllft/harness.hpp"

namespace fs = std::filesystem;
namespace h = acllft::harness;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config, "Config file (flat key = value)");
    cmd->add_option("--seed", opts.seed, "Single seed; overrides ACLLFT_SEED and the config's seed list");
    cmd->add_option("--out", opts.out, "Output directory; overrides the config's 'out'");
    cmd->add_option("--set", opts.overrides, "Extra 'key=value' applied after the config file")->take_all();
}

h::ExperimentConfig load(const CommonOptions& opts) {
    std::string text;
    std::string source = "<defaults>";
    if (!opts.config.empty()) {
        text = h::read_text_file(opts.config, "config file");
        source = opts.config;
    }
    for (const auto& o : opts.overrides) {
        text += "\n" + o;
    }
    auto cfg = h::config_from_text(text, source);
    if (!opts.out.empty()) {
        cfg.out = opts.out;
    }
    return cfg;
}

std::vector<std::uint64_t> seeds_for(const h::ExperimentConfig& cfg, const CommonOptions& opts) {
    return h::resolve_seeds(cfg, opts.seed, std::getenv("ACLLFT_SEED"));
}

std::string command_line(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        out += (i ? " " : "") + std::string(argv[i]);
    }
    return out;
}

int run_train(const CommonOptions& opts, const std::string& cmdline) {
    const auto cfg = load(opts);
    const auto seeds = seeds_for(cfg, opts);
    const fs::path out(cfg.out);
    const auto manifest_path = out / cfg.method() / "manifest.json";
    h::RunManifest manifest;
    manifest.config_hash = h::config_hash(cfg);
    manifest.command = cmdline;
    manifest.started_utc = h::utc_now();
    h::guard_manifest(manifest_path, manifest.config_hash, opts.force);
    const auto t0 = std::chrono::steady_clock::now();
    bool diverged = false;
    for (const auto seed : seeds) {
        const auto outcome = h::train_seed(cfg, seed, out, &std::cerr);
        manifest.seed_outputs[std::to_string(seed)] = h::seed_paths(out, cfg.method(), seed).dir.string();
        std::cout << cfg.method() << " seed " << seed << ": random " << h::fmt(outcome.random_baseline) << ", initial "
                  << h::fmt(outcome.initial_eval) << ", final " << h::fmt(outcome.final_eval) << "\n";
        if (outcome.diverged) {
            std::cerr << "seed " << seed << ": " << outcome.message << "\n";
            diverged = true;
        }
    }
    manifest.finished_utc = h::utc_now();
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    h::write_json(manifest_path, manifest.to_json());
    return diverged ? 2 : 0;
}

int run_eval(const CommonOptions& opts, const std::string& checkpoint_arg) {
    const auto cfg = load(opts);
    const auto seeds = seeds_for(cfg, opts);
    acllft::detail::require(checkpoint_arg.empty() || seeds.size() == 1, "eval: --checkpoint needs a single seed");
    nlohmann::json report = nlohmann::json::array();
    for (const auto seed : seeds) {
        auto local = cfg;
        local.trainer.seed = seed;
        const auto paths = h::seed_paths(cfg.out, cfg.method(), seed);
        const fs::path checkpoint = checkpoint_arg.empty() ? paths.checkpoint : fs::path(checkpoint_arg);
        acllft::envs::SpreadEnv env(local.spread);
        auto trainer = acllft::marl::Trainer::for_env(local.trainer, env);
        h::load_trainer_checkpoint(trainer, h::read_json(checkpoint, "checkpoint"));
        const auto eval_seeds = acllft::marl::Trainer::eval_seeds(local.trainer);
        const auto result = trainer.evaluate(env, eval_seeds);
        nlohmann::json counts = nlohmann::json::object();
        for (const auto& [length, count] : result.length_counts) {
            counts[std::to_string(length)] = count;
        }
        report.push_back({{"seed", seed},
                          {"checkpoint", checkpoint.string()},
                          {"mean_return", result.mean_return},
                          {"std_return", result.std_return},
                          {"central_entropy", result.central_entropy},
                          {"length_counts", counts}});
    }
    std::cout << report.dump(2) << "\n";
    return 0;
}

int run_spectral(const CommonOptions& opts, const std::string& input) {
    const auto cfg = load(opts);
    const auto signal = input.empty() ? h::demo_signal() : h::read_signal_csv(input);
    const fs::path dir = fs::path(cfg.out) / "spectral";
    const auto result = h::spectral_demo(signal, cfg.spectral_m, cfg.spectral_mode, dir);
    std::cout << "t=" << result.bank.t << " m=" << cfg.spectral_m << " residual=" << result.bank.residual_set.size()
              << " reconstruction_error=" << h::fmt(result.reconstruction_error) << "\n"
              << "wrote " << (dir / "components.csv").string() << "\n";
    return 0;
}

int run_theorem(const CommonOptions& opts, const std::string& cmdline) {
    const auto cfg = load(opts);
    const auto seeds = seeds_for(cfg, opts);
    const fs::path base = fs::path(cfg.out) / "theorem";
    h::RunManifest manifest;
    manifest.config_hash = h::config_hash(cfg);
    manifest.command = cmdline;
    manifest.started_utc = h::utc_now();
    h::guard_manifest(base / "manifest.json", manifest.config_hash, opts.force);
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto seed : seeds) {
        const fs::path dir = base / ("seed_" + std::to_string(seed));
        const auto report = h::theorem_check_seed(cfg, seed, dir);
        manifest.seed_outputs[std::to_string(seed)] = dir.string();
        std::cout << "seed " << seed << ": best fixed " << h::fmt(report.best_fixed_total());
        for (const char* name : {"oracle", "learned"}) {
            for (const auto& c : report.curves) {
                if (c.name == name) {
                    std::cout << ", " << name << " " << h::fmt(c.cumulative.back());
                }
            }
        }
        std::cout << "\n";
    }
    manifest.finished_utc = h::utc_now();
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    h::write_json(base / "manifest.json", manifest.to_json());
    return 0;
}

int run_compare(const CommonOptions& opts) {
    const auto cfg = load(opts);
    const auto rows = h::compare_fixed(cfg, seeds_for(cfg, opts), cfg.out);
    for (const auto& r : rows) {
        std::cout << r.method << " seed " << r.seed << ": " << h::fmt(r.mean_return) << " +- " << h::fmt(r.std_return)
                  << " (" << r.window_points << " points)\n";
    }
    std::cout << "wrote " << (fs::path(cfg.out) / "comparison.csv").string() << "\n";
    return 0;
}

int run_case_log(const CommonOptions& opts, const std::string& checkpoint_arg, std::uint64_t episode_seed) {
    const auto cfg = load(opts);
    const auto seeds = seeds_for(cfg, opts);
    const auto seed = seeds.front();
    const auto paths = h::seed_paths(cfg.out, cfg.method(), seed);
    const fs::path checkpoint = checkpoint_arg.empty() ? paths.checkpoint : fs::path(checkpoint_arg);
    const auto traj = h::case_log(cfg, seed, checkpoint, episode_seed, paths.dir);
    std::cout << "step,length\n";
    for (const auto& d : traj.decisions) {
        std::cout << d.step << "," << d.context_length << "\n";
    }
    std::cout << "return " << h::fmt(traj.mean_return()) << "; wrote " << (paths.dir / "case_decisions.csv").string()
              << " and " << (paths.dir / "trajectory.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive context length with low-frequency truncation for multi-agent RL"};
    app.set_version_flag("--version", std::string(h::kVersion));
    app.require_subcommand(1);

    CommonOptions opts;
    std::string checkpoint;
    std::string input;
    std::uint64_t episode_seed = 2000000000ULL;

    auto* train = app.add_subcommand("train", "Train ACL-LFT (or a fixed-length baseline) on SpreadLite");
    add_common(train, opts);
    train->add_flag("--force", opts.force, "Overwrite an existing run with the same config hash");

    auto* eval = app.add_subcommand("eval", "Greedy evaluation of a trained checkpoint");
    add_common(eval, opts);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file; defaults to the seed's run directory");

    auto* spectral = app.add_subcommand("spectral-demo", "Dyadic band decomposition of a signal");
    add_common(spectral, opts);
    spectral->add_option("--input", input, "CSV signal, one column per feature; a built-in signal if omitted");

    auto* theorem = app.add_subcommand("theorem-check", "Fixed versus adaptive context regret on the OU benchmark");
    add_common(theorem, opts);
    theorem->add_flag("--force", opts.force, "Overwrite an existing run with the same config hash");

    auto* compare = app.add_subcommand("compare-fixed", "Adaptive versus fixed context lengths over a final window");
    add_common(compare, opts);

    auto* case_log = app.add_subcommand("case-log", "Step-by-step context lengths of one greedy episode");
    add_common(case_log, opts);
    case_log->add_option("--checkpoint", checkpoint, "Checkpoint file; defaults to the seed's run directory");
    case_log->add_option("--episode-seed", episode_seed, "Environment seed of the logged episode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cout << h::kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    const auto cmdline = command_line(argc, argv);
    try {
        if (train->parsed()) {
            return run_train(opts, cmdline);
        }
        if (eval->parsed()) {
            return run_eval(opts, checkpoint);
        }
        if (spectral->parsed()) {
            return run_spectral(opts, input);
        }
        if (theorem->parsed()) {
            return run_theorem(opts, cmdline);
        }
        if (compare->parsed()) {
            return run_compare(opts);
        }
        if (case_log->parsed()) {
            return run_case_log(opts, checkpoint, episode_seed);
        }
    } catch (const acllft::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 2;
    } catch (const acllft::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << app.help();
    return 1;
}
