// Command-line front end: train, evaluate checkpoints, search exchange rates, inspect pools.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "prcg/harness.hpp"

using namespace prcg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
    std::string config;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> env;
    std::optional<std::string> strategy;
    std::optional<std::size_t> models;
    std::optional<std::size_t> swap_every;
    std::optional<std::size_t> iterations;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "key = value config file");
        app->add_option("--set", set, "extra section.key=value entries, applied last");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--env", env, "environment name");
        app->add_option("--strategy", strategy, "exchange strategy");
        app->add_option("--models", models, "number of models");
        app->add_option("--swap-every", swap_every, "exchange every k iterations");
        app->add_option("--iterations", iterations, "training iterations");
        app->add_option("--workers", workers, "threads for per-model phases");
        app->add_option("--out", out, "output directory");
    }

    ExperimentConfig build() const {
        ExperimentConfig cfg;
        KeyValues kv;
        if (!config.empty()) kv = load_key_values(config);
        if (seed) kv["run.seed"] = std::to_string(*seed);
        if (env) kv["env.name"] = *env;
        if (strategy) kv["algorithm.strategy"] = *strategy;
        if (models) kv["algorithm.models"] = std::to_string(*models);
        if (swap_every) kv["algorithm.swap_every"] = std::to_string(*swap_every);
        if (iterations) kv["run.iterations"] = std::to_string(*iterations);
        if (workers) kv["run.workers"] = std::to_string(*workers);
        if (out) kv["run.output_dir"] = *out;
        for (const auto& entry : set) {
            const auto eq = entry.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + entry + "'");
            kv[std::string(detail::trim(entry.substr(0, eq)))] = std::string(detail::trim(entry.substr(eq + 1)));
        }
        apply_key_values(cfg, kv);
        cfg.validate();
        return cfg;
    }
};

void print_table(const std::vector<EvalRow>& rows) {
    std::printf("%-6s %-9s %8s %10s %9s\n", "band", "pose", "success", "return", "episodes");
    for (const auto& r : rows)
        std::printf("%-6s %-9s %8.3f %10.4f %9zu\n", std::string(to_string(r.cell.band)).c_str(),
                    std::string(to_string(r.cell.pose_mode)).c_str(), r.success_rate, r.mean_discounted_return,
                    r.episodes);
}

int cmd_run(const Overrides& o) {
    const auto cfg = o.build();
    const auto art = run(cfg);
    const auto& best = art.result.final_tables.at(art.result.best_is_ensemble ? art.result.final_tables.size() - 1
                                                                              : art.result.best_model);
    std::printf("run %s finished: %zu iterations, %zu exchanges\n", cfg.effective_run_id().c_str(),
                cfg.total_iterations, art.result.exchanges.size());
    if (art.result.best_is_ensemble)
        std::printf("selected policy: ensemble\n");
    else
        std::printf("selected policy: model %zu\n", art.result.best_model);
    print_table(best);
    std::printf("artifacts: %s\n", art.output_dir.string().c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const Overrides& o, std::size_t episodes, bool stochastic) {
    auto cfg = o.build();
    const Env env = cfg.make_configured_env();
    const auto [actor, critic] = read_model_checkpoint(checkpoint);
    if (actor.state_dim() != env.spec().state_dim || actor.action_dim() != env.spec().action_dim)
        throw ConfigError("checkpoint dimensions do not match environment " + env.name());
    RandomStream rng = eval_stream(cfg.master_seed, 0);
    print_table(evaluate(ActorPolicy{&actor, stochastic}, env, episodes, rng));
    (void)critic;
    return 0;
}

int cmd_ksearch(const Overrides& o, const std::vector<std::size_t>& ks, std::size_t seeds, std::size_t iterations) {
    const auto cfg = o.build();
    const auto summary = k_search(cfg, ks, iterations, seeds, cfg.output_dir);
    std::printf("%-10s %8s %8s  per-seed\n", "setting", "mean", "std");
    for (const auto& r : summary.rows) {
        const std::string label = r.k == 0 ? "baseline" : "k=" + std::to_string(r.k);
        std::printf("%-10s %8.3f %8.3f ", label.c_str(), r.mean, r.stddev);
        for (double v : r.final_success) std::printf(" %.3f", v);
        std::printf("\n");
    }
    std::printf("summary: %s\n", (fs::path(cfg.output_dir) / "summary.csv").string().c_str());
    return 0;
}

int cmd_inspect_pool(const std::string& path, const std::string& env_name, std::size_t grid, std::size_t upto) {
    const Env env = make_env(env_name);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != pool_csv_header(env.spec().state_dim))
        throw ConfigError(path + ": unexpected header for environment " + env_name);
    std::map<long, std::vector<State>> pools;
    std::size_t last = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() < 2 + env.spec().state_dim) throw ConfigError(path + ": short row");
        const auto iteration = parse_count("iteration", f[1]);
        if (upto && iteration > upto) continue;
        last = std::max(last, iteration);
        State s(env.spec().state_dim);
        for (std::size_t d = 0; d < s.size(); ++d) s[d] = parse_double("x", f[2 + d]);
        pools[static_cast<long>(parse_int("model_id", f[0]))].push_back(std::move(s));
    }
    std::printf("pool archive through iteration %zu (grid %zux%zu)\n", last, grid, grid);
    std::printf("%-8s %8s %8s %10s\n", "model", "size", "cells", "entropy");
    for (const auto& [id, states] : pools)
        std::printf("%-8s %8zu %8zu %10.4f\n", id < 0 ? "shared" : std::to_string(id).c_str(), states.size(),
                    occupied_cells(states, grid, env.geometry().domain_lo, env.geometry().domain_hi),
                    coverage_entropy(states, grid, env.geometry().domain_lo, env.geometry().domain_hi));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parallel reverse-curriculum training"};
    app.require_subcommand(1);

    Overrides run_opts;
    auto* run_cmd = app.add_subcommand("run", "train a model set and write metrics, pools and checkpoints");
    run_opts.attach(run_cmd);

    Overrides eval_opts;
    std::string checkpoint;
    std::size_t episodes = 50;
    bool stochastic = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the six-cell grid");
    eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--episodes", episodes, "episodes per cell");
    eval_cmd->add_flag("--stochastic", stochastic, "sample actions instead of using the mean");
    eval_opts.attach(eval_cmd);

    Overrides ks_opts;
    std::vector<std::size_t> ks{5, 10, 20, 50};
    std::size_t seeds = 4, trial_iterations = 100;
    auto* ks_cmd = app.add_subcommand("ksearch", "compare exchange rates against the no-exchange baseline");
    ks_cmd->add_option("--k", ks, "exchange rates to try")->delimiter(',');
    ks_cmd->add_option("--seeds", seeds, "seeds per setting");
    ks_cmd->add_option("--trial-iterations", trial_iterations, "iterations per trial");
    ks_opts.attach(ks_cmd);

    std::string pool_path, pool_env = "pointmaze";
    std::size_t grid = 10, upto = 0;
    auto* pool_cmd = app.add_subcommand("inspect-pool", "summarize a pool_snapshots.csv file");
    pool_cmd->add_option("pool_csv", pool_path, "pool snapshot file")->required();
    pool_cmd->add_option("--env", pool_env, "environment the pool came from");
    pool_cmd->add_option("--grid", grid, "coverage grid resolution");
    pool_cmd->add_option("--upto", upto, "ignore entries added after this iteration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run_cmd) return cmd_run(run_opts);
        if (*eval_cmd) return cmd_eval(checkpoint, eval_opts, episodes, stochastic);
        if (*ks_cmd) return cmd_ksearch(ks_opts, ks, seeds, trial_iterations);
        if (*pool_cmd) return cmd_inspect_pool(pool_path, pool_env, grid, upto);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
