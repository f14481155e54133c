#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prcg/config.hpp"
#include "prcg/envs.hpp"
#include "prcg/errors.hpp"
#include "prcg/evaluation.hpp"
#include "prcg/parallel.hpp"

namespace prcg {

namespace fs = std::filesystem;

/// Everything a run needs; every field maps to one `section.key` config entry.
struct ExperimentConfig {
    std::string run_id;  // empty -> "seed<master_seed>"
    std::string env_name = "pointmaze";
    std::optional<double> goal_radius;
    std::optional<int> t_max;
    std::optional<double> gamma;
    std::optional<std::vector<double>> band_radii;

    std::size_t models = 2;
    SwapSchedule schedule;
    NetworkConfig network;
    CurriculumConfig curriculum;
    PpoConfig ppo;

    std::size_t total_iterations = 200;
    std::size_t eval_every = 10;
    std::size_t eval_episodes_per_band = 50;
    bool stochastic_eval = false;
    std::size_t coverage_grid = 10;
    std::size_t checkpoint_every = 0;  // 0: final checkpoints only
    std::size_t workers = 1;
    std::uint64_t master_seed = 0;
    std::string output_dir = "prcg_out";

    std::string effective_run_id() const { return run_id.empty() ? "seed" + std::to_string(master_seed) : run_id; }

    void validate() const {
        schedule.validate(models);
        curriculum.validate();
        ppo.validate();
        network_spec_check();
        if (total_iterations == 0) throw ConfigError("run.iterations must be >= 1");
        if (eval_every == 0 || eval_episodes_per_band == 0) throw ConfigError("evaluation settings must be positive");
        if (coverage_grid < 2) throw ConfigError("eval.coverage_grid must be >= 2");
        if (output_dir.empty()) throw ConfigError("run.output_dir must be set");
        (void)make_configured_env();
    }

    Env make_configured_env() const {
        Env base = make_env(env_name);
        EnvSpec spec = base.spec();
        BandConfig bands = base.bands();
        if (goal_radius) spec.goal_radius = *goal_radius;
        if (t_max) spec.t_max = *t_max;
        if (gamma) spec.gamma = *gamma;
        if (band_radii) {
            if (band_radii->size() != 3) throw ConfigError("env.band_radii needs three values: near,mid,far");
            bands.near_max = (*band_radii)[0];
            bands.mid_max = (*band_radii)[1];
            bands.far_max = (*band_radii)[2];
        }
        return Env(base.name(), spec, base.geometry(), bands);
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.schedule = schedule;
        t.curriculum = curriculum;
        t.ppo = ppo;
        t.iterations = total_iterations;
        t.eval_every = eval_every;
        t.eval_episodes_per_band = eval_episodes_per_band;
        t.coverage_grid = coverage_grid;
        t.stochastic_eval = stochastic_eval;
        t.workers = workers;
        t.master_seed = master_seed;
        return t;
    }

private:
    void network_spec_check() const {
        MlpSpec probe{1, network.hidden_dims, 1};
        probe.validate();
    }
};

namespace detail {

inline std::string join_numbers(const std::vector<double>& v) {
    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        out += (i ? "," : "") + std::string(buf);
    }
    return out;
}

inline std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Applies config entries on top of `cfg`. Unknown keys are an error.
inline void apply_key_values(ExperimentConfig& cfg, const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
        auto count = [&] { return parse_count(key, value); };
        auto real = [&] { return parse_double(key, value); };
        if (key == "run.id") cfg.run_id = value;
        else if (key == "run.seed") cfg.master_seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "run.iterations") cfg.total_iterations = count();
        else if (key == "run.output_dir") cfg.output_dir = value;
        else if (key == "run.checkpoint_every") cfg.checkpoint_every = count();
        else if (key == "run.workers") cfg.workers = count();
        else if (key == "env.name") cfg.env_name = value;
        else if (key == "env.goal_radius") cfg.goal_radius = real();
        else if (key == "env.t_max") cfg.t_max = static_cast<int>(parse_int(key, value));
        else if (key == "env.gamma") cfg.gamma = real();
        else if (key == "env.band_radii") cfg.band_radii = parse_doubles(key, value);
        else if (key == "algorithm.strategy") cfg.schedule.strategy = parse_strategy(value);
        else if (key == "algorithm.models") cfg.models = count();
        else if (key == "algorithm.swap_every") cfg.schedule.k = count();
        else if (key == "algorithm.async_sync_period") cfg.schedule.async_sync_period = count();
        else if (key == "network.hidden") cfg.network.hidden_dims = parse_counts(key, value);
        else if (key == "network.initial_log_std") cfg.network.initial_log_std = real();
        else if (key == "network.policy_output_gain") cfg.network.policy_output_gain = real();
        else if (key == "network.normalize_inputs") cfg.network.normalize_inputs = parse_bool(key, value);
        else if (key == "curriculum.n_new") cfg.curriculum.n_new = count();
        else if (key == "curriculum.n_old") cfg.curriculum.n_old = count();
        else if (key == "curriculum.n_total") cfg.curriculum.n_total = count();
        else if (key == "curriculum.sigma") cfg.curriculum.sigma = parse_doubles(key, value);
        else if (key == "curriculum.r_min") cfg.curriculum.r_min = real();
        else if (key == "curriculum.r_max") cfg.curriculum.r_max = real();
        else if (key == "curriculum.rollouts_per_start") cfg.curriculum.rollouts_per_start = count();
        else if (key == "ppo.clip_epsilon") cfg.ppo.clip_epsilon = real();
        else if (key == "ppo.epochs") cfg.ppo.epochs_per_update = count();
        else if (key == "ppo.minibatch_size") cfg.ppo.minibatch_size = count();
        else if (key == "ppo.gae_lambda") cfg.ppo.gae_lambda = real();
        else if (key == "ppo.value_loss_coeff") cfg.ppo.value_loss_coeff = real();
        else if (key == "ppo.batch_size") cfg.ppo.batch_size = count();
        else if (key == "ppo.lr") cfg.ppo.lr = real();
        else if (key == "eval.every") cfg.eval_every = count();
        else if (key == "eval.episodes_per_band") cfg.eval_episodes_per_band = count();
        else if (key == "eval.stochastic") cfg.stochastic_eval = parse_bool(key, value);
        else if (key == "eval.coverage_grid") cfg.coverage_grid = count();
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

/// Canonical key-value form of a config (sorted by key), as written to the run manifest.
inline KeyValues to_key_values(const ExperimentConfig& cfg) {
    KeyValues kv;
    kv["run.id"] = cfg.effective_run_id();
    kv["run.seed"] = std::to_string(cfg.master_seed);
    kv["run.iterations"] = std::to_string(cfg.total_iterations);
    kv["run.output_dir"] = cfg.output_dir;
    kv["run.checkpoint_every"] = std::to_string(cfg.checkpoint_every);
    kv["run.workers"] = std::to_string(cfg.workers);
    kv["env.name"] = cfg.env_name;
    if (cfg.goal_radius) kv["env.goal_radius"] = detail::exact(*cfg.goal_radius);
    if (cfg.t_max) kv["env.t_max"] = std::to_string(*cfg.t_max);
    if (cfg.gamma) kv["env.gamma"] = detail::exact(*cfg.gamma);
    if (cfg.band_radii) kv["env.band_radii"] = detail::join_numbers(*cfg.band_radii);
    kv["algorithm.strategy"] = std::string(to_string(cfg.schedule.strategy));
    kv["algorithm.models"] = std::to_string(cfg.models);
    kv["algorithm.swap_every"] = std::to_string(cfg.schedule.k);
    kv["algorithm.async_sync_period"] = std::to_string(cfg.schedule.async_sync_period);
    std::string hidden;
    for (std::size_t i = 0; i < cfg.network.hidden_dims.size(); ++i)
        hidden += (i ? "," : "") + std::to_string(cfg.network.hidden_dims[i]);
    kv["network.hidden"] = hidden;
    kv["network.initial_log_std"] = detail::exact(cfg.network.initial_log_std);
    kv["network.policy_output_gain"] = detail::exact(cfg.network.policy_output_gain);
    kv["network.normalize_inputs"] = cfg.network.normalize_inputs ? "true" : "false";
    kv["curriculum.n_new"] = std::to_string(cfg.curriculum.n_new);
    kv["curriculum.n_old"] = std::to_string(cfg.curriculum.n_old);
    kv["curriculum.n_total"] = std::to_string(cfg.curriculum.n_total);
    kv["curriculum.sigma"] = detail::join_numbers(cfg.curriculum.sigma);
    kv["curriculum.r_min"] = detail::exact(cfg.curriculum.r_min);
    kv["curriculum.r_max"] = detail::exact(cfg.curriculum.r_max);
    kv["curriculum.rollouts_per_start"] = std::to_string(cfg.curriculum.rollouts_per_start);
    kv["ppo.clip_epsilon"] = detail::exact(cfg.ppo.clip_epsilon);
    kv["ppo.epochs"] = std::to_string(cfg.ppo.epochs_per_update);
    kv["ppo.minibatch_size"] = std::to_string(cfg.ppo.minibatch_size);
    kv["ppo.gae_lambda"] = detail::exact(cfg.ppo.gae_lambda);
    kv["ppo.value_loss_coeff"] = detail::exact(cfg.ppo.value_loss_coeff);
    kv["ppo.batch_size"] = std::to_string(cfg.ppo.batch_size);
    kv["ppo.lr"] = detail::exact(cfg.ppo.lr);
    kv["eval.every"] = std::to_string(cfg.eval_every);
    kv["eval.episodes_per_band"] = std::to_string(cfg.eval_episodes_per_band);
    kv["eval.stochastic"] = cfg.stochastic_eval ? "true" : "false";
    kv["eval.coverage_grid"] = std::to_string(cfg.coverage_grid);
    return kv;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr std::string_view kMetricsHeader =
    "run_id,kind,model_id,iteration,band,pose_mode,success_rate,mean_discounted_return,pool_size,coverage_entropy,"
    "actor_loss,critic_loss,clip_fraction";

/**
 * One metrics.csv row.
 *
 * kind = "eval": one (model, iteration, band, pose_mode) cell of the evaluation grid.
 * kind = "train": one model's PPO update; band/pose_mode are empty, success_rate is
 * the fraction of training episodes that reached the goal and mean_discounted_return
 * the batch mean return. model_id -1 is the combined ensemble policy.
 */
struct MetricsRecord {
    std::string run_id;
    std::string kind;
    long model_id = 0;
    std::size_t iteration = 0;
    std::optional<EvalBand> cell;
    double success_rate = 0.0;
    double mean_discounted_return = 0.0;
    std::size_t pool_size = 0;
    double coverage_entropy = 0.0;
    double actor_loss = std::numeric_limits<double>::quiet_NaN();
    double critic_loss = std::numeric_limits<double>::quiet_NaN();
    double clip_fraction = std::numeric_limits<double>::quiet_NaN();

    std::string to_csv() const {
        std::string s = run_id + "," + kind + "," + std::to_string(model_id) + "," + std::to_string(iteration) + ",";
        if (cell) s += std::string(to_string(cell->band)) + "," + std::string(to_string(cell->pose_mode));
        else s += ",";
        s += "," + detail::num(success_rate) + "," + detail::num(mean_discounted_return) + "," +
             std::to_string(pool_size) + "," + detail::num(coverage_entropy) + "," + detail::num(actor_loss) + "," +
             detail::num(critic_loss) + "," + detail::num(clip_fraction);
        return s;
    }

    static MetricsRecord from_csv(const std::string& line) {
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        f.push_back(cur);
        if (f.size() != 13) throw ConfigError("metrics row has " + std::to_string(f.size()) + " fields, expected 13");
        auto opt = [](const std::string& key, const std::string& v) {
            return v.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(key, v);
        };
        MetricsRecord r;
        r.run_id = f[0];
        r.kind = f[1];
        if (r.kind != "eval" && r.kind != "train") throw ConfigError("metrics row has unknown kind " + r.kind);
        r.model_id = static_cast<long>(parse_int("model_id", f[2]));
        r.iteration = parse_count("iteration", f[3]);
        if (!f[4].empty()) {
            EvalBand cell;
            if (f[4] == "near") cell.band = Band::Near;
            else if (f[4] == "mid") cell.band = Band::Mid;
            else if (f[4] == "far") cell.band = Band::Far;
            else throw ConfigError("metrics row has unknown band " + f[4]);
            if (f[5] == "fixed") cell.pose_mode = PoseMode::Fixed;
            else if (f[5] == "variable") cell.pose_mode = PoseMode::Variable;
            else throw ConfigError("metrics row has unknown pose mode " + f[5]);
            r.cell = cell;
        }
        r.success_rate = parse_double("success_rate", f[6]);
        r.mean_discounted_return = parse_double("mean_discounted_return", f[7]);
        r.pool_size = parse_count("pool_size", f[8]);
        r.coverage_entropy = parse_double("coverage_entropy", f[9]);
        r.actor_loss = opt("actor_loss", f[10]);
        r.critic_loss = opt("critic_loss", f[11]);
        r.clip_fraction = opt("clip_fraction", f[12]);
        if (!(r.success_rate >= 0.0 && r.success_rate <= 1.0)) throw ConfigError("metrics row success_rate out of range");
        return r;
    }
};

inline std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw ConfigError(path.string() + ": unexpected header");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(MetricsRecord::from_csv(line));
    return out;
}

inline std::vector<MetricsRecord> eval_records(const std::string& run_id, std::size_t iteration, const EvalRecord& e) {
    std::vector<MetricsRecord> out;
    for (const auto& row : e.rows) {
        MetricsRecord r;
        r.run_id = run_id;
        r.kind = "eval";
        r.model_id = e.model_id;
        r.iteration = iteration;
        r.cell = row.cell;
        r.success_rate = row.success_rate;
        r.mean_discounted_return = row.mean_discounted_return;
        r.pool_size = e.pool_size;
        r.coverage_entropy = e.coverage_entropy;
        out.push_back(r);
    }
    return out;
}

inline MetricsRecord train_record(const std::string& run_id, std::size_t iteration, const ModelIterationRecord& m) {
    MetricsRecord r;
    r.run_id = run_id;
    r.kind = "train";
    r.model_id = static_cast<long>(m.model_id);
    r.iteration = iteration;
    r.success_rate = m.ppo.success_fraction;
    r.mean_discounted_return = m.ppo.mean_return;
    r.pool_size = m.pool_size;
    r.coverage_entropy = m.coverage_entropy;
    r.actor_loss = m.ppo.actor_loss;
    r.critic_loss = m.ppo.critic_loss;
    r.clip_fraction = m.ppo.clip_fraction;
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints, in order: actor network, log_std, action_scale, actor input offset and scale,
// critic network, critic input offset and scale. Every non-network record is a vector record.

inline void write_model_checkpoint(const fs::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    write_network(out, model.actor.mean_spec, model.actor.mean_params);
    write_vector(out, model.actor.log_std);
    write_vector(out, model.actor.action_scale);
    write_vector(out, model.actor.input_scaling.offset);
    write_vector(out, model.actor.input_scaling.scale);
    write_network(out, model.critic.spec, model.critic.params);
    write_vector(out, model.critic.input_scaling.offset);
    write_vector(out, model.critic.input_scaling.scale);
}

inline std::pair<GaussianPolicy, Critic> read_model_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    auto [aspec, aparams] = read_network(in);
    auto log_std = read_vector(in);
    auto scale = read_vector(in);
    InputScaling actor_inputs{read_vector(in), read_vector(in)};
    auto [cspec, cparams] = read_network(in);
    InputScaling critic_inputs{read_vector(in), read_vector(in)};
    if (log_std.size() != aspec.output_dim || cspec.output_dim != 1 || cspec.input_dim != aspec.input_dim)
        throw ConfigError("checkpoint sections are inconsistent");
    GaussianPolicy actor{aspec, aparams, log_std, scale, std::move(actor_inputs)};
    actor.validate();
    critic_inputs.validate(cspec.input_dim);
    return {std::move(actor), Critic{cspec, cparams, std::move(critic_inputs)}};
}

// ---------------------------------------------------------------------------
// Runs

struct RunArtifacts {
    fs::path output_dir;
    fs::path metrics_csv;
    fs::path pool_csv;
    fs::path manifest;
    std::vector<fs::path> checkpoints;
    TrainResult result;
};

inline std::string pool_csv_header(std::size_t state_dim) {
    std::string h = "model_id,iteration";
    for (std::size_t i = 0; i < state_dim; ++i) h += ",x" + std::to_string(i);
    return h + ",r_hat";
}

/// Pool rows are incremental: each iteration lists the archive entries added in it (iteration 0 = goal seeds).
inline void write_pool_rows(std::ostream& os, long model_id, std::size_t iteration, const StartPool& pool) {
    const auto& entries = pool.entries();
    std::size_t first = entries.size();
    while (first > 0 && entries[first - 1].added_at_iteration == iteration) --first;
    for (std::size_t k = first; k < entries.size(); ++k) {
        os << model_id << ',' << iteration;
        for (double x : entries[k].state) os << ',' << detail::exact(x);
        os << ',' << detail::num(entries[k].r_hat) << '\n';
    }
}

/**
 * Trains per `cfg` and writes metrics.csv, pool_snapshots.csv, manifest.txt and
 * checkpoints/ into cfg.output_dir. On error the partial files are flushed, a
 * FAILED marker holding the message is written, and the error is rethrown.
 */
inline RunArtifacts run(const ExperimentConfig& cfg) {
    cfg.validate();
    const Env env = cfg.make_configured_env();
    RunArtifacts art;
    art.output_dir = cfg.output_dir;
    fs::create_directories(art.output_dir / "checkpoints");
    fs::remove(art.output_dir / "FAILED");
    art.metrics_csv = art.output_dir / "metrics.csv";
    art.pool_csv = art.output_dir / "pool_snapshots.csv";
    art.manifest = art.output_dir / "manifest.txt";

    std::ofstream metrics(art.metrics_csv, std::ios::trunc);
    std::ofstream pools(art.pool_csv, std::ios::trunc);
    std::ofstream manifest(art.manifest, std::ios::trunc);
    if (!metrics || !pools || !manifest) throw Error("cannot write artifacts into " + art.output_dir.string());
    metrics << kMetricsHeader << '\n';
    pools << pool_csv_header(env.spec().state_dim) << '\n';
    for (const auto& [k, v] : to_key_values(cfg)) manifest << k << " = " << v << '\n';
    manifest << "master_seed = " << cfg.master_seed << '\n';
    manifest.flush();

    const std::string run_id = cfg.effective_run_id();
    try {
        ModelSet set = ModelSet::create(env, cfg.models, cfg.network, cfg.ppo.lr, cfg.master_seed,
                                        uses_common_pool(cfg.schedule.strategy));
        for (std::size_t p = 0; p < set.pools.size(); ++p)
            write_pool_rows(pools, set.common_pool ? -1L : static_cast<long>(p), 0, set.pools[p].starts_old);

        auto save_checkpoints = [&](const ModelSet& s, std::size_t iteration) {
            for (std::size_t i = 0; i < s.size(); ++i) {
                const auto path = art.output_dir / "checkpoints" /
                                  ("model_" + std::to_string(i) + "_iter_" + std::to_string(iteration) + ".ckpt");
                write_model_checkpoint(path, s.models[i]);
                art.checkpoints.push_back(path);
            }
        };

        const auto tcfg = cfg.train_config();
        auto observer = [&](const IterationReport& rep, const ModelSet& s) {
            for (const auto& m : rep.models) metrics << train_record(run_id, rep.iteration, m).to_csv() << '\n';
            for (const auto& e : rep.evals)
                for (const auto& r : eval_records(run_id, rep.iteration, e)) metrics << r.to_csv() << '\n';
            if (s.common_pool) {
                write_pool_rows(pools, -1, rep.iteration, s.pools.front().starts_old);
            } else {
                for (std::size_t i = 0; i < s.size(); ++i)
                    write_pool_rows(pools, static_cast<long>(i), rep.iteration, s.pools[i].starts_old);
            }
            if (rep.exchange) {
                manifest << "exchange iteration=" << rep.exchange->iteration
                         << " strategy=" << to_string(rep.exchange->strategy) << " pairs=";
                for (std::size_t p = 0; p < rep.exchange->plan.pairs.size(); ++p)
                    manifest << (p ? ";" : "") << rep.exchange->plan.pairs[p].first << "-"
                             << rep.exchange->plan.pairs[p].second;
                manifest << '\n';
            }
            const bool last = rep.iteration == tcfg.iterations;
            if (last || (cfg.checkpoint_every > 0 && rep.iteration % cfg.checkpoint_every == 0))
                save_checkpoints(s, rep.iteration);
        };
        art.result = train(env, set, tcfg, observer);
        if (art.result.best_is_ensemble) manifest << "best_policy = ensemble\n";
        else manifest << "best_policy = model_" << art.result.best_model << '\n';
        manifest << "status = ok\n";
    } catch (const std::exception& e) {
        metrics.flush();
        pools.flush();
        manifest << "status = failed\n";
        manifest.flush();
        std::ofstream(art.output_dir / "FAILED") << e.what() << '\n';
        throw;
    }
    return art;
}

// ---------------------------------------------------------------------------
// Exchange-rate search

struct KSearchRow {
    /// 0 marks the no-exchange baseline.
    std::size_t k = 0;
    std::vector<double> final_success;  // Far/Variable success of each seed's selected policy
    double mean = 0.0;
    double stddev = 0.0;
};

struct KSearchSummary {
    std::vector<KSearchRow> rows;  // baseline first, then k in the order given
};

inline double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = sample_mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

namespace detail {

inline double far_variable_rate(const std::vector<MetricsRecord>& rows) {
    for (const auto& r : rows)
        if (r.cell == EvalBand{Band::Far, PoseMode::Variable}) return r.success_rate;
    throw ConfigError("metrics lack the far/variable cell");
}

}  // namespace detail

/// Far/Variable success of the final selected policy, recomputed from a run's metrics.csv.
inline double final_far_variable_success(const std::vector<MetricsRecord>& records) {
    std::size_t last = 0;
    for (const auto& r : records)
        if (r.kind == "eval") last = std::max(last, r.iteration);
    std::map<long, std::vector<MetricsRecord>> by_model;
    for (const auto& r : records)
        if (r.kind == "eval" && r.iteration == last) by_model[r.model_id].push_back(r);
    if (by_model.empty()) throw ConfigError("metrics contain no evaluation rows");
    if (by_model.count(-1)) return detail::far_variable_rate(by_model[-1]);
    // Same rule as select_best: highest mean success over the grid, lowest model id on ties.
    long best = 0;
    double best_score = -1.0;
    for (const auto& [id, rows] : by_model) {
        double s = 0.0;
        for (const auto& r : rows) s += r.success_rate;
        s /= static_cast<double>(rows.size());
        if (s > best_score) {
            best_score = s;
            best = id;
        }
    }
    return detail::far_variable_rate(by_model[best]);
}

inline fs::path ksearch_run_dir(const fs::path& root, std::size_t k, std::size_t seed_index) {
    return root / (k == 0 ? std::string("baseline") : "k" + std::to_string(k)) / ("seed" + std::to_string(seed_index));
}

/**
 * Runs the no-exchange baseline and each k for `seeds` seeds (master seeds
 * base.master_seed + s), iterations_per_trial iterations each, and writes
 * summary.csv into out_dir. Exchange runs use the template's strategy when it
 * is a pairing strategy, otherwise critic swapping.
 */
inline KSearchSummary k_search(const ExperimentConfig& base, const std::vector<std::size_t>& k_values,
                               std::size_t iterations_per_trial, std::size_t seeds, const fs::path& out_dir) {
    if (k_values.empty()) throw ConfigError("k_search: no k values given");
    if (seeds == 0 || iterations_per_trial == 0) throw ConfigError("k_search: seeds and iterations must be positive");
    const Strategy exchange = needs_pairing(base.schedule.strategy) ? base.schedule.strategy : Strategy::SwapCritics;

    KSearchSummary summary;
    std::vector<std::size_t> all_k{0};
    all_k.insert(all_k.end(), k_values.begin(), k_values.end());
    for (std::size_t k : all_k) {
        KSearchRow row;
        row.k = k;
        for (std::size_t s = 0; s < seeds; ++s) {
            ExperimentConfig cfg = base;
            cfg.total_iterations = iterations_per_trial;
            cfg.master_seed = base.master_seed + s;
            cfg.run_id = (k == 0 ? std::string("baseline") : "k" + std::to_string(k)) + "_seed" + std::to_string(s);
            cfg.output_dir = ksearch_run_dir(out_dir, k, s).string();
            if (k == 0) {
                cfg.schedule.strategy = Strategy::NoExchange;
            } else {
                cfg.schedule.strategy = exchange;
                cfg.schedule.k = k;
            }
            const auto art = run(cfg);
            row.final_success.push_back(final_far_variable_success(read_metrics_csv(art.metrics_csv)));
        }
        row.mean = sample_mean(row.final_success);
        row.stddev = sample_stddev(row.final_success);
        summary.rows.push_back(std::move(row));
    }

    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "summary.csv", std::ios::trunc);
    out << "label,k,seeds,mean_final_far_variable_success,std_final_far_variable_success,per_seed\n";
    for (const auto& r : summary.rows) {
        out << (r.k == 0 ? std::string("baseline") : "k" + std::to_string(r.k)) << ',' << r.k << ','
            << r.final_success.size() << ',' << detail::num(r.mean) << ',' << detail::num(r.stddev) << ',';
        for (std::size_t i = 0; i < r.final_success.size(); ++i) out << (i ? ";" : "") << detail::num(r.final_success[i]);
        out << '\n';
    }
    return summary;
}

}  // namespace prcg
