#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "prcg/envs.hpp"
#include "prcg/errors.hpp"
#include "prcg/evaluation.hpp"
#include "prcg/numerics.hpp"
#include "prcg/ppo.hpp"
#include "prcg/random.hpp"
#include "prcg/rcg.hpp"

namespace prcg {

enum class Strategy {
    SwapCritics,            // PRCG
    SwapInitPools,          // PRCG-i
    CommonPoolSwapCritics,  // PRCG-ci
    CommonPoolNoSwap,       // RCG-ci
    NoExchange,             // independent RCG
    AsyncSync,              // ARCG
    Ensemble,
};

inline constexpr std::pair<Strategy, std::string_view> kStrategyNames[] = {
    {Strategy::SwapCritics, "swap-critics"},
    {Strategy::SwapInitPools, "swap-pools"},
    {Strategy::CommonPoolSwapCritics, "common-pool-swap-critics"},
    {Strategy::CommonPoolNoSwap, "common-pool"},
    {Strategy::NoExchange, "none"},
    {Strategy::AsyncSync, "async"},
    {Strategy::Ensemble, "ensemble"},
};

inline std::string_view to_string(Strategy s) {
    for (const auto& [v, name] : kStrategyNames)
        if (v == s) return name;
    return "?";
}

inline Strategy parse_strategy(std::string_view name) {
    for (const auto& [v, n] : kStrategyNames)
        if (n == name) return v;
    throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

inline bool swaps_critics(Strategy s) { return s == Strategy::SwapCritics || s == Strategy::CommonPoolSwapCritics; }
inline bool uses_common_pool(Strategy s) {
    return s == Strategy::CommonPoolSwapCritics || s == Strategy::CommonPoolNoSwap;
}
inline bool needs_pairing(Strategy s) { return swaps_critics(s) || s == Strategy::SwapInitPools; }

struct SwapSchedule {
    Strategy strategy = Strategy::SwapCritics;
    std::size_t k = 20;
    std::size_t async_sync_period = 10;

    void validate(std::size_t m) const {
        if (k == 0) throw ConfigError("exchange rate k must be >= 1");
        if (async_sync_period == 0) throw ConfigError("async sync period must be >= 1");
        if (m == 0) throw ConfigError("at least one model is required");
        if (needs_pairing(strategy) && m % 2 != 0)
            throw ConfigError("strategy " + std::string(to_string(strategy)) + " needs an even number of models, got " +
                              std::to_string(m));
        if (strategy == Strategy::Ensemble && m < 2) throw ConfigError("ensemble strategy needs at least two models");
    }
};

struct PairingPlan {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    bool is_perfect_matching(std::size_t m) const {
        if (pairs.size() * 2 != m) return false;
        std::vector<int> seen(m, 0);
        for (const auto& [i, j] : pairs) {
            if (i >= m || j >= m || i == j) return false;
            ++seen[i];
            ++seen[j];
        }
        return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
    }

    friend bool operator==(const PairingPlan&, const PairingPlan&) = default;
};

/// Uniform random perfect matching on {0..m-1}: shuffle, then pair neighbours.
inline PairingPlan make_pairing(std::size_t m, RandomStream& rng) {
    if (m == 0 || m % 2 != 0) throw ConfigError("make_pairing needs an even, positive model count");
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    PairingPlan plan;
    for (std::size_t p = 0; p < m; p += 2) plan.pairs.emplace_back(std::min(perm[p], perm[p + 1]), std::max(perm[p], perm[p + 1]));
    return plan;
}

// ---------------------------------------------------------------------------

struct NetworkConfig {
    std::vector<std::size_t> hidden_dims{256, 256};
    /// In normalized action units (multiples of the action half-range).
    double initial_log_std = -0.5;
    double policy_output_gain = 0.01;
    /// Feed networks states mapped from the env domain onto [-1, 1].
    bool normalize_inputs = true;
};

inline std::vector<double> action_half_range(const EnvSpec& spec) {
    std::vector<double> out(spec.action_dim);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (spec.action_high[i] - spec.action_low[i]);
    return out;
}

struct Model {
    GaussianPolicy actor;
    Critic critic;
    PpoOptimizers optimizers;

    friend bool operator==(const Model&, const Model&) = default;
};

/// m actor-critic pairs, their curriculum pools and their private random streams.
struct ModelSet {
    std::vector<Model> models;
    /// One entry per model, or a single shared entry when common_pool is set.
    std::vector<CurriculumPools> pools;
    bool common_pool = false;
    std::vector<RandomStream> rngs;
    RandomStream orchestration;
    std::size_t iteration = 0;

    std::size_t size() const noexcept { return models.size(); }
    CurriculumPools& pools_of(std::size_t i) { return common_pool ? pools.front() : pools[i]; }
    const CurriculumPools& pools_of(std::size_t i) const { return common_pool ? pools.front() : pools[i]; }

    /**
     * Model i draws its initial weights and all later randomness from the
     * stream derived from (master_seed, label_offset + i).
     */
    static ModelSet create(const Env& env, std::size_t m, const NetworkConfig& net, double lr,
                           std::uint64_t master_seed, bool common_pool = false, std::uint64_t label_offset = 0) {
        if (m == 0) throw ConfigError("at least one model is required");
        ModelSet set;
        set.common_pool = common_pool;
        set.orchestration = RandomStream::derive(master_seed, 0xBA77'1E00ULL);
        MlpSpec actor_spec{env.spec().state_dim, net.hidden_dims, env.spec().action_dim};
        MlpSpec critic_spec{env.spec().state_dim, net.hidden_dims, 1};
        const auto input_scaling = net.normalize_inputs ? InputScaling::from_bounds(env.geometry().domain_lo,
                                                                                   env.geometry().domain_hi)
                                                        : InputScaling{};
        for (std::size_t i = 0; i < m; ++i) {
            auto rng = RandomStream::derive(master_seed, label_offset + i);
            Model model;
            model.actor = GaussianPolicy::create(actor_spec, rng, net.initial_log_std, net.policy_output_gain,
                                                 action_half_range(env.spec()), input_scaling);
            model.critic = Critic::create(critic_spec, rng, input_scaling);
            model.optimizers = PpoOptimizers::for_model(model.actor, model.critic, lr);
            set.models.push_back(std::move(model));
            set.rngs.push_back(rng);
        }
        const std::size_t n_pools = common_pool ? 1 : m;
        for (std::size_t i = 0; i < n_pools; ++i) set.pools.push_back(CurriculumPools::from_goals(env.spec().goal_states));
        return set;
    }

    friend bool operator==(const ModelSet&, const ModelSet&) = default;
};

/// Exchanges critic parameters together with their Adam state; actors and pools stay put.
inline void swap_critics(ModelSet& set, const PairingPlan& plan) {
    if (!plan.is_perfect_matching(set.size())) throw UsageError("swap_critics: plan is not a perfect matching");
    for (const auto& [i, j] : plan.pairs) {
        std::swap(set.models[i].critic, set.models[j].critic);
        std::swap(set.models[i].optimizers.critic, set.models[j].optimizers.critic);
    }
}

/// Exchanges both pools (expansion seeds and archive) between paired models; networks stay put.
inline void swap_pools(ModelSet& set, const PairingPlan& plan) {
    if (set.common_pool) throw UsageError("swap_pools: a shared pool cannot be swapped");
    if (!plan.is_perfect_matching(set.size())) throw UsageError("swap_pools: plan is not a perfect matching");
    for (const auto& [i, j] : plan.pairs) std::swap(set.pools[i], set.pools[j]);
}

// ---------------------------------------------------------------------------
// Asynchronous-style parameter sync, emulated at barriers

struct ModelParams {
    ParamVector actor;
    std::vector<double> log_std;
    ParamVector critic;

    static ModelParams of(const Model& m) { return {m.actor.mean_params, m.actor.log_std, m.critic.params}; }
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct CentralParams {
    ModelParams central;
    /// Each model's parameters right after the last broadcast it received.
    std::vector<ModelParams> reference;

    /// Central copy starts as model 0; every model's reference is its own current state.
    static CentralParams from(const ModelSet& set) {
        CentralParams c;
        c.central = ModelParams::of(set.models.front());
        for (const auto& m : set.models) c.reference.push_back(ModelParams::of(m));
        return c;
    }
};

/**
 * Every `period` iterations the central copy absorbs the sum of every model's
 * parameter change since its last broadcast, then overwrites all models.
 * Returns true when a sync happened.
 */
inline bool arcg_step(ModelSet& set, CentralParams& central, std::size_t period, std::size_t iteration) {
    if (period == 0) throw ConfigError("arcg_step: period must be >= 1");
    if (iteration % period != 0) return false;
    auto absorb = [](std::vector<double>& c, const std::vector<double>& now, const std::vector<double>& ref) {
        for (std::size_t k = 0; k < c.size(); ++k) c[k] += now[k] - ref[k];
    };
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& m = set.models[i];
        auto& ref = central.reference[i];
        absorb(central.central.actor.values, m.actor.mean_params.values, ref.actor.values);
        absorb(central.central.log_std, m.actor.log_std, ref.log_std);
        absorb(central.central.critic.values, m.critic.params.values, ref.critic.values);
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto& m = set.models[i];
        m.actor.mean_params = central.central.actor;
        m.actor.log_std = central.central.log_std;
        m.actor.clamp_log_std();
        m.critic.params = central.central.critic;
        central.reference[i] = ModelParams::of(m);
    }
    return true;
}

inline EnsemblePolicy ensemble_policy(const std::vector<Model>& models, bool stochastic = false) {
    if (models.empty()) throw UsageError("ensemble_policy: no models");
    EnsemblePolicy p;
    p.stochastic = stochastic;
    for (const auto& m : models) {
        p.actors.push_back(&m.actor);
        p.critics.push_back(&m.critic);
    }
    return p;
}

struct BestModel {
    std::size_t index = 0;
    /// Evaluation table of every model, in model order.
    std::vector<std::vector<EvalRow>> tables;
};

/// Evaluates every model on the six-cell grid with identical start draws; highest mean success wins.
inline BestModel select_best(const ModelSet& set, const Env& env, std::size_t episodes_per_band,
                             const RandomStream& eval_rng, bool stochastic = false) {
    BestModel best;
    double best_score = -1.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        RandomStream rng = eval_rng;
        best.tables.push_back(evaluate(ActorPolicy{&set.models[i].actor, stochastic}, env, episodes_per_band, rng));
        const double score = mean_success(best.tables.back());
        if (score > best_score) {
            best_score = score;
            best.index = i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    SwapSchedule schedule;
    CurriculumConfig curriculum;
    PpoConfig ppo;
    std::size_t iterations = 200;
    std::size_t eval_every = 10;
    std::size_t eval_episodes_per_band = 50;
    std::size_t coverage_grid = 10;
    bool stochastic_eval = false;
    /// Threads for per-model phases; results do not depend on it.
    std::size_t workers = 1;
    std::uint64_t master_seed = 0;

    void validate(std::size_t m) const {
        schedule.validate(m);
        curriculum.validate();
        ppo.validate();
        if (iterations == 0) throw ConfigError("iterations must be >= 1");
        if (eval_every == 0 || eval_episodes_per_band == 0) throw ConfigError("evaluation settings must be positive");
        if (coverage_grid < 2) throw ConfigError("coverage grid must be >= 2");
    }
};

struct ModelIterationRecord {
    std::size_t model_id = 0;
    CurriculumDiagnostics curriculum;
    PpoStats ppo;
    std::size_t pool_size = 0;
    double coverage_entropy = 0.0;
};

/// model_id -1 marks the combined ensemble policy.
struct EvalRecord {
    long model_id = 0;
    std::vector<EvalRow> rows;
    std::size_t pool_size = 0;
    double coverage_entropy = 0.0;
};

struct ExchangeEvent {
    std::size_t iteration = 0;
    Strategy strategy = Strategy::NoExchange;
    PairingPlan plan;
};

struct IterationReport {
    std::size_t iteration = 0;
    std::vector<ModelIterationRecord> models;
    std::vector<EvalRecord> evals;
    std::optional<ExchangeEvent> exchange;
};

struct TrainResult {
    std::size_t best_model = 0;
    bool best_is_ensemble = false;
    std::vector<IterationReport> reports;
    std::vector<ExchangeEvent> exchanges;
    std::vector<std::vector<EvalRow>> final_tables;
};

using TrainObserver = std::function<void(const IterationReport&, const ModelSet&)>;

inline RandomStream eval_stream(std::uint64_t master_seed, std::size_t iteration) {
    return RandomStream::derive(master_seed, 0xE7A1'0000'0000ULL + iteration);
}

namespace detail {

struct ModelPhaseOutput {
    std::vector<State> start_list;
    FilterOutcome filter;
    PpoStats ppo;
};

inline ModelPhaseOutput run_model_phases(Env& env, Model& model, CurriculumPools* private_pools,
                                         const CurriculumPools& read_pools, const TrainConfig& cfg,
                                         std::size_t iteration, RandomStream& rng) {
    ModelPhaseOutput out;
    out.start_list = propose_starts(env, read_pools, cfg.curriculum, rng);
    out.filter = filter_starts(env, model.actor, out.start_list, cfg.curriculum, rng);
    if (private_pools) commit_survivors(*private_pools, out.filter.survivors, iteration, cfg.curriculum, rng);
    const auto batch = collect_rollouts(env, model.actor, model.critic, out.start_list, cfg.ppo.batch_size, rng);
    out.ppo = ppo_update(model.actor, model.critic, batch, env.spec().gamma, cfg.ppo, model.optimizers, rng);
    return out;
}

template <class Fn>
void for_each_model(std::size_t m, std::size_t workers, Fn&& fn) {
    std::vector<std::exception_ptr> errors(m);
    auto guarded = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (workers <= 1 || m <= 1) {
        for (std::size_t i = 0; i < m; ++i) guarded(i);
    } else {
        std::vector<std::jthread> threads;
        const std::size_t n = std::min(workers, m);
        for (std::size_t w = 0; w < n; ++w)
            threads.emplace_back([&, w] {
                for (std::size_t i = w; i < m; i += n) guarded(i);
            });
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            throw ModelError(i, e.what());
        }
    }
}

}  // namespace detail

/**
 * Bulk-synchronous training of every model in `set`.
 *
 * Each iteration: every model runs its curriculum step, collects a rollout
 * batch and takes a PPO update (independent per model, optionally threaded);
 * then, at the barrier, shared-pool survivors are committed in model order,
 * the schedule's exchange fires when iteration % k == 0 (or the async sync
 * every async_sync_period iterations), and every eval_every iterations each
 * model is evaluated. Model streams are never shared, so results are the same
 * for any worker count.
 */
inline TrainResult train(const Env& env, ModelSet& set, const TrainConfig& cfg, const TrainObserver& observer = {}) {
    const std::size_t m = set.size();
    cfg.validate(m);
    if (uses_common_pool(cfg.schedule.strategy) != set.common_pool)
        throw ConfigError("model set pool layout does not match the strategy");

    std::vector<Env> envs(m, env);
    std::optional<CentralParams> central;
    if (cfg.schedule.strategy == Strategy::AsyncSync) central = CentralParams::from(set);

    TrainResult result;
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        const std::size_t iteration = ++set.iteration;
        std::vector<detail::ModelPhaseOutput> outputs(m);

        detail::for_each_model(m, cfg.workers, [&](std::size_t i) {
            CurriculumPools* own = set.common_pool ? nullptr : &set.pools[i];
            outputs[i] = detail::run_model_phases(envs[i], set.models[i], own, set.pools_of(i), cfg, iteration,
                                                  set.rngs[i]);
        });

        if (set.common_pool) {
            std::vector<ReturnEstimate> survivors;
            for (const auto& o : outputs)
                survivors.insert(survivors.end(), o.filter.survivors.begin(), o.filter.survivors.end());
            commit_survivors(set.pools.front(), survivors, iteration, cfg.curriculum, set.orchestration);
        }

        IterationReport report;
        report.iteration = iteration;
        for (std::size_t i = 0; i < m; ++i) {
            ModelIterationRecord rec;
            rec.model_id = i;
            rec.curriculum = make_diagnostics(iteration, outputs[i].start_list, outputs[i].filter);
            rec.ppo = outputs[i].ppo;
            rec.pool_size = set.pools_of(i).starts_old.size();
            rec.coverage_entropy = coverage_entropy(set.pools_of(i).starts_old, cfg.coverage_grid, env);
            report.models.push_back(std::move(rec));
        }

        const auto& sched = cfg.schedule;
        if (sched.strategy == Strategy::AsyncSync) {
            if (arcg_step(set, *central, sched.async_sync_period, iteration))
                report.exchange = ExchangeEvent{iteration, sched.strategy, {}};
        } else if (needs_pairing(sched.strategy) && iteration % sched.k == 0) {
            ExchangeEvent ev{iteration, sched.strategy, make_pairing(m, set.orchestration)};
            if (swaps_critics(sched.strategy))
                swap_critics(set, ev.plan);
            else
                swap_pools(set, ev.plan);
            report.exchange = ev;
        }
        if (report.exchange) result.exchanges.push_back(*report.exchange);

        const bool final_iteration = step + 1 == cfg.iterations;
        if (iteration % cfg.eval_every == 0 || final_iteration) {
            const auto rng = eval_stream(cfg.master_seed, iteration);
            const auto best = select_best(set, env, cfg.eval_episodes_per_band, rng, cfg.stochastic_eval);
            for (std::size_t i = 0; i < m; ++i)
                report.evals.push_back({static_cast<long>(i), best.tables[i], set.pools_of(i).starts_old.size(),
                                        coverage_entropy(set.pools_of(i).starts_old, cfg.coverage_grid, env)});
            std::optional<std::vector<EvalRow>> ensemble_rows;
            if (sched.strategy == Strategy::Ensemble) {
                auto erng = rng;
                ensemble_rows = evaluate(ensemble_policy(set.models, cfg.stochastic_eval), env,
                                         cfg.eval_episodes_per_band, erng);
                report.evals.push_back({-1, *ensemble_rows, 0, 0.0});
            }
            if (final_iteration) {
                result.final_tables = best.tables;
                result.best_model = best.index;
                if (ensemble_rows) {
                    result.final_tables.push_back(*ensemble_rows);
                    result.best_is_ensemble = true;
                }
            }
        }

        if (observer) observer(report, set);
        result.reports.push_back(std::move(report));
    }
    return result;
}

}  // namespace prcg
