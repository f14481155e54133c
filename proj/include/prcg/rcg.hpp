#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prcg/envs.hpp"
#include "prcg/errors.hpp"
#include "prcg/numerics.hpp"
#include "prcg/random.hpp"

namespace prcg {

struct CurriculumConfig {
    std::size_t n_new = 200;
    std::size_t n_old = 100;
    std::size_t n_total = 1000;
    /// Per-action-dimension std of the expansion noise; a single entry is broadcast.
    std::vector<double> sigma{0.02};
    double r_min = 0.93;
    double r_max = 0.96;
    std::size_t rollouts_per_start = 24;

    std::vector<double> sigma_for(std::size_t action_dim) const {
        if (sigma.size() == 1) return std::vector<double>(action_dim, sigma.front());
        if (sigma.size() != action_dim) throw ConfigError("curriculum sigma length does not match the action dimension");
        return sigma;
    }

    void validate() const {
        if (n_new == 0 || n_old == 0 || n_total == 0 || rollouts_per_start == 0)
            throw ConfigError("curriculum sizes must be positive");
        if (n_total < n_new) throw ConfigError("curriculum n_total must be >= n_new");
        if (sigma.empty()) throw ConfigError("curriculum sigma must be nonempty");
        for (double s : sigma)
            if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("curriculum sigma entries must be positive");
        if (!(r_min > 0.0 && r_min < r_max && r_max <= 1.0))
            throw ConfigError("curriculum bounds must satisfy 0 < r_min < r_max <= 1");
    }
};

/// Append-only list of feasible states tagged with the iteration that added them.
class StartPool {
public:
    struct Entry {
        State state;
        std::size_t added_at_iteration = 0;
        /// Estimated return at insertion; NaN for seeded goal states.
        double r_hat = std::numeric_limits<double>::quiet_NaN();

        friend bool operator==(const Entry& a, const Entry& b) {
            return a.state == b.state && a.added_at_iteration == b.added_at_iteration &&
                   (a.r_hat == b.r_hat || (std::isnan(a.r_hat) && std::isnan(b.r_hat)));
        }
    };

    StartPool() = default;

    static StartPool from_goals(const std::vector<State>& goals) {
        StartPool p;
        for (const auto& g : goals) p.append(g, 0);
        return p;
    }

    void append(State s, std::size_t iteration, double r_hat = std::numeric_limits<double>::quiet_NaN()) {
        if (!entries_.empty() && iteration < entries_.back().added_at_iteration)
            throw UsageError("StartPool is append-only: iteration tags must be nondecreasing");
        entries_.push_back({std::move(s), iteration, r_hat});
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const State& operator[](std::size_t i) const { return entries_[i].state; }

    std::vector<State> states() const {
        std::vector<State> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.state);
        return out;
    }

    friend bool operator==(const StartPool&, const StartPool&) = default;

private:
    std::vector<Entry> entries_;
};

/// The pair of pools carried by one model: expansion seeds and the good-starts archive.
struct CurriculumPools {
    StartPool starts;
    StartPool starts_old;

    static CurriculumPools from_goals(const std::vector<State>& goals) {
        return {StartPool::from_goals(goals), StartPool::from_goals(goals)};
    }

    friend bool operator==(const CurriculumPools&, const CurriculumPools&) = default;
};

struct ReturnEstimate {
    State start;
    double r_hat = 0.0;
    std::size_t successes = 0;
    std::size_t rollouts = 0;
};

// ---------------------------------------------------------------------------

/// Brownian expansion: t_max-step random-action walks from a growing buffer, then n_new uniform picks.
inline std::vector<State> sample_nearby(Env& env, const std::vector<State>& seeds, std::size_t n_total,
                                        std::span<const double> sigma, std::size_t n_new, RandomStream& rng) {
    if (seeds.empty()) throw UsageError("sample_nearby: seed list is empty");
    if (sigma.size() != env.spec().action_dim) throw ConfigError("sample_nearby: sigma has the wrong length");
    for (const auto& s : seeds)
        if (!env.is_feasible(s)) throw UsageError("sample_nearby: seed state is not feasible");

    const auto horizon = static_cast<std::size_t>(env.spec().t_max);
    std::vector<State> buffer = seeds;
    buffer.reserve(n_total + horizon);
    std::vector<double> action(sigma.size());
    while (buffer.size() < n_total) {
        State s = buffer[rng.index(buffer.size())];
        // Expansion walks run the whole horizon; reaching the goal does not stop them.
        for (std::size_t t = 0; t < horizon; ++t) {
            for (std::size_t i = 0; i < action.size(); ++i) action[i] = sigma[i] * rng.normal();
            s = env.transition(s, action);
            buffer.push_back(s);
        }
    }

    const std::size_t n = std::min(n_new, buffer.size());
    // Partial Fisher-Yates: the first n slots become a uniform sample without replacement.
    for (std::size_t i = 0; i < n; ++i) std::swap(buffer[i], buffer[i + rng.index(buffer.size() - i)]);
    buffer.resize(n);
    return buffer;
}

inline std::vector<double> draw_action(const GaussianPolicy& policy, std::span<const double> state,
                                       RandomStream& rng) {
    return policy_sample(policy, state, rng).action;
}

/// Deterministic scripted policies: any callable state -> action.
template <class F>
    requires std::invocable<const F&, std::span<const double>>
std::vector<double> draw_action(const F& policy, std::span<const double> state, RandomStream&) {
    return policy(state);
}

/// Stochastic scripted policies: any callable (state, rng) -> action.
template <class F>
    requires std::invocable<const F&, std::span<const double>, RandomStream&>
std::vector<double> draw_action(const F& policy, std::span<const double> state, RandomStream& rng) {
    return policy(state, rng);
}

/// Monte-Carlo estimate of E[sum_t gamma^t r_t] from s0, where t counts actions from 0.
template <class Policy>
ReturnEstimate estimate_return(Env& env, const Policy& policy, const State& s0, std::size_t rollouts, double gamma,
                               RandomStream& rng) {
    ReturnEstimate est{s0, 0.0, 0, rollouts};
    if (rollouts == 0) return est;
    double total = 0.0;
    for (std::size_t k = 0; k < rollouts; ++k) {
        env.reset_to(s0);
        double discount = 1.0;
        double ret = 0.0;
        bool success = false;
        while (!env.episode_done()) {
            const auto action = draw_action(policy, env.observe(), rng);
            const auto res = env.step(action);
            ret += discount * res.reward;
            success = success || res.reward > 0.0;
            discount *= gamma;
        }
        total += ret;
        if (success) ++est.successes;
    }
    est.r_hat = total / static_cast<double>(rollouts);
    return est;
}

/// Starts whose estimate lies strictly inside (r_min, r_max).
inline std::vector<State> select_good_starts(std::span<const ReturnEstimate> estimates, double r_min, double r_max) {
    std::vector<State> out;
    for (const auto& e : estimates)
        if (e.r_hat > r_min && e.r_hat < r_max) out.push_back(e.start);
    return out;
}

struct CurriculumDiagnostics {
    std::size_t iteration = 0;
    std::size_t start_list_size = 0;
    std::size_t distinct_starts = 0;
    std::size_t survivors = 0;
    bool fallback_used = false;
    double mean_r_hat = 0.0;
};

/// Outcome of filtering one iteration's start list, not yet applied to any pool.
struct FilterOutcome {
    std::vector<ReturnEstimate> estimates;
    std::vector<ReturnEstimate> survivors;
};

/// Expansion seeds plus n_old draws from the archive; rollouts start uniformly from this list.
inline std::vector<State> propose_starts(Env& env, const CurriculumPools& pools, const CurriculumConfig& config,
                                         RandomStream& rng) {
    if (pools.starts.empty() || pools.starts_old.empty()) throw UsageError("curriculum pools must be seeded");
    const auto sigma = config.sigma_for(env.spec().action_dim);
    auto list = sample_nearby(env, pools.starts.states(), config.n_total, sigma, config.n_new, rng);
    for (std::size_t i = 0; i < config.n_old; ++i) list.push_back(pools.starts_old[rng.index(pools.starts_old.size())]);
    return list;
}

/// Estimates each distinct start once and keeps the good ones. Starts inside the goal region never survive.
template <class Policy>
FilterOutcome filter_starts(Env& env, const Policy& policy, const std::vector<State>& start_list,
                            const CurriculumConfig& config, RandomStream& rng) {
    FilterOutcome out;
    std::map<State, std::size_t> seen;
    for (const auto& s : start_list) {
        if (!seen.emplace(s, out.estimates.size()).second) continue;
        out.estimates.push_back(estimate_return(env, policy, s, config.rollouts_per_start, env.spec().gamma, rng));
    }
    for (const auto& e : out.estimates)
        if (e.r_hat > config.r_min && e.r_hat < config.r_max && !env.in_goal(e.start)) out.survivors.push_back(e);
    return out;
}

/// Survivors become the next expansion seeds and join the archive; with no survivors, reseed from the archive.
inline void commit_survivors(CurriculumPools& pools, const std::vector<ReturnEstimate>& survivors,
                             std::size_t iteration, const CurriculumConfig& config, RandomStream& rng) {
    for (const auto& e : survivors)
        if (!(e.r_hat > config.r_min && e.r_hat < config.r_max))
            throw UsageError("commit_survivors: estimate outside (r_min, r_max)");
    StartPool next;
    if (survivors.empty()) {
        for (std::size_t i = 0; i < config.n_old; ++i) {
            const auto& e = pools.starts_old.entries()[rng.index(pools.starts_old.size())];
            next.append(e.state, iteration, e.r_hat);
        }
    } else {
        for (const auto& e : survivors) {
            next.append(e.start, iteration, e.r_hat);
            pools.starts_old.append(e.start, iteration, e.r_hat);
        }
    }
    pools.starts = std::move(next);
}

struct CurriculumStep {
    std::vector<State> start_list;
    FilterOutcome filter;
    CurriculumDiagnostics diagnostics;
};

inline CurriculumDiagnostics make_diagnostics(std::size_t iteration, const std::vector<State>& list,
                                              const FilterOutcome& f) {
    CurriculumDiagnostics d;
    d.iteration = iteration;
    d.start_list_size = list.size();
    d.distinct_starts = f.estimates.size();
    d.survivors = f.survivors.size();
    d.fallback_used = f.survivors.empty();
    double sum = 0.0;
    for (const auto& e : f.estimates) sum += e.r_hat;
    d.mean_r_hat = f.estimates.empty() ? 0.0 : sum / static_cast<double>(f.estimates.size());
    return d;
}

/**
 * One reverse-curriculum iteration for a single model with private pools:
 * expand, mix in archived starts, estimate returns under the current policy,
 * filter, and commit. Returns the start list the iteration's training
 * rollouts are drawn from.
 */
template <class Policy>
CurriculumStep curriculum_iteration(Env& env, const Policy& policy, CurriculumPools& pools,
                                    const CurriculumConfig& config, std::size_t iteration, RandomStream& rng) {
    config.validate();
    CurriculumStep step;
    step.start_list = propose_starts(env, pools, config, rng);
    step.filter = filter_starts(env, policy, step.start_list, config, rng);
    commit_survivors(pools, step.filter.survivors, iteration, config, rng);
    step.diagnostics = make_diagnostics(iteration, step.start_list, step.filter);
    return step;
}

}  // namespace prcg
