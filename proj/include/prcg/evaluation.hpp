#pragma once

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "prcg/envs.hpp"
#include "prcg/numerics.hpp"
#include "prcg/ppo.hpp"
#include "prcg/random.hpp"
#include "prcg/rcg.hpp"

namespace prcg {

/// Acts with one actor: the mean action by default, a sampled action when stochastic.
struct ActorPolicy {
    const GaussianPolicy* actor = nullptr;
    bool stochastic = false;

    std::vector<double> act(const State& /*episode_start*/, std::span<const double> state, RandomStream& rng) const {
        return stochastic ? policy_sample(*actor, state, rng).action : policy_mean(*actor, state);
    }
};

/**
 * Picks, at the start state of each episode, the member whose critic values
 * that state highest (ties go to the lowest index), then follows that
 * member's actor for the whole episode.
 */
struct EnsemblePolicy {
    std::vector<const GaussianPolicy*> actors;
    std::vector<const Critic*> critics;
    bool stochastic = false;

    std::size_t arbiter(const State& start) const {
        std::size_t best = 0;
        double best_value = critics.front()->value(start);
        for (std::size_t i = 1; i < critics.size(); ++i) {
            const double v = critics[i]->value(start);
            if (v > best_value) {
                best_value = v;
                best = i;
            }
        }
        return best;
    }

    std::vector<double> act(const State& episode_start, std::span<const double> state, RandomStream& rng) const {
        return ActorPolicy{actors[arbiter(episode_start)], stochastic}.act(episode_start, state, rng);
    }
};

struct EvalRow {
    EvalBand cell;
    double success_rate = 0.0;
    double mean_discounted_return = 0.0;
    std::size_t episodes = 0;
};

struct EpisodeOutcome {
    bool success = false;
    double discounted_return = 0.0;
    int steps = 0;
};

template <class Policy>
EpisodeOutcome run_episode(Env& env, const Policy& policy, const State& start, RandomStream& rng) {
    env.reset_to(start);
    EpisodeOutcome out;
    double discount = 1.0;
    while (!env.episode_done()) {
        const auto res = env.step(policy.act(start, env.observe(), rng));
        out.discounted_return += discount * res.reward;
        out.success = out.success || res.reward > 0.0;
        discount *= env.spec().gamma;
        ++out.steps;
    }
    return out;
}

/// Six rows, one per Near/Mid/Far x Fixed/Variable cell. Runs on a private copy of env.
template <class Policy>
std::vector<EvalRow> evaluate(const Policy& policy, const Env& env, std::size_t episodes_per_band, RandomStream& rng) {
    Env local = env;
    std::vector<EvalRow> rows;
    rows.reserve(kEvalGrid.size());
    for (const auto& cell : kEvalGrid) {
        const auto starts = local.sample_eval_starts(cell, episodes_per_band, rng);
        EvalRow row{cell, 0.0, 0.0, starts.size()};
        for (const auto& s : starts) {
            const auto out = run_episode(local, policy, s, rng);
            row.success_rate += out.success ? 1.0 : 0.0;
            row.mean_discounted_return += out.discounted_return;
        }
        if (!starts.empty()) {
            row.success_rate /= static_cast<double>(starts.size());
            row.mean_discounted_return /= static_cast<double>(starts.size());
        }
        rows.push_back(row);
    }
    return rows;
}

inline double mean_success(std::span<const EvalRow> rows) {
    double s = 0.0;
    for (const auto& r : rows) s += r.success_rate;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

inline const EvalRow& find_row(std::span<const EvalRow> rows, EvalBand cell) {
    for (const auto& r : rows)
        if (r.cell == cell) return r;
    throw UsageError("evaluation table has no such cell");
}

namespace detail {

inline std::map<std::vector<std::size_t>, std::size_t> cell_histogram(std::span<const State> states,
                                                                      std::size_t grid_resolution,
                                                                      std::span<const double> lo,
                                                                      std::span<const double> hi) {
    std::map<std::vector<std::size_t>, std::size_t> counts;
    std::vector<std::size_t> cell(lo.size());
    const auto top = static_cast<long long>(grid_resolution) - 1;
    for (const auto& s : states) {
        for (std::size_t i = 0; i < lo.size(); ++i) {
            const double u = (s[i] - lo[i]) / (hi[i] - lo[i]);
            const auto c = static_cast<long long>(std::floor(u * static_cast<double>(grid_resolution)));
            cell[i] = static_cast<std::size_t>(std::clamp<long long>(c, 0, top));
        }
        ++counts[cell];
    }
    return counts;
}

}  // namespace detail

/**
 * Shannon entropy (natural log) of grid-cell occupancy over [lo, hi].
 * Points on the upper boundary fall into the last cell. An empty pool has entropy 0.
 */
inline double coverage_entropy(std::span<const State> states, std::size_t grid_resolution, std::span<const double> lo,
                               std::span<const double> hi) {
    if (grid_resolution < 2) throw ConfigError("coverage_entropy: grid resolution must be >= 2");
    if (states.empty()) return 0.0;
    const double n = static_cast<double>(states.size());
    double h = 0.0;
    for (const auto& [_, c] : detail::cell_histogram(states, grid_resolution, lo, hi)) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

inline double coverage_entropy(const StartPool& pool, std::size_t grid_resolution, const Env& env) {
    const auto states = pool.states();
    return coverage_entropy(states, grid_resolution, env.geometry().domain_lo, env.geometry().domain_hi);
}

inline std::size_t occupied_cells(std::span<const State> states, std::size_t grid_resolution,
                                  std::span<const double> lo, std::span<const double> hi) {
    return detail::cell_histogram(states, grid_resolution, lo, hi).size();
}

}  // namespace prcg
