#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prcg/envs.hpp"
#include "prcg/errors.hpp"
#include "prcg/numerics.hpp"
#include "prcg/random.hpp"

namespace prcg {

/// State-value network.
struct Critic {
    MlpSpec spec;
    ParamVector params;
    InputScaling input_scaling;

    double value(std::span<const double> state) const {
        return mlp_forward(spec, params, input_scaling.apply(state)).front();
    }

    static Critic create(MlpSpec spec, RandomStream& rng, InputScaling input_scaling = {}) {
        spec.output_dim = 1;
        input_scaling.validate(spec.input_dim);
        return {spec, init_mlp(spec, rng, 1.0), std::move(input_scaling)};
    }

    friend bool operator==(const Critic&, const Critic&) = default;
};

struct Trajectory {
    std::vector<State> states;
    std::vector<std::vector<double>> actions;
    std::vector<double> rewards;
    std::vector<double> log_probs;
    std::vector<double> values;
    State start_state;
    /// Critic value of the final next state when the horizon cut the episode; 0 when the goal ended it.
    double bootstrap_value = 0.0;
    bool reached_goal = false;

    std::size_t length() const noexcept { return rewards.size(); }

    double discounted_return(double gamma) const {
        double ret = 0.0, discount = 1.0;
        for (double r : rewards) {
            ret += discount * r;
            discount *= gamma;
        }
        return ret;
    }
};

struct RolloutBatch {
    std::vector<Trajectory> trajectories;
    std::size_t total_steps = 0;
};

struct PpoConfig {
    double clip_epsilon = 0.2;
    std::size_t epochs_per_update = 10;
    std::size_t minibatch_size = 256;
    double gae_lambda = 0.95;
    double value_loss_coeff = 0.5;
    std::size_t batch_size = 2056;
    double lr = 3e-4;

    void validate() const {
        if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("ppo clip_epsilon must lie in (0, 1)");
        if (epochs_per_update == 0 || minibatch_size == 0 || batch_size == 0)
            throw ConfigError("ppo epochs, minibatch size and batch size must be positive");
        if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo gae_lambda must lie in [0, 1]");
        if (!(value_loss_coeff > 0.0)) throw ConfigError("ppo value_loss_coeff must be positive");
        if (!(lr > 0.0)) throw ConfigError("ppo learning rate must be positive");
    }
};

/**
 * Runs whole episodes from uniformly drawn starts until at least batch_size
 * steps are collected. Values are recorded from the critic at collection time.
 */
inline RolloutBatch collect_rollouts(Env& env, const GaussianPolicy& policy, const Critic& critic,
                                     std::span<const State> starts, std::size_t batch_size, RandomStream& rng) {
    if (starts.empty()) throw UsageError("collect_rollouts: start list is empty");
    RolloutBatch batch;
    while (batch.total_steps < batch_size) {
        Trajectory traj;
        traj.start_state = starts[rng.index(starts.size())];
        env.reset_to(traj.start_state);
        while (!env.episode_done()) {
            const State s = env.observe();
            traj.values.push_back(critic.value(s));
            auto sample = policy_sample(policy, s, rng);
            const auto res = env.step(sample.action);
            traj.states.push_back(s);
            traj.actions.push_back(std::move(sample.action));
            traj.log_probs.push_back(sample.log_prob);
            traj.rewards.push_back(res.reward);
            if (res.done) {
                traj.reached_goal = res.done_reason == DoneReason::GoalReached;
                traj.bootstrap_value = traj.reached_goal ? 0.0 : critic.value(res.next_state);
            }
        }
        batch.total_steps += traj.length();
        batch.trajectories.push_back(std::move(traj));
    }
    return batch;
}

struct AdvantageResult {
    /// Flattened in trajectory order.
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// Generalized advantage estimation over every trajectory; return targets = advantages + values.
inline AdvantageResult compute_advantages(const RolloutBatch& batch, double gamma, double gae_lambda) {
    AdvantageResult out;
    out.advantages.reserve(batch.total_steps);
    out.returns.reserve(batch.total_steps);
    std::vector<double> adv;
    for (const auto& traj : batch.trajectories) {
        const std::size_t n = traj.length();
        adv.assign(n, 0.0);
        double running = 0.0;
        for (std::size_t t = n; t-- > 0;) {
            const double next_v = (t + 1 == n) ? traj.bootstrap_value : traj.values[t + 1];
            const double delta = traj.rewards[t] + gamma * next_v - traj.values[t];
            running = delta + gamma * gae_lambda * running;
            adv[t] = running;
        }
        for (std::size_t t = 0; t < n; ++t) {
            out.advantages.push_back(adv[t]);
            out.returns.push_back(adv[t] + traj.values[t]);
        }
    }
    return out;
}

/// Shifts and scales to mean 0, std 1 (population std). Left centred only when there is a single entry.
inline void normalize_advantages(std::vector<double>& adv) {
    if (adv.empty()) return;
    const double n = static_cast<double>(adv.size());
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= n;
    const double scale = (adv.size() > 1 && var > 0.0) ? 1.0 / std::sqrt(var) : 1.0;
    for (double& a : adv) a = (a - mean) * scale;
}

/// Clipped surrogate per-step objective min(r*A, clip(r, 1-eps, 1+eps)*A).
inline double clipped_surrogate(double ratio, double advantage, double eps) {
    return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

/// d(clipped_surrogate)/d(log pi): r*A on the unclipped branch, zero where clipping is active.
inline double clipped_surrogate_logprob_grad(double ratio, double advantage, double eps) {
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
    return unclipped <= clipped ? unclipped : 0.0;
}

struct PpoOptimizers {
    AdamState actor;
    AdamState log_std;
    AdamState critic;

    static PpoOptimizers for_model(const GaussianPolicy& actor, const Critic& critic, double lr) {
        return {AdamState::for_size(actor.mean_params.size(), lr), AdamState::for_size(actor.log_std.size(), lr),
                AdamState::for_size(critic.params.size(), lr)};
    }

    friend bool operator==(const PpoOptimizers&, const PpoOptimizers&) = default;
};

struct PpoStats {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double initial_critic_loss = 0.0;
    double clip_fraction = 0.0;
    double mean_ratio = 1.0;
    /// max |ratio - 1| over the batch before any gradient step.
    double initial_ratio_deviation = 0.0;
    double mean_return = 0.0;
    double success_fraction = 0.0;
    std::size_t steps = 0;
    std::size_t gradient_steps = 0;
    bool aborted = false;
    std::string abort_reason;
};

namespace detail {

struct FlatBatch {
    Eigen::MatrixXd states;   // state_dim x N
    Eigen::MatrixXd actions;  // action_dim x N
    std::vector<double> log_probs;
};

inline FlatBatch flatten(const RolloutBatch& batch, std::size_t state_dim, std::size_t action_dim) {
    FlatBatch f;
    const auto n = static_cast<Eigen::Index>(batch.total_steps);
    f.states.resize(static_cast<Eigen::Index>(state_dim), n);
    f.actions.resize(static_cast<Eigen::Index>(action_dim), n);
    f.log_probs.reserve(batch.total_steps);
    Eigen::Index col = 0;
    for (const auto& traj : batch.trajectories) {
        for (std::size_t t = 0; t < traj.length(); ++t, ++col) {
            for (std::size_t i = 0; i < state_dim; ++i) f.states(static_cast<Eigen::Index>(i), col) = traj.states[t][i];
            for (std::size_t i = 0; i < action_dim; ++i)
                f.actions(static_cast<Eigen::Index>(i), col) = traj.actions[t][i];
            f.log_probs.push_back(traj.log_probs[t]);
        }
    }
    return f;
}

inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const std::size_t> idx) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(idx[c]));
    return out;
}

/// Column-wise diagonal Gaussian log densities; the same arithmetic as gaussian_logprob.
inline std::vector<double> batch_logprob(const Eigen::MatrixXd& means, std::span<const double> log_std,
                                         const Eigen::MatrixXd& actions) {
    std::vector<double> out(static_cast<std::size_t>(means.cols()));
    for (Eigen::Index c = 0; c < means.cols(); ++c) {
        double lp = 0.0;
        for (Eigen::Index i = 0; i < means.rows(); ++i) {
            const double ls = log_std[static_cast<std::size_t>(i)];
            const double z = (actions(i, c) - means(i, c)) * std::exp(-ls);
            lp += -0.5 * z * z - ls - kHalfLog2Pi;
        }
        out[static_cast<std::size_t>(c)] = lp;
    }
    return out;
}

}  // namespace detail

/**
 * Clipped-surrogate PPO update of a Gaussian actor and a separate value critic.
 *
 * Advantages are normalized over the whole batch. Each epoch visits the batch
 * in a fresh shuffled order, split into minibatches; every minibatch takes one
 * Adam step on the actor mean network, one on log_std and one on the critic.
 * A non-finite loss or gradient abandons the update and leaves all parameters
 * and optimizer states as they were.
 */
inline PpoStats ppo_update(GaussianPolicy& actor, Critic& critic, const RolloutBatch& batch, double gamma,
                           const PpoConfig& config, PpoOptimizers& optimizers, RandomStream& rng) {
    config.validate();
    PpoStats stats;
    stats.steps = batch.total_steps;
    if (batch.total_steps == 0) return stats;
    {
        double ret = 0.0;
        std::size_t successes = 0;
        for (const auto& traj : batch.trajectories) {
            ret += traj.discounted_return(gamma);
            successes += traj.reached_goal ? 1 : 0;
        }
        stats.mean_return = ret / static_cast<double>(batch.trajectories.size());
        stats.success_fraction = static_cast<double>(successes) / static_cast<double>(batch.trajectories.size());
    }

    auto adv = compute_advantages(batch, gamma, config.gae_lambda);
    normalize_advantages(adv.advantages);
    const auto flat = detail::flatten(batch, actor.state_dim(), actor.action_dim());
    const Eigen::MatrixXd actor_inputs = actor.input_scaling.apply(flat.states);
    const Eigen::MatrixXd critic_inputs = critic.input_scaling.apply(flat.states);
    const std::size_t n = batch.total_steps;

    Eigen::VectorXd scale(static_cast<Eigen::Index>(actor.action_dim()));
    for (std::size_t i = 0; i < actor.action_dim(); ++i) scale(static_cast<Eigen::Index>(i)) = actor.scale(i);

    GaussianPolicy new_actor = actor;
    Critic new_critic = critic;
    PpoOptimizers new_opt = optimizers;

    {
        const Eigen::MatrixXd means =
            scale.asDiagonal() * mlp_forward_batch(new_actor.mean_spec, new_actor.mean_params, actor_inputs);
        const auto lps = detail::batch_logprob(means, new_actor.effective_log_std(), flat.actions);
        for (std::size_t i = 0; i < n; ++i)
            stats.initial_ratio_deviation =
                std::max(stats.initial_ratio_deviation, std::abs(std::exp(lps[i] - flat.log_probs[i]) - 1.0));
        const auto values = mlp_forward_batch(new_critic.spec, new_critic.params, critic_inputs);
        double mse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = values(0, static_cast<Eigen::Index>(i)) - adv.returns[i];
            mse += e * e;
        }
        stats.initial_critic_loss = mse / static_cast<double>(n);
    }

    const double eps = config.clip_epsilon;
    const std::size_t action_dim = actor.action_dim();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    double actor_loss_sum = 0.0, critic_loss_sum = 0.0, ratio_sum = 0.0;
    std::size_t clipped = 0, samples_seen = 0, minibatches = 0;

    try {
        for (std::size_t epoch = 0; epoch < config.epochs_per_update; ++epoch) {
            for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
            const bool last_epoch = epoch + 1 == config.epochs_per_update;
            for (std::size_t begin = 0; begin < n; begin += config.minibatch_size) {
                const std::size_t end = std::min(n, begin + config.minibatch_size);
                const std::span<const std::size_t> idx(order.data() + begin, end - begin);
                const auto mb = static_cast<Eigen::Index>(idx.size());
                const double inv = 1.0 / static_cast<double>(idx.size());
                const Eigen::MatrixXd states = detail::gather_columns(actor_inputs, idx);
                const Eigen::MatrixXd critic_states = detail::gather_columns(critic_inputs, idx);
                const Eigen::MatrixXd actions = detail::gather_columns(flat.actions, idx);

                // actor
                const auto tape = mlp_forward_tape(new_actor.mean_spec, new_actor.mean_params, states);
                const Eigen::MatrixXd means = scale.asDiagonal() * tape.output();
                const auto log_std = new_actor.effective_log_std();
                const auto lps = detail::batch_logprob(means, log_std, actions);
                Eigen::MatrixXd mean_grad(static_cast<Eigen::Index>(action_dim), mb);
                std::vector<double> log_std_grad(action_dim, 0.0);
                double actor_loss = 0.0;
                for (Eigen::Index c = 0; c < mb; ++c) {
                    const std::size_t k = idx[static_cast<std::size_t>(c)];
                    const double ratio = std::exp(lps[static_cast<std::size_t>(c)] - flat.log_probs[k]);
                    const double a = adv.advantages[k];
                    actor_loss -= clipped_surrogate(ratio, a, eps) * inv;
                    // loss = -mean(surrogate): dloss/dlogp = -grad/N
                    const double g = -clipped_surrogate_logprob_grad(ratio, a, eps) * inv;
                    if (last_epoch) {
                        ratio_sum += ratio;
                        ++samples_seen;
                        if (std::abs(ratio - 1.0) > eps) ++clipped;
                    }
                    for (std::size_t d = 0; d < action_dim; ++d) {
                        const auto di = static_cast<Eigen::Index>(d);
                        const double inv_var = std::exp(-2.0 * log_std[d]);
                        const double diff = actions(di, c) - means(di, c);
                        // chain through mean = scale * net
                        mean_grad(di, c) = g * diff * inv_var * scale(di);
                        log_std_grad[d] += g * (diff * diff * inv_var - 1.0);
                    }
                }

                // critic
                const auto vtape = mlp_forward_tape(new_critic.spec, new_critic.params, critic_states);
                Eigen::MatrixXd value_grad(1, mb);
                double critic_loss = 0.0;
                for (Eigen::Index c = 0; c < mb; ++c) {
                    const double e = vtape.output()(0, c) - adv.returns[idx[static_cast<std::size_t>(c)]];
                    critic_loss += e * e * inv;
                    value_grad(0, c) = config.value_loss_coeff * 2.0 * e * inv;
                }
                if (!std::isfinite(actor_loss) || !std::isfinite(critic_loss))
                    throw OptimizerError("non-finite loss in epoch " + std::to_string(epoch));

                const auto actor_grads = mlp_backward_batch(new_actor.mean_spec, new_actor.mean_params, tape, mean_grad);
                const auto critic_grads = mlp_backward_batch(new_critic.spec, new_critic.params, vtape, value_grad);
                adam_apply(new_opt.actor, new_actor.mean_params.span(), actor_grads.span());
                adam_apply(new_opt.log_std, new_actor.log_std, log_std_grad);
                adam_apply(new_opt.critic, new_critic.params.span(), critic_grads.span());
                new_actor.clamp_log_std();
                if (!new_actor.mean_params.all_finite() || !new_critic.params.all_finite())
                    throw OptimizerError("non-finite parameters after step");

                ++stats.gradient_steps;
                if (last_epoch) {
                    actor_loss_sum += actor_loss;
                    critic_loss_sum += critic_loss;
                    ++minibatches;
                }
            }
        }
    } catch (const OptimizerError& e) {
        stats.aborted = true;
        stats.abort_reason = e.what();
        return stats;
    }

    stats.actor_loss = minibatches ? actor_loss_sum / static_cast<double>(minibatches) : 0.0;
    stats.critic_loss = minibatches ? critic_loss_sum / static_cast<double>(minibatches) : 0.0;
    stats.mean_ratio = samples_seen ? ratio_sum / static_cast<double>(samples_seen) : 1.0;
    stats.clip_fraction = samples_seen ? static_cast<double>(clipped) / static_cast<double>(samples_seen) : 0.0;
    actor = std::move(new_actor);
    critic = std::move(new_critic);
    optimizers = std::move(new_opt);
    return stats;
}

}  // namespace prcg
