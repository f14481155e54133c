#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "prcg/parallel.hpp"

using namespace prcg;

namespace {

NetworkConfig small_net() {
    NetworkConfig n;
    n.hidden_dims = {8, 8};
    return n;
}

TrainConfig small_train(Strategy s, std::size_t k, std::size_t iterations) {
    TrainConfig c;
    c.schedule.strategy = s;
    c.schedule.k = k;
    c.schedule.async_sync_period = 3;
    c.curriculum.n_new = 20;
    c.curriculum.n_old = 10;
    c.curriculum.n_total = 50;
    c.curriculum.rollouts_per_start = 4;
    c.ppo.batch_size = 64;
    c.ppo.minibatch_size = 32;
    c.ppo.epochs_per_update = 2;
    c.iterations = iterations;
    c.eval_every = 1000;
    c.eval_episodes_per_band = 4;
    c.master_seed = 17;
    return c;
}

ModelSet make_set(const Env& env, std::size_t m, Strategy s, std::uint64_t seed = 5) {
    return ModelSet::create(env, m, small_net(), 3e-4, seed, uses_common_pool(s));
}

}  // namespace

TEST(Pairing, PerfectMatchingWithUniformPartners) {
    RandomStream rng(1);
    std::array<int, 4> partner_of_zero{};
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const auto plan = make_pairing(4, rng);
        ASSERT_TRUE(plan.is_perfect_matching(4));
        for (const auto& [i, j] : plan.pairs)
            if (i == 0) ++partner_of_zero[j];
    }
    EXPECT_EQ(partner_of_zero[0], 0);
    for (int j = 1; j < 4; ++j) EXPECT_NEAR(partner_of_zero[j] / double(draws), 1.0 / 3.0, 0.02);
    EXPECT_TRUE(make_pairing(2, rng).is_perfect_matching(2));
    EXPECT_THROW(make_pairing(3, rng), ConfigError);
    EXPECT_THROW(make_pairing(0, rng), ConfigError);
}

TEST(Pairing, PlanValidation) {
    EXPECT_FALSE((PairingPlan{{{0, 1}, {1, 2}}}.is_perfect_matching(4)));
    EXPECT_FALSE((PairingPlan{{{0, 0}, {2, 3}}}.is_perfect_matching(4)));
    EXPECT_FALSE((PairingPlan{{{0, 1}}}.is_perfect_matching(4)));
    EXPECT_TRUE((PairingPlan{{{0, 3}, {1, 2}}}.is_perfect_matching(4)));
}

TEST(Schedule, ValidatesModelCount) {
    SwapSchedule s;
    EXPECT_NO_THROW(s.validate(4));
    EXPECT_THROW(s.validate(3), ConfigError);
    s.k = 0;
    EXPECT_THROW(s.validate(4), ConfigError);
    s = SwapSchedule{Strategy::NoExchange};
    EXPECT_NO_THROW(s.validate(3));
    s = SwapSchedule{Strategy::Ensemble};
    EXPECT_THROW(s.validate(1), ConfigError);
    EXPECT_EQ(parse_strategy("swap-critics"), Strategy::SwapCritics);
    EXPECT_THROW(parse_strategy("bogus"), ConfigError);
    for (const auto& [v, name] : kStrategyNames) EXPECT_EQ(parse_strategy(to_string(v)), v);
}

TEST(Exchange, CriticSwapIsInvolutionAndKeepsActors) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 4, Strategy::SwapCritics);
    set.models[1].optimizers.critic.step_count = 7;
    const ModelSet before = set;
    const PairingPlan plan{{{0, 2}, {1, 3}}};
    swap_critics(set, plan);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(set.models[i].actor, before.models[i].actor);
        EXPECT_EQ(set.models[i].optimizers.actor, before.models[i].optimizers.actor);
        EXPECT_EQ(set.models[i].optimizers.log_std, before.models[i].optimizers.log_std);
        EXPECT_EQ(set.pools[i], before.pools[i]);
    }
    EXPECT_EQ(set.models[0].critic, before.models[2].critic);
    EXPECT_EQ(set.models[2].critic, before.models[0].critic);
    EXPECT_EQ(set.models[3].critic, before.models[1].critic);
    EXPECT_EQ(set.models[3].optimizers.critic.step_count, 7u);
    swap_critics(set, plan);
    EXPECT_EQ(set, before);
    EXPECT_THROW(swap_critics(set, PairingPlan{{{0, 1}}}), UsageError);
}

TEST(Exchange, TwoModelsSwapDistinctCritics) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 2, Strategy::SwapCritics);
    ASSERT_NE(set.models[0].critic, set.models[1].critic);
    const auto c0 = set.models[0].critic, c1 = set.models[1].critic;
    RandomStream rng(2);
    swap_critics(set, make_pairing(2, rng));
    EXPECT_EQ(set.models[0].critic, c1);
    EXPECT_EQ(set.models[1].critic, c0);
}

TEST(Exchange, PoolSwapKeepsNetworks) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 2, Strategy::SwapInitPools);
    set.pools[0].starts_old.append(State{0.3, 0.3}, 1);
    const ModelSet before = set;
    swap_pools(set, PairingPlan{{{0, 1}}});
    EXPECT_EQ(set.pools[0], before.pools[1]);
    EXPECT_EQ(set.pools[1], before.pools[0]);
    EXPECT_EQ(set.models, before.models);

    ModelSet shared = make_set(env, 2, Strategy::CommonPoolNoSwap);
    EXPECT_EQ(shared.pools.size(), 1u);
    EXPECT_THROW(swap_pools(shared, PairingPlan{{{0, 1}}}), UsageError);
}

TEST(Async, CentralAbsorbsDeltasAndBroadcasts) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 2, Strategy::AsyncSync);
    auto central = CentralParams::from(set);
    const auto p0 = set.models[0].actor.mean_params;
    const auto c0 = set.models[0].critic.params;
    const double d = 0.125;
    for (auto& v : set.models[0].actor.mean_params.values) v += d;
    for (auto& v : set.models[1].actor.mean_params.values) v -= d;
    for (auto& v : set.models[1].critic.params.values) v += d;

    const ModelSet unsynced = set;
    EXPECT_FALSE(arcg_step(set, central, 3, 2));
    EXPECT_EQ(set, unsynced);

    ASSERT_TRUE(arcg_step(set, central, 3, 3));
    for (std::size_t k = 0; k < p0.size(); ++k) {
        EXPECT_NEAR(set.models[0].actor.mean_params[k], p0[k], 1e-12);
        EXPECT_NEAR(set.models[1].actor.mean_params[k], p0[k], 1e-12);
    }
    for (std::size_t k = 0; k < c0.size(); ++k) EXPECT_NEAR(set.models[1].critic.params[k], c0[k] + d, 1e-12);
    EXPECT_EQ(set.models[0].actor.mean_params, set.models[1].actor.mean_params);

    // A second sync with no local change leaves everything in place.
    const ModelSet synced = set;
    ASSERT_TRUE(arcg_step(set, central, 3, 6));
    EXPECT_EQ(set, synced);
    EXPECT_THROW(arcg_step(set, central, 0, 6), ConfigError);
}

TEST(Ensemble, ArbiterPicksHighestCriticWithLowIndexTies) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 3, Strategy::Ensemble);
    for (auto& m : set.models) std::fill(m.critic.params.values.begin(), m.critic.params.values.end(), 0.0);
    const State s{0.2, 0.2};
    auto pol = ensemble_policy(set.models);
    EXPECT_EQ(pol.arbiter(s), 0u);
    set.models[2].critic.params.values.back() = 0.5;  // output bias
    pol = ensemble_policy(set.models);
    EXPECT_EQ(pol.arbiter(s), 2u);
    set.models[1].critic.params.values.back() = 0.5;
    pol = ensemble_policy(set.models);
    EXPECT_EQ(pol.arbiter(s), 1u);
    RandomStream rng(3);
    EXPECT_EQ(pol.act(s, s, rng), policy_mean(set.models[1].actor, s));
}

TEST(SelectBest, ArgmaxOfMeanSuccessOnSharedDraws) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 3, Strategy::NoExchange);
    // Model 1 gets a large output bias so its table differs from the others.
    set.models[1].actor.mean_params.values.end()[-2] = 10.0;
    const RandomStream rng(4);
    const auto best = select_best(set, env, 10, rng);
    ASSERT_EQ(best.tables.size(), 3u);
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        RandomStream r = rng;
        EXPECT_EQ(evaluate(ActorPolicy{&set.models[i].actor}, env, 10, r).size(), best.tables[i].size());
        if (mean_success(best.tables[i]) > mean_success(best.tables[argmax])) argmax = i;
    }
    EXPECT_EQ(best.index, argmax);

    ModelSet same = make_set(env, 1, Strategy::NoExchange);
    same.models.push_back(same.models[0]);
    EXPECT_EQ(select_best(same, env, 5, rng).index, 0u);
}

TEST(Train, NoExchangeMatchesIndependentRuns) {
    const Env env = make_env("pointmaze-open");
    const auto cfg = small_train(Strategy::NoExchange, 20, 6);
    ModelSet joint = make_set(env, 3, Strategy::NoExchange);
    train(env, joint, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        ModelSet alone = ModelSet::create(env, 1, small_net(), 3e-4, 5, false, i);
        train(env, alone, cfg);
        EXPECT_EQ(alone.models[0], joint.models[i]) << i;
        EXPECT_EQ(alone.pools[0], joint.pools[i]) << i;
    }
}

TEST(Train, ExchangeRateBeyondHorizonEqualsNoExchange) {
    const Env env = make_env("pointmaze-open");
    ModelSet a = make_set(env, 2, Strategy::SwapCritics);
    ModelSet b = make_set(env, 2, Strategy::NoExchange);
    const auto ra = train(env, a, small_train(Strategy::SwapCritics, 7, 6));
    train(env, b, small_train(Strategy::NoExchange, 7, 6));
    EXPECT_TRUE(ra.exchanges.empty());
    EXPECT_EQ(a.models, b.models);
    EXPECT_EQ(a.pools, b.pools);
}

TEST(Train, SwapsFireEveryKIterations) {
    const Env env = make_env("pointmaze");
    ModelSet set = make_set(env, 2, Strategy::SwapCritics);
    auto cfg = small_train(Strategy::SwapCritics, 20, 100);
    cfg.curriculum.n_total = 20;
    cfg.curriculum.n_new = 10;
    cfg.curriculum.rollouts_per_start = 2;
    cfg.ppo.epochs_per_update = 1;
    std::vector<std::size_t> fired;
    const auto r = train(env, set, cfg, [&](const IterationReport& rep, const ModelSet&) {
        if (rep.exchange) fired.push_back(rep.iteration);
    });
    EXPECT_EQ(fired, (std::vector<std::size_t>{20, 40, 60, 80, 100}));
    ASSERT_EQ(r.exchanges.size(), 5u);
    for (const auto& e : r.exchanges) EXPECT_TRUE(e.plan.is_perfect_matching(2));
    EXPECT_EQ(r.reports.size(), 100u);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
    const Env env = make_env("pointmaze-open");
    for (Strategy s : {Strategy::SwapCritics, Strategy::CommonPoolSwapCritics, Strategy::AsyncSync}) {
        auto cfg = small_train(s, 2, 5);
        cfg.eval_every = 5;
        ModelSet serial = make_set(env, 4, s);
        ModelSet threaded = make_set(env, 4, s);
        const auto r1 = train(env, serial, cfg);
        cfg.workers = 4;
        const auto r2 = train(env, threaded, cfg);
        EXPECT_EQ(serial, threaded) << to_string(s);
        ASSERT_EQ(r1.final_tables.size(), r2.final_tables.size());
        for (std::size_t i = 0; i < r1.final_tables.size(); ++i)
            for (std::size_t c = 0; c < r1.final_tables[i].size(); ++c)
                EXPECT_EQ(r1.final_tables[i][c].success_rate, r2.final_tables[i][c].success_rate);
    }
}

TEST(Train, ActorsStayDistinctAcrossCriticSwaps) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 4, Strategy::SwapCritics);
    train(env, set, small_train(Strategy::SwapCritics, 2, 6), [&](const IterationReport& rep, const ModelSet& s) {
        if (!rep.exchange) return;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j) {
                EXPECT_NE(s.models[i].actor.mean_params, s.models[j].actor.mean_params);
                EXPECT_NE(s.models[i].critic.params, s.models[j].critic.params);
            }
    });
}

TEST(Train, ActorOnlyChangesThroughItsOwnUpdates) {
    // Swapping critics at iteration k leaves every actor exactly where its own PPO step put it.
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 2, Strategy::SwapCritics);
    auto cfg = small_train(Strategy::SwapCritics, 1, 1);
    ModelSet copy = set;
    train(env, set, cfg);
    auto no_swap = cfg;
    no_swap.schedule.strategy = Strategy::NoExchange;
    train(env, copy, no_swap);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(set.models[i].actor, copy.models[i].actor);
    EXPECT_EQ(set.models[0].critic, copy.models[1].critic);
    EXPECT_EQ(set.models[1].critic, copy.models[0].critic);
}

TEST(Train, CommonPoolIsSharedAndGrowsMonotonically) {
    const Env env = make_env("pointmaze-open");
    ModelSet set = make_set(env, 2, Strategy::CommonPoolNoSwap);
    std::size_t last = 0;
    train(env, set, small_train(Strategy::CommonPoolNoSwap, 20, 5), [&](const IterationReport& rep, const ModelSet& s) {
        EXPECT_EQ(rep.models[0].pool_size, rep.models[1].pool_size);
        EXPECT_GE(s.pools.front().starts_old.size(), last);
        last = s.pools.front().starts_old.size();
    });
}

TEST(Train, LayoutMismatchAndBadCountsRejected) {
    const Env env = make_env("pointmaze-open");
    ModelSet independent = make_set(env, 2, Strategy::NoExchange);
    EXPECT_THROW(train(env, independent, small_train(Strategy::CommonPoolNoSwap, 20, 1)), ConfigError);
    ModelSet three = make_set(env, 3, Strategy::SwapCritics);
    EXPECT_THROW(train(env, three, small_train(Strategy::SwapCritics, 20, 1)), ConfigError);
}

TEST(Train, ModelFailureNamesTheModel) {
    try {
        detail::for_each_model(4, 2, [](std::size_t i) {
            if (i == 2) throw OptimizerError("boom");
        });
        FAIL() << "expected ModelError";
    } catch (const ModelError& e) {
        EXPECT_EQ(e.model_index(), 2u);
        EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
    }
}
