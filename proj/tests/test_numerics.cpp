#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "prcg/numerics.hpp"

using namespace prcg;

namespace {

// Plain triple-loop forward pass written against the documented flat layout.
std::vector<double> naive_forward(const MlpSpec& spec, const std::vector<double>& p, std::vector<double> x) {
    const auto dims = spec.layer_dims();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t in = dims[l], out = dims[l + 1];
        std::vector<double> y(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double z = p[off + in * out + o];
            for (std::size_t i = 0; i < in; ++i) z += p[off + i * out + o] * x[i];  // column-major W
            y[o] = (l + 2 < dims.size()) ? std::tanh(z) : z;
        }
        off += (in + 1) * out;
        x = std::move(y);
    }
    return x;
}

MlpSpec random_spec(RandomStream& rng) {
    MlpSpec s;
    s.input_dim = 1 + rng.index(8);
    s.output_dim = 1 + rng.index(8);
    s.hidden_dims.resize(1 + rng.index(2));
    for (auto& h : s.hidden_dims) h = 1 + rng.index(8);
    return s;
}

std::vector<double> random_vec(RandomStream& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST(Mlp, ParamCountMatchesLayerFormula) {
    MlpSpec s{25, {256, 256}, 7};
    EXPECT_EQ(s.param_count(), (25 + 1) * 256 + (256 + 1) * 256 + (256 + 1) * 7);
}

TEST(Mlp, ZeroParamsGiveZeroOutput) {
    MlpSpec s{3, {4, 5}, 2};
    ParamVector p(s.param_count());
    const auto y = mlp_forward(s, p, std::vector<double>{0.3, -1.0, 2.0});
    ASSERT_EQ(y.size(), 2u);
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
}

TEST(Mlp, OneOneOneNetHandValue) {
    MlpSpec s{1, {1}, 1};
    ParamVector p(std::vector<double>{1.0, 0.0, 1.0, 0.0});
    const auto y = mlp_forward(s, p, std::vector<double>{0.5});
    EXPECT_NEAR(y[0], 0.46212, 5e-6);
    const auto g = mlp_backward(s, p, std::vector<double>{0.5}, std::vector<double>{1.0});
    EXPECT_NEAR(g[2], 0.46212, 5e-6);  // d/dw2
    EXPECT_NEAR(g[3], 1.0, 1e-15);     // d/db2
}

TEST(Mlp, PaperShapeOutputLength) {
    MlpSpec s{25, {256, 256}, 7};
    RandomStream rng(3);
    const auto p = init_mlp(s, rng);
    EXPECT_EQ(mlp_forward(s, p, random_vec(rng, 25)).size(), 7u);
}

TEST(Mlp, DimensionMismatchThrows) {
    MlpSpec s{2, {3}, 1};
    ParamVector p(s.param_count());
    EXPECT_THROW(mlp_forward(s, p, std::vector<double>{1.0}), ConfigError);
    EXPECT_THROW(mlp_forward(s, ParamVector(3), std::vector<double>{1.0, 2.0}), ConfigError);
    EXPECT_THROW(mlp_backward(s, p, std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}), ConfigError);
}

TEST(Mlp, EmptyHiddenRejected) {
    MlpSpec s{2, {}, 1};
    EXPECT_THROW(s.validate(), ConfigError);
    MlpSpec z{2, {0}, 1};
    EXPECT_THROW(z.validate(), ConfigError);
}

TEST(Mlp, MatchesNaiveLayout) {
    RandomStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = random_spec(rng);
        const auto p = random_vec(rng, s.param_count());
        const auto x = random_vec(rng, s.input_dim);
        const auto y = mlp_forward(s, ParamVector(p), x);
        const auto ref = naive_forward(s, p, x);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Mlp, ZeroOutputGradientGivesZeroGradient) {
    MlpSpec s{3, {4}, 2};
    RandomStream rng(5);
    const auto p = init_mlp(s, rng);
    const auto g = mlp_backward(s, p, random_vec(rng, 3), std::vector<double>(2, 0.0));
    for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    RandomStream rng(2024);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_spec(rng);
        auto p = random_vec(rng, s.param_count(), 0.7);
        const auto x = random_vec(rng, s.input_dim);
        const auto gout = random_vec(rng, s.output_dim);
        const auto g = mlp_backward(s, ParamVector(p), x, gout);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double saved = p[k];
            p[k] = saved + h;
            const auto up = naive_forward(s, p, x);
            p[k] = saved - h;
            const auto dn = naive_forward(s, p, x);
            p[k] = saved;
            double fd = 0.0;
            for (std::size_t o = 0; o < up.size(); ++o) fd += gout[o] * (up[o] - dn[o]) / (2 * h);
            const double err = std::abs(g[k] - fd);
            if (std::abs(fd) < 1e-2)
                EXPECT_LT(err, 1e-6) << "trial " << trial << " entry " << k;
            else
                EXPECT_LT(err / std::abs(fd), 1e-4) << "trial " << trial << " entry " << k;
        }
    }
}

TEST(Mlp, BatchBackwardIsSumOfSingles) {
    MlpSpec s{3, {5, 4}, 2};
    RandomStream rng(8);
    const auto p = init_mlp(s, rng);
    Eigen::MatrixXd x(3, 4), g(2, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const auto batch = mlp_backward_batch(s, p, mlp_forward_tape(s, p, x), g);
    std::vector<double> sum(p.size(), 0.0);
    for (int c = 0; c < 4; ++c) {
        std::vector<double> xc(x.col(c).data(), x.col(c).data() + 3), gc(g.col(c).data(), g.col(c).data() + 2);
        const auto single = mlp_backward(s, p, xc, gc);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += single[k];
    }
    for (std::size_t k = 0; k < sum.size(); ++k) EXPECT_NEAR(batch[k], sum[k], 1e-12);
}

TEST(Mlp, HiddenActivationsStayInOpenInterval) {
    MlpSpec s{2, {16}, 1};
    RandomStream rng(1);
    const auto p = ParamVector(random_vec(rng, s.param_count(), 1.0));
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 100) * 2.0;
    EXPECT_LT(mlp_forward_tape(s, p, x).activations[1].cwiseAbs().maxCoeff(), 1.0);
    // Beyond |z| ~ 19 a double tanh rounds to exactly +-1; the bound is then closed.
    EXPECT_LE(mlp_forward_tape(s, p, x * 1e3).activations[1].cwiseAbs().maxCoeff(), 1.0);
}

TEST(Mlp, InitBoundsAndZeroBiases) {
    MlpSpec s{4, {9}, 3};
    RandomStream rng(4);
    const auto p = init_mlp(s, rng, 0.5);
    for (std::size_t i = 0; i < 36; ++i) EXPECT_LE(std::abs(p[i]), 0.5);
    for (std::size_t i = 36; i < 45; ++i) EXPECT_EQ(p[i], 0.0);
    for (std::size_t i = 45; i < 45 + 27; ++i) EXPECT_LE(std::abs(p[i]), 0.5 / 3.0);
}

// ---------------------------------------------------------------------------

namespace {

GaussianPolicy constant_policy(double log_std, std::size_t dim = 1) {
    MlpSpec s{1, {2}, dim};
    return GaussianPolicy{s, ParamVector(s.param_count()), std::vector<double>(dim, log_std), {}, {}};
}

}  // namespace

TEST(Policy, ClosedFormLogProbs) {
    const auto pol = constant_policy(0.0);
    const std::vector<double> s{0.0};
    EXPECT_NEAR(policy_logprob(pol, s, std::vector<double>{0.0}), -0.91894, 5e-6);
    EXPECT_NEAR(policy_logprob(pol, s, std::vector<double>{1.0}), -1.41894, 5e-6);
}

TEST(Policy, PeakDensity) {
    auto pol = constant_policy(0.0, 3);
    pol.log_std = {-1.0, 0.5, 0.2};
    const double expected = -(-1.0 + 0.5 + 0.2) - 1.5 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(policy_logprob(pol, std::vector<double>{0.4}, std::vector<double>{0, 0, 0}), expected, 1e-12);
}

TEST(Policy, QuadratureIntegratesToOne) {
    auto pol = constant_policy(-0.7);
    const double sd = std::exp(-0.7);
    const int n = 20001;
    const double lo = -10 * sd, hi = 10 * sd, dx = (hi - lo) / (n - 1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double a = lo + i * dx;
        const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        total += w * std::exp(policy_logprob(pol, std::vector<double>{0.0}, std::vector<double>{a})) * dx;
    }
    EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(Policy, SampleLogProbMatchesLogprobAndOracle) {
    MlpSpec s{2, {5}, 2};
    RandomStream rng(17);
    auto pol = GaussianPolicy::create(s, rng, -0.3, 1.0);
    pol.log_std = {-0.3, 0.4};
    const std::vector<double> state{0.2, -0.6};
    const auto mean = policy_mean(pol, state);
    double ratio_sum = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto smp = policy_sample(pol, state, rng);
        EXPECT_NEAR(smp.log_prob, policy_logprob(pol, state, smp.action), 1e-12);
        double oracle = 1.0;
        for (int d = 0; d < 2; ++d) {
            const double sd = std::exp(pol.log_std[d]);
            const double z = (smp.action[d] - mean[d]) / sd;
            oracle *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2 * std::numbers::pi));
        }
        ratio_sum += std::exp(smp.log_prob) / oracle;
    }
    EXPECT_NEAR(ratio_sum / 1000.0, 1.0, 1e-6);
}

TEST(Policy, FloorStdIsNearDeterministic) {
    auto pol = constant_policy(-100.0, 2);
    pol.clamp_log_std();
    EXPECT_EQ(pol.log_std[0], kLogStdMin);
    RandomStream rng(9);
    int inside = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto a = policy_sample(pol, std::vector<double>{0.1}, rng).action;
        inside += (std::abs(a[0]) <= 5 * std::exp(-5.0) && std::abs(a[1]) <= 5 * std::exp(-5.0)) ? 1 : 0;
    }
    EXPECT_GT(inside / 10000.0, 0.9999 - 1e-12);
}

TEST(Policy, ActionScaleIsAGaussianInEnvUnits) {
    auto pol = constant_policy(0.0, 1);
    pol.action_scale = {0.05};
    // mean 0, std 0.05
    const double a = 0.03;
    const double oracle = -0.5 * (a / 0.05) * (a / 0.05) - std::log(0.05) - 0.5 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(policy_logprob(pol, std::vector<double>{0.0}, std::vector<double>{a}), oracle, 1e-12);
}

TEST(Policy, InputScalingMapsBoundsToUnitBox) {
    const std::vector<double> lo{0.0, -2.0}, hi{1.0, 2.0};
    const auto sc = InputScaling::from_bounds(lo, hi);
    const auto a = sc.apply(std::vector<double>{0.0, 2.0});
    EXPECT_DOUBLE_EQ(a[0], -1.0);
    EXPECT_DOUBLE_EQ(a[1], 1.0);
    Eigen::MatrixXd m(2, 1);
    m << 0.5, 0.0;
    EXPECT_NEAR(sc.apply(m).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Policy, SamplingIsReproducible) {
    MlpSpec s{2, {4}, 2};
    RandomStream r1(5), r2(5);
    const auto p1 = GaussianPolicy::create(s, r1);
    const auto p2 = GaussianPolicy::create(s, r2);
    EXPECT_EQ(p1, p2);
    const auto a = policy_sample(p1, std::vector<double>{0.3, 0.1}, r1);
    const auto b = policy_sample(p2, std::vector<double>{0.3, 0.1}, r2);
    EXPECT_EQ(a.action, b.action);
    EXPECT_EQ(a.log_prob, b.log_prob);
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParams) {
    auto st = AdamState::for_size(3);
    ParamVector p(std::vector<double>{1.0, -2.0, 0.5});
    auto [q, st2] = adam_step(st, p, ParamVector(3));
    EXPECT_EQ(q, p);
    EXPECT_EQ(st2.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLr) {
    auto st = AdamState::for_size(1);
    auto [q, st2] = adam_step(st, ParamVector(std::vector<double>{0.0}), ParamVector(std::vector<double>{1.0}));
    EXPECT_NEAR(q[0], -3e-4, 1e-9);
    EXPECT_EQ(st2.step_count, 1u);
}

TEST(Adam, ConvergesOnQuadratic) {
    auto st = AdamState::for_size(1, 0.1);
    ParamVector x(std::vector<double>{1.0});
    for (int i = 0; i < 1000; ++i) {
        ParamVector g(std::vector<double>{2.0 * x[0]});
        std::tie(x, st) = adam_step(st, x, g);
    }
    EXPECT_LT(std::abs(x[0]), 1e-2);
    EXPECT_EQ(st.step_count, 1000u);
}

TEST(Adam, NonFiniteGradientNamesIndexAndKeepsState) {
    auto st = AdamState::for_size(3);
    std::vector<double> p{1.0, 2.0, 3.0};
    const auto before = p;
    std::vector<double> g{0.1, std::nan(""), 0.2};
    try {
        adam_apply(st, p, g);
        FAIL() << "expected OptimizerError";
    } catch (const OptimizerError& e) {
        EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
    }
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.step_count, 0u);
}

TEST(Adam, LengthMismatchThrows) {
    auto st = AdamState::for_size(2);
    std::vector<double> p{1.0, 2.0}, g{1.0};
    EXPECT_THROW(adam_apply(st, p, g), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, NetworkRoundTripIsBitExact) {
    MlpSpec s{3, {7, 5}, 2};
    RandomStream rng(99);
    auto p = init_mlp(s, rng);
    p[0] = -0.0;
    p[1] = 1e-308;
    std::stringstream buf;
    write_network(buf, s, p);
    write_vector(buf, std::vector<double>{-1.5, 2.25});
    const auto [s2, p2] = read_network(buf);
    EXPECT_EQ(s2, s);
    ASSERT_EQ(p2.size(), p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(p2[i]), std::bit_cast<std::uint64_t>(p[i]));
    EXPECT_EQ(read_vector(buf), (std::vector<double>{-1.5, 2.25}));
}

TEST(Checkpoint, CorruptDataRejected) {
    std::stringstream bad("NOTANET1....");
    EXPECT_THROW(read_network(bad), ConfigError);
    MlpSpec s{1, {1}, 1};
    std::stringstream buf;
    write_network(buf, s, ParamVector(s.param_count()));
    std::string bytes = buf.str();
    bytes.resize(bytes.size() - 3);
    std::stringstream truncated(bytes);
    EXPECT_THROW(read_network(truncated), ConfigError);
}

TEST(Random, DerivedStreamsDifferAndRepeat) {
    auto a = RandomStream::derive(1, 0), b = RandomStream::derive(1, 1), c = RandomStream::derive(1, 0);
    EXPECT_EQ(a, c);
    EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Random, IndexIsUniform) {
    RandomStream rng(12);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.index(5)];
    for (int c : counts) EXPECT_NEAR(c / 50000.0, 0.2, 0.01);
}
