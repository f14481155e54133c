#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "prcg/errors.hpp"
#include "prcg/random.hpp"

namespace prcg {

enum class Activation { Tanh, Linear };

/// Architecture of a fully connected network: input -> hidden (tanh) ... -> output (linear).
struct MlpSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_dims{256, 256};
    std::size_t output_dim = 1;
    Activation hidden_activation = Activation::Tanh;
    Activation output_activation = Activation::Linear;

    /// input_dim, hidden_dims..., output_dim
    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims;
        dims.reserve(hidden_dims.size() + 2);
        dims.push_back(input_dim);
        dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
        dims.push_back(output_dim);
        return dims;
    }

    std::size_t param_count() const {
        const auto dims = layer_dims();
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += (dims[l] + 1) * dims[l + 1];
        return n;
    }

    void validate() const {
        if (hidden_dims.empty()) throw ConfigError("MlpSpec: hidden_dims must be nonempty");
        if (input_dim == 0 || output_dim == 0) throw ConfigError("MlpSpec: dimensions must be >= 1");
        for (auto d : hidden_dims)
            if (d == 0) throw ConfigError("MlpSpec: hidden dimensions must be >= 1");
        if (hidden_activation != Activation::Tanh || output_activation != Activation::Linear)
            throw ConfigError("MlpSpec: only tanh hidden / linear output networks are supported");
    }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Flat parameter storage. Layer l occupies W_l (fan_out x fan_in, column-major) followed by b_l.
struct ParamVector {
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
    explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const noexcept { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    double* data() noexcept { return values.data(); }
    const double* data() const noexcept { return values.data(); }
    std::span<double> span() noexcept { return values; }
    std::span<const double> span() const noexcept { return values; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

namespace detail {

inline void check_params(const MlpSpec& spec, const ParamVector& params) {
    spec.validate();
    if (params.size() != spec.param_count())
        throw ConfigError("parameter vector length " + std::to_string(params.size()) + " does not match network size " +
                          std::to_string(spec.param_count()));
}

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

}  // namespace detail

/// Activations of every layer for a batch; activations[0] is the input, one column per sample.
struct MlpTape {
    std::vector<Eigen::MatrixXd> activations;

    const Eigen::MatrixXd& output() const { return activations.back(); }
};

inline MlpTape mlp_forward_tape(const MlpSpec& spec, const ParamVector& params, const Eigen::MatrixXd& inputs) {
    detail::check_params(spec, params);
    if (static_cast<std::size_t>(inputs.rows()) != spec.input_dim)
        throw ConfigError("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                          std::to_string(spec.input_dim));
    const auto dims = spec.layer_dims();
    const std::size_t layers = dims.size() - 1;
    MlpTape tape;
    tape.activations.reserve(dims.size());
    tape.activations.push_back(inputs);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto fan_in = static_cast<Eigen::Index>(dims[l]);
        const auto fan_out = static_cast<Eigen::Index>(dims[l + 1]);
        detail::ConstMatMap w(params.data() + offset, fan_out, fan_in);
        offset += static_cast<std::size_t>(fan_in * fan_out);
        detail::ConstVecMap b(params.data() + offset, fan_out);
        offset += static_cast<std::size_t>(fan_out);
        Eigen::MatrixXd z = w * tape.activations[l];
        z.colwise() += b;
        if (l + 1 < layers) z = z.array().tanh().matrix();
        tape.activations.push_back(std::move(z));
    }
    return tape;
}

inline Eigen::MatrixXd mlp_forward_batch(const MlpSpec& spec, const ParamVector& params, const Eigen::MatrixXd& inputs) {
    return std::move(mlp_forward_tape(spec, params, inputs).activations.back());
}

/// Gradient of sum_columns(output . output_gradients) with respect to the parameters.
inline ParamVector mlp_backward_batch(const MlpSpec& spec, const ParamVector& params, const MlpTape& tape,
                                      const Eigen::MatrixXd& output_gradients) {
    detail::check_params(spec, params);
    const auto dims = spec.layer_dims();
    const std::size_t layers = dims.size() - 1;
    if (tape.activations.size() != dims.size())
        throw ConfigError("tape does not belong to this network");
    if (static_cast<std::size_t>(output_gradients.rows()) != spec.output_dim ||
        output_gradients.cols() != tape.output().cols())
        throw ConfigError("output gradient shape does not match network output");

    std::vector<std::size_t> offsets(layers);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        offsets[l] = offset;
        offset += (dims[l] + 1) * dims[l + 1];
    }

    ParamVector grads(params.size());
    Eigen::MatrixXd delta = output_gradients;
    for (std::size_t l = layers; l-- > 0;) {
        const auto fan_in = static_cast<Eigen::Index>(dims[l]);
        const auto fan_out = static_cast<Eigen::Index>(dims[l + 1]);
        Eigen::Map<Eigen::MatrixXd> gw(grads.data() + offsets[l], fan_out, fan_in);
        Eigen::Map<Eigen::VectorXd> gb(grads.data() + offsets[l] + fan_in * fan_out, fan_out);
        gw.noalias() = delta * tape.activations[l].transpose();
        gb = delta.rowwise().sum();
        if (l > 0) {
            detail::ConstMatMap w(params.data() + offsets[l], fan_out, fan_in);
            Eigen::MatrixXd back = w.transpose() * delta;
            delta = back.array() * (1.0 - tape.activations[l].array().square());
        }
    }
    return grads;
}

inline std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> input) {
    if (input.size() != spec.input_dim)
        throw ConfigError("network input length " + std::to_string(input.size()) + ", expected " +
                          std::to_string(spec.input_dim));
    const Eigen::MatrixXd x = detail::ConstMatMap(input.data(), static_cast<Eigen::Index>(input.size()), 1);
    const Eigen::MatrixXd y = mlp_forward_batch(spec, params, x);
    return {y.data(), y.data() + y.size()};
}

/// Gradient of output . output_gradient with respect to the parameters, for one input.
inline ParamVector mlp_backward(const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
                                std::span<const double> output_gradient) {
    if (input.size() != spec.input_dim || output_gradient.size() != spec.output_dim)
        throw ConfigError("mlp_backward: input or output gradient has the wrong length");
    const Eigen::MatrixXd x = detail::ConstMatMap(input.data(), static_cast<Eigen::Index>(input.size()), 1);
    const Eigen::MatrixXd g =
        detail::ConstMatMap(output_gradient.data(), static_cast<Eigen::Index>(output_gradient.size()), 1);
    return mlp_backward_batch(spec, params, mlp_forward_tape(spec, params, x), g);
}

/// Weights uniform in +-1/sqrt(fan_in), biases zero. The output layer is scaled by output_gain.
inline ParamVector init_mlp(const MlpSpec& spec, RandomStream& rng, double output_gain = 1.0) {
    spec.validate();
    const auto dims = spec.layer_dims();
    ParamVector params(spec.param_count());
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        const double gain = (l + 2 == dims.size()) ? output_gain : 1.0;
        const std::size_t n_weights = dims[l] * dims[l + 1];
        for (std::size_t i = 0; i < n_weights; ++i) params[offset + i] = gain * rng.uniform(-bound, bound);
        offset += n_weights + dims[l + 1];
    }
    return params;
}

// ---------------------------------------------------------------------------
// Gaussian policy

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ln(2*pi)/2

/// Fixed affine map applied to states before they enter a network: (x - offset) * scale. Empty means identity.
struct InputScaling {
    std::vector<double> offset;
    std::vector<double> scale;

    bool identity() const noexcept { return offset.empty(); }

    /// Maps the box [lo, hi] onto [-1, 1].
    static InputScaling from_bounds(std::span<const double> lo, std::span<const double> hi) {
        InputScaling out;
        for (std::size_t i = 0; i < lo.size(); ++i) {
            if (!(hi[i] > lo[i])) throw ConfigError("input bounds must satisfy lo < hi");
            out.offset.push_back(0.5 * (lo[i] + hi[i]));
            out.scale.push_back(2.0 / (hi[i] - lo[i]));
        }
        return out;
    }

    void validate(std::size_t dim) const {
        if (identity() && scale.empty()) return;
        if (offset.size() != dim || scale.size() != dim) throw ConfigError("input scaling has the wrong length");
    }

    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> out(x.begin(), x.end());
        if (identity()) return out;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - offset[i]) * scale[i];
        return out;
    }

    /// Column-wise on a dim x N matrix.
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        if (identity()) return x;
        const Eigen::Map<const Eigen::VectorXd> o(offset.data(), static_cast<Eigen::Index>(offset.size()));
        const Eigen::Map<const Eigen::VectorXd> sc(scale.data(), static_cast<Eigen::Index>(scale.size()));
        return sc.asDiagonal() * (x.colwise() - o);
    }

    friend bool operator==(const InputScaling&, const InputScaling&) = default;
};

/**
 * Diagonal Gaussian with a state-dependent mean network and a state-independent log_std.
 *
 * The network works in normalized action units: the mean is action_scale * net(state)
 * and the standard deviation action_scale * exp(log_std). An empty action_scale means 1.
 * log_std is clamped to [-5, 2].
 */
struct GaussianPolicy {
    MlpSpec mean_spec;
    ParamVector mean_params;
    std::vector<double> log_std;
    std::vector<double> action_scale;
    InputScaling input_scaling;

    std::size_t state_dim() const noexcept { return mean_spec.input_dim; }
    std::size_t action_dim() const noexcept { return mean_spec.output_dim; }

    double scale(std::size_t i) const { return action_scale.empty() ? 1.0 : action_scale[i]; }

    /// log of the standard deviation in environment units.
    std::vector<double> effective_log_std() const {
        std::vector<double> out(log_std);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::log(scale(i));
        return out;
    }

    void clamp_log_std() {
        for (auto& v : log_std) v = std::clamp(v, kLogStdMin, kLogStdMax);
    }

    void validate() const {
        detail::check_params(mean_spec, mean_params);
        if (log_std.size() != action_dim()) throw ConfigError("policy log_std has the wrong length");
        if (!action_scale.empty() && action_scale.size() != action_dim())
            throw ConfigError("policy action_scale has the wrong length");
        for (double s : action_scale)
            if (!(s > 0.0)) throw ConfigError("policy action_scale entries must be positive");
        input_scaling.validate(state_dim());
    }

    static GaussianPolicy create(const MlpSpec& spec, RandomStream& rng, double initial_log_std = 0.0,
                                 double output_gain = 0.01, std::vector<double> action_scale = {},
                                 InputScaling input_scaling = {}) {
        GaussianPolicy p{spec, init_mlp(spec, rng, output_gain), std::vector<double>(spec.output_dim, initial_log_std),
                         std::move(action_scale), std::move(input_scaling)};
        p.clamp_log_std();
        p.validate();
        return p;
    }

    friend bool operator==(const GaussianPolicy&, const GaussianPolicy&) = default;
};

inline double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                               std::span<const double> action) {
    if (mean.size() != action.size() || log_std.size() != action.size())
        throw ConfigError("gaussian_logprob: dimension mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < action.size(); ++i) {
        const double z = (action[i] - mean[i]) * std::exp(-log_std[i]);
        lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
    }
    return lp;
}

/// Mean action in environment units.
inline std::vector<double> policy_mean(const GaussianPolicy& policy, std::span<const double> state) {
    auto mean = mlp_forward(policy.mean_spec, policy.mean_params, policy.input_scaling.apply(state));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] *= policy.scale(i);
    return mean;
}

struct PolicySample {
    std::vector<double> action;
    double log_prob = 0.0;
};

inline PolicySample policy_sample(const GaussianPolicy& policy, std::span<const double> state, RandomStream& rng) {
    if (policy.log_std.size() != policy.action_dim()) throw ConfigError("policy log_std has the wrong length");
    PolicySample out;
    const auto mean = policy_mean(policy, state);
    const auto log_std = policy.effective_log_std();
    out.action.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) out.action[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
    out.log_prob = gaussian_logprob(mean, log_std, out.action);
    return out;
}

inline double policy_logprob(const GaussianPolicy& policy, std::span<const double> state,
                             std::span<const double> action) {
    if (action.size() != policy.action_dim()) throw ConfigError("policy_logprob: action has the wrong length");
    return gaussian_logprob(policy_mean(policy, state), policy.effective_log_std(), action);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_size(std::size_t n, double lr = 3e-4) {
        AdamState s;
        s.first_moment.assign(n, 0.0);
        s.second_moment.assign(n, 0.0);
        s.lr = lr;
        return s;
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// In-place bias-corrected Adam update. Leaves everything untouched if a gradient is non-finite.
inline void adam_apply(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw ConfigError("adam: parameter, gradient and moment lengths differ");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw OptimizerError("adam: non-finite gradient at index " + std::to_string(i));
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
        params[i] -= state.lr * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
    }
}

inline std::pair<ParamVector, AdamState> adam_step(AdamState state, ParamVector params, const ParamVector& grads) {
    adam_apply(state, params.span(), grads.span());
    return {std::move(params), std::move(state)};
}

// ---------------------------------------------------------------------------
// Checkpoint records
//
// Network record:  "PRCGNET1" | u64 input_dim | u64 n_hidden | u64 hidden... | u64 output_dim |
//                  u64 n_params | f64 params...
// Vector record:   "PRCGVEC1" | u64 n | f64 values...
// All integers and IEEE-754 doubles are little-endian.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(bytes, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ConfigError("checkpoint: unexpected end of data");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

inline void write_f64s(std::ostream& os, std::span<const double> values) {
    for (double v : values) write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::vector<double> read_f64s(std::istream& is, std::uint64_t n) {
    if (n > (1ULL << 32)) throw ConfigError("checkpoint: implausible record length");
    std::vector<double> out(n);
    for (auto& v : out) v = std::bit_cast<double>(read_u64(is));
    return out;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
        throw ConfigError("checkpoint: bad magic, expected " + std::string(magic));
}

}  // namespace detail

inline constexpr std::string_view kNetworkMagic = "PRCGNET1";
inline constexpr std::string_view kVectorMagic = "PRCGVEC1";

inline void write_network(std::ostream& os, const MlpSpec& spec, const ParamVector& params) {
    detail::check_params(spec, params);
    os.write(kNetworkMagic.data(), static_cast<std::streamsize>(kNetworkMagic.size()));
    detail::write_u64(os, spec.input_dim);
    detail::write_u64(os, spec.hidden_dims.size());
    for (auto d : spec.hidden_dims) detail::write_u64(os, d);
    detail::write_u64(os, spec.output_dim);
    detail::write_u64(os, params.size());
    detail::write_f64s(os, params.span());
}

inline std::pair<MlpSpec, ParamVector> read_network(std::istream& is) {
    detail::expect_magic(is, kNetworkMagic);
    MlpSpec spec;
    spec.input_dim = detail::read_u64(is);
    const auto n_hidden = detail::read_u64(is);
    if (n_hidden > 1024) throw ConfigError("checkpoint: implausible layer count");
    spec.hidden_dims.resize(n_hidden);
    for (auto& d : spec.hidden_dims) d = detail::read_u64(is);
    spec.output_dim = detail::read_u64(is);
    spec.validate();
    const auto n = detail::read_u64(is);
    if (n != spec.param_count()) throw ConfigError("checkpoint: parameter count does not match architecture");
    return {spec, ParamVector(detail::read_f64s(is, n))};
}

inline void write_vector(std::ostream& os, std::span<const double> values) {
    os.write(kVectorMagic.data(), static_cast<std::streamsize>(kVectorMagic.size()));
    detail::write_u64(os, values.size());
    detail::write_f64s(os, values);
}

inline std::vector<double> read_vector(std::istream& is) {
    detail::expect_magic(is, kVectorMagic);
    return detail::read_f64s(is, detail::read_u64(is));
}

}  // namespace prcg
