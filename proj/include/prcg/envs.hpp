#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prcg/errors.hpp"
#include "prcg/random.hpp"

namespace prcg {

/// Point in the environment's state space (environment units).
using State = std::vector<double>;

/// Open axis-aligned box; its boundary counts as free space.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    bool contains_open(std::span<const double> p) const {
        for (std::size_t i = 0; i < p.size(); ++i)
            if (!(p[i] > lo[i] && p[i] < hi[i])) return false;
        return true;
    }
};

struct EnvSpec {
    std::size_t state_dim = 2;
    std::size_t action_dim = 2;
    std::vector<double> action_low{-0.05, -0.05};
    std::vector<double> action_high{0.05, 0.05};
    int t_max = 10;
    double gamma = 0.99;
    std::vector<State> goal_states;
    double goal_radius = 0.05;
};

/// Closed domain box minus open obstacle boxes.
struct Geometry {
    std::vector<double> domain_lo{0.0, 0.0};
    std::vector<double> domain_hi{1.0, 1.0};
    std::vector<Box> obstacles;
};

enum class DoneReason { NotDone, GoalReached, HorizonExceeded, AttemptTriggered };

struct StepResult {
    State next_state;
    double reward = 0.0;
    bool done = false;
    DoneReason done_reason = DoneReason::NotDone;
};

enum class Band { Near, Mid, Far };
enum class PoseMode { Fixed, Variable };

struct EvalBand {
    Band band = Band::Near;
    PoseMode pose_mode = PoseMode::Fixed;
    friend bool operator==(const EvalBand&, const EvalBand&) = default;
};

inline constexpr std::array<EvalBand, 6> kEvalGrid{{
    {Band::Near, PoseMode::Fixed},
    {Band::Mid, PoseMode::Fixed},
    {Band::Far, PoseMode::Fixed},
    {Band::Near, PoseMode::Variable},
    {Band::Mid, PoseMode::Variable},
    {Band::Far, PoseMode::Variable},
}};

inline std::string_view to_string(Band b) {
    switch (b) {
        case Band::Near: return "near";
        case Band::Mid: return "mid";
        case Band::Far: return "far";
    }
    return "?";
}

inline std::string_view to_string(PoseMode m) { return m == PoseMode::Fixed ? "fixed" : "variable"; }

inline std::string_view to_string(DoneReason r) {
    switch (r) {
        case DoneReason::NotDone: return "not_done";
        case DoneReason::GoalReached: return "goal_reached";
        case DoneReason::HorizonExceeded: return "horizon_exceeded";
        case DoneReason::AttemptTriggered: return "attempt_triggered";
    }
    return "?";
}

/// Distance-to-goal intervals for the evaluation bands. Near is [0, near_max], the others half-open (lo, hi].
struct BandConfig {
    double near_max = 0.15;
    double mid_max = 0.35;
    double far_max = 0.7;
    /// One canonical start per band for Fixed mode, indexed by Band.
    std::array<State, 3> canonical;

    bool contains(Band b, double distance) const {
        switch (b) {
            case Band::Near: return distance >= 0.0 && distance <= near_max;
            case Band::Mid: return distance > near_max && distance <= mid_max;
            case Band::Far: return distance > mid_max && distance <= far_max;
        }
        return false;
    }
};

/**
 * Sparse-reward point environment that can be reset to any feasible state.
 *
 * Kinematics: next = current + clip(action). A move whose segment would leave
 * the domain or enter an obstacle stops at the first boundary it meets, so
 * every visited state is feasible. Reward is 1 exactly when the post-move
 * state lies within goal_radius of the nearest goal, which also ends the
 * episode; otherwise the episode ends after t_max steps.
 */
class Env {
public:
    Env(std::string name, EnvSpec spec, Geometry geometry, BandConfig bands)
        : name_(std::move(name)), spec_(std::move(spec)), geometry_(std::move(geometry)), bands_(std::move(bands)) {
        validate();
        state_ = spec_.goal_states.front();
    }

    const std::string& name() const noexcept { return name_; }
    const EnvSpec& spec() const noexcept { return spec_; }
    const Geometry& geometry() const noexcept { return geometry_; }
    const BandConfig& bands() const noexcept { return bands_; }

    bool is_feasible(std::span<const double> s) const {
        if (s.size() != spec_.state_dim) return false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!std::isfinite(s[i])) return false;
            if (s[i] < geometry_.domain_lo[i] || s[i] > geometry_.domain_hi[i]) return false;
        }
        for (const auto& ob : geometry_.obstacles)
            if (ob.contains_open(s)) return false;
        return true;
    }

    double distance_to_goal(std::span<const double> s) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& g : spec_.goal_states) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < s.size(); ++i) d2 += (s[i] - g[i]) * (s[i] - g[i]);
            best = std::min(best, std::sqrt(d2));
        }
        return best;
    }

    bool in_goal(std::span<const double> s) const { return distance_to_goal(s) <= spec_.goal_radius; }

    void reset_to(std::span<const double> s) {
        if (!is_feasible(s)) throw ResetError("reset_to: state is not feasible in " + name_);
        state_.assign(s.begin(), s.end());
        steps_ = 0;
        done_ = false;
    }

    const State& observe() const noexcept { return state_; }
    int steps_taken() const noexcept { return steps_; }
    bool episode_done() const noexcept { return done_; }

    StepResult step(std::span<const double> action) {
        if (done_) throw UsageError("step called after the episode finished");
        if (action.size() != spec_.action_dim) throw ConfigError("step: action has the wrong length");
        state_ = transition(state_, action);
        ++steps_;
        StepResult r;
        r.next_state = state_;
        if (in_goal(state_)) {
            r.reward = 1.0;
            r.done = true;
            r.done_reason = DoneReason::GoalReached;
        } else if (steps_ >= spec_.t_max) {
            r.done = true;
            r.done_reason = DoneReason::HorizonExceeded;
        }
        done_ = r.done;
        return r;
    }

    /// Kinematics only: clip the action and move, stopping at the first boundary. No episode bookkeeping.
    State transition(std::span<const double> from, std::span<const double> action) const {
        if (action.size() != spec_.action_dim || from.size() != spec_.state_dim)
            throw ConfigError("transition: state or action has the wrong length");
        State delta(spec_.action_dim);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            const double a = std::isfinite(action[i]) ? action[i] : 0.0;
            delta[i] = std::clamp(a, spec_.action_low[i], spec_.action_high[i]);
        }
        return move(State(from.begin(), from.end()), delta);
    }

    /// Evaluation starts for one cell of the Near/Mid/Far x Fixed/Variable grid.
    std::vector<State> sample_eval_starts(EvalBand cell, std::size_t n, RandomStream& rng) const {
        std::vector<State> out;
        out.reserve(n);
        if (cell.pose_mode == PoseMode::Fixed) {
            out.assign(n, bands_.canonical[static_cast<std::size_t>(cell.band)]);
            return out;
        }
        constexpr std::size_t kMaxRejections = 100000;
        std::size_t rejections = 0;
        State s(spec_.state_dim);
        while (out.size() < n) {
            for (std::size_t i = 0; i < s.size(); ++i)
                s[i] = rng.uniform(geometry_.domain_lo[i], geometry_.domain_hi[i]);
            if (is_feasible(s) && bands_.contains(cell.band, distance_to_goal(s))) {
                out.push_back(s);
                rejections = 0;
            } else if (++rejections >= kMaxRejections) {
                throw ConfigError("sample_eval_starts: band " + std::string(to_string(cell.band)) + " of " + name_ +
                                  " looks empty");
            }
        }
        return out;
    }

    /// Uniform feasible state inside the domain.
    State sample_feasible(RandomStream& rng) const {
        State s(spec_.state_dim);
        for (std::size_t attempt = 0; attempt < 100000; ++attempt) {
            for (std::size_t i = 0; i < s.size(); ++i)
                s[i] = rng.uniform(geometry_.domain_lo[i], geometry_.domain_hi[i]);
            if (is_feasible(s)) return s;
        }
        throw ConfigError("sample_feasible: no feasible state found in " + name_);
    }

private:
    void validate() const {
        const auto d = spec_.state_dim;
        if (d == 0 || spec_.action_dim != d) throw ConfigError("point environments need action_dim == state_dim >= 1");
        if (spec_.action_low.size() != d || spec_.action_high.size() != d) throw ConfigError("action bounds length");
        for (std::size_t i = 0; i < d; ++i)
            if (!(spec_.action_low[i] < spec_.action_high[i])) throw ConfigError("action_low must be < action_high");
        if (spec_.t_max < 1) throw ConfigError("t_max must be >= 1");
        if (!(spec_.gamma > 0.0 && spec_.gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
        if (spec_.goal_states.empty()) throw ConfigError("at least one goal state is required");
        if (!(spec_.goal_radius > 0.0)) throw ConfigError("goal_radius must be positive");
        if (geometry_.domain_lo.size() != d || geometry_.domain_hi.size() != d) throw ConfigError("domain bounds length");
        for (const auto& ob : geometry_.obstacles)
            if (ob.lo.size() != d || ob.hi.size() != d) throw ConfigError("obstacle dimension mismatch");
        for (const auto& g : spec_.goal_states)
            if (!is_feasible(g)) throw ConfigError("goal state is not feasible");
        if (!(bands_.near_max > 0.0 && bands_.near_max < bands_.mid_max && bands_.mid_max < bands_.far_max))
            throw ConfigError("band radii must be increasing");
        for (std::size_t b = 0; b < 3; ++b) {
            const auto& c = bands_.canonical[b];
            if (!is_feasible(c) || !bands_.contains(static_cast<Band>(b), distance_to_goal(c)))
                throw ConfigError("canonical " + std::string(to_string(static_cast<Band>(b))) +
                                  " start is infeasible or outside its band");
        }
    }

    /// Largest fraction of the straight move that stays feasible, then the resulting point.
    State move(const State& from, const State& delta) const {
        double t_stop = 1.0;
        for (std::size_t i = 0; i < from.size(); ++i) {
            if (delta[i] > 0.0 && from[i] + delta[i] > geometry_.domain_hi[i])
                t_stop = std::min(t_stop, (geometry_.domain_hi[i] - from[i]) / delta[i]);
            if (delta[i] < 0.0 && from[i] + delta[i] < geometry_.domain_lo[i])
                t_stop = std::min(t_stop, (geometry_.domain_lo[i] - from[i]) / delta[i]);
        }
        for (const auto& ob : geometry_.obstacles) t_stop = std::min(t_stop, entry_time(ob, from, delta));
        t_stop = std::max(t_stop, 0.0);

        State to(from.size());
        auto place = [&](double t) {
            for (std::size_t i = 0; i < from.size(); ++i)
                to[i] = std::clamp(from[i] + t * delta[i], geometry_.domain_lo[i], geometry_.domain_hi[i]);
        };
        place(t_stop);
        if (is_feasible(to)) return to;
        // Rounding put the boundary point inside an obstacle; back off toward the start.
        double lo = 0.0, hi = t_stop;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            place(mid);
            (is_feasible(to) ? lo : hi) = mid;
        }
        place(lo);
        return to;
    }

    /// First t in [0, 1] at which from + t*delta enters the open box, or +inf.
    static double entry_time(const Box& box, const State& from, const State& delta) {
        double t_enter = -std::numeric_limits<double>::infinity();
        double t_exit = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < from.size(); ++i) {
            if (delta[i] == 0.0) {
                if (!(from[i] > box.lo[i] && from[i] < box.hi[i])) return std::numeric_limits<double>::infinity();
                continue;
            }
            double t0 = (box.lo[i] - from[i]) / delta[i];
            double t1 = (box.hi[i] - from[i]) / delta[i];
            if (t0 > t1) std::swap(t0, t1);
            t_enter = std::max(t_enter, t0);
            t_exit = std::min(t_exit, t1);
        }
        if (t_enter < t_exit && t_exit > 0.0 && t_enter < 1.0) return std::max(t_enter, 0.0);
        return std::numeric_limits<double>::infinity();
    }

    std::string name_;
    EnvSpec spec_;
    Geometry geometry_;
    BandConfig bands_;
    State state_;
    int steps_ = 0;
    bool done_ = true;
};

// ---------------------------------------------------------------------------
// Built-in environments

/// Unit square, goal at the centre, no obstacles.
inline Env make_point_maze_open() {
    EnvSpec spec;
    spec.goal_states = {{0.50, 0.50}};
    BandConfig bands;
    bands.canonical = {State{0.40, 0.50}, State{0.25, 0.50}, State{0.10, 0.50}};
    return Env("pointmaze-open", spec, Geometry{}, bands);
}

/// PointMaze-open plus a wall rising from the bottom edge left of the goal; the gap is above it.
inline Env make_point_maze() {
    EnvSpec spec;
    spec.goal_states = {{0.85, 0.15}};
    Geometry geo;
    geo.obstacles.push_back(Box{{0.60, 0.0}, {0.65, 0.70}});
    BandConfig bands;
    bands.canonical = {State{0.85, 0.25}, State{0.85, 0.40}, State{0.85, 0.65}};
    return Env("pointmaze", spec, geo, bands);
}

/// Unit square split by a vertical wall with a 0.06-wide corridor; the goal lies behind the corridor.
inline Env make_narrow_passage() {
    EnvSpec spec;
    spec.goal_states = {{0.65, 0.50}};
    Geometry geo;
    geo.obstacles.push_back(Box{{0.45, 0.0}, {0.55, 0.47}});
    geo.obstacles.push_back(Box{{0.45, 0.53}, {0.55, 1.0}});
    BandConfig bands;
    bands.canonical = {State{0.75, 0.50}, State{0.40, 0.50}, State{0.25, 0.50}};
    return Env("narrow-passage", spec, geo, bands);
}

inline std::vector<std::string> builtin_env_names() { return {"pointmaze", "pointmaze-open", "narrow-passage"}; }

inline Env make_env(std::string_view name) {
    if (name == "pointmaze") return make_point_maze();
    if (name == "pointmaze-open") return make_point_maze_open();
    if (name == "narrow-passage") return make_narrow_passage();
    throw ConfigError("unknown environment '" + std::string(name) + "'");
}

}  // namespace prcg
