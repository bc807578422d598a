#pragma once

// Desk-scale environments: a cooperative spread particle world and a
// scalar Ornstein-Uhlenbeck latent process observed through Gaussian noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acllft/approx.hpp"
#include "acllft/error.hpp"

namespace acllft::envs {

// ---------------------------------------------------------------------------
// Spread

struct SpreadConfig {
    int agents = 4;
    int landmarks = 3;
    int episode_length = 25;
    double agent_radius = 0.075;  // collision when distance < 2 * radius
    double dt = 0.1;
    double damping = 0.25;
    double acceleration = 5.0;
    double max_speed = 1.0;
    double collision_penalty = -1.0;
};

enum class SpreadAction : int { noop = 0, pos_x = 1, neg_x = 2, pos_y = 3, neg_y = 4 };
inline constexpr int kSpreadActionCount = 5;

struct SpreadState {
    Eigen::MatrixX2d agent_positions;
    Eigen::MatrixX2d agent_velocities;
    Eigen::MatrixX2d landmark_positions;
    int step = 0;
};

struct SpreadStepResult {
    std::vector<double> rewards;
    bool done = false;
};

class SpreadEnv {
public:
    explicit SpreadEnv(SpreadConfig config = {}) : config_(config) {
        detail::require(config_.agents >= 1 && config_.landmarks >= 1, "spread: need agents and landmarks");
        detail::require(config_.episode_length >= 1, "spread: episode length must be positive");
        detail::require(config_.dt > 0.0 && config_.max_speed > 0.0, "spread: dt and max speed must be positive");
    }

    [[nodiscard]] const SpreadConfig& config() const noexcept { return config_; }
    [[nodiscard]] const SpreadState& state() const noexcept { return state_; }
    [[nodiscard]] int agent_count() const noexcept { return config_.agents; }
    [[nodiscard]] int action_count() const noexcept { return kSpreadActionCount; }

    /// own velocity, own position, landmark offsets, other-agent offsets.
    [[nodiscard]] int observation_dim() const noexcept { return 4 + 2 * config_.landmarks + 2 * (config_.agents - 1); }

    /// Positions and velocities of every agent, agent-major.
    [[nodiscard]] int global_state_dim() const noexcept { return 4 * config_.agents; }

    void reset(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const auto uniform = [&rng] { return 2.0 * approx::uniform01(rng) - 1.0; };
        state_.agent_positions.resize(config_.agents, 2);
        state_.agent_velocities = Eigen::MatrixX2d::Zero(config_.agents, 2);
        state_.landmark_positions.resize(config_.landmarks, 2);
        for (int i = 0; i < config_.agents; ++i) {
            state_.agent_positions(i, 0) = uniform();
            state_.agent_positions(i, 1) = uniform();
        }
        for (int i = 0; i < config_.landmarks; ++i) {
            state_.landmark_positions(i, 0) = uniform();
            state_.landmark_positions(i, 1) = uniform();
        }
        state_.step = 0;
    }

    /// Replaces the state wholesale, used for scripted scenarios.
    void set_state(SpreadState state) {
        detail::require(state.agent_positions.rows() == config_.agents &&
                            state.agent_velocities.rows() == config_.agents &&
                            state.landmark_positions.rows() == config_.landmarks,
                        "spread: state shape does not match config");
        state_ = std::move(state);
    }

    [[nodiscard]] Eigen::VectorXd observation(int agent) const {
        Eigen::VectorXd obs(observation_dim());
        const Eigen::RowVector2d self = state_.agent_positions.row(agent);
        int k = 0;
        obs(k++) = state_.agent_velocities(agent, 0);
        obs(k++) = state_.agent_velocities(agent, 1);
        obs(k++) = self(0);
        obs(k++) = self(1);
        for (int l = 0; l < config_.landmarks; ++l) {
            obs(k++) = state_.landmark_positions(l, 0) - self(0);
            obs(k++) = state_.landmark_positions(l, 1) - self(1);
        }
        for (int other = 0; other < config_.agents; ++other) {
            if (other == agent) {
                continue;
            }
            obs(k++) = state_.agent_positions(other, 0) - self(0);
            obs(k++) = state_.agent_positions(other, 1) - self(1);
        }
        return obs;
    }

    [[nodiscard]] std::vector<Eigen::VectorXd> observations() const {
        std::vector<Eigen::VectorXd> out;
        for (int i = 0; i < config_.agents; ++i) {
            out.push_back(observation(i));
        }
        return out;
    }

    [[nodiscard]] Eigen::VectorXd global_state() const {
        Eigen::VectorXd s(global_state_dim());
        for (int i = 0; i < config_.agents; ++i) {
            s(4 * i + 0) = state_.agent_positions(i, 0);
            s(4 * i + 1) = state_.agent_positions(i, 1);
            s(4 * i + 2) = state_.agent_velocities(i, 0);
            s(4 * i + 3) = state_.agent_velocities(i, 1);
        }
        return s;
    }

    /// -sum over landmarks of the distance to the closest agent.
    [[nodiscard]] double coverage_reward() const {
        double total = 0.0;
        for (int l = 0; l < config_.landmarks; ++l) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < config_.agents; ++i) {
                best = std::min(best, (state_.agent_positions.row(i) - state_.landmark_positions.row(l)).norm());
            }
            total -= best;
        }
        return total;
    }

    /// Coverage term for every agent plus the collision penalty per colliding pair.
    [[nodiscard]] std::vector<double> rewards() const {
        std::vector<double> out(static_cast<std::size_t>(config_.agents), coverage_reward());
        const double threshold = 2.0 * config_.agent_radius;
        for (int i = 0; i < config_.agents; ++i) {
            for (int j = i + 1; j < config_.agents; ++j) {
                if ((state_.agent_positions.row(i) - state_.agent_positions.row(j)).norm() < threshold) {
                    out[static_cast<std::size_t>(i)] += config_.collision_penalty;
                    out[static_cast<std::size_t>(j)] += config_.collision_penalty;
                }
            }
        }
        return out;
    }

    SpreadStepResult step(std::span<const int> joint_action) {
        detail::require(static_cast<int>(joint_action.size()) == config_.agents, "spread: one action per agent required");
        for (int i = 0; i < config_.agents; ++i) {
            const int a = joint_action[static_cast<std::size_t>(i)];
            detail::require(a >= 0 && a < kSpreadActionCount, "spread: invalid action index " + std::to_string(a));
            Eigen::RowVector2d force = Eigen::RowVector2d::Zero();
            switch (static_cast<SpreadAction>(a)) {
                case SpreadAction::noop: break;
                case SpreadAction::pos_x: force(0) = 1.0; break;
                case SpreadAction::neg_x: force(0) = -1.0; break;
                case SpreadAction::pos_y: force(1) = 1.0; break;
                case SpreadAction::neg_y: force(1) = -1.0; break;
            }
            Eigen::RowVector2d v = state_.agent_velocities.row(i) * (1.0 - config_.damping) +
                                   force * config_.acceleration * config_.dt;
            const double speed = v.norm();
            if (speed > config_.max_speed) {
                v *= config_.max_speed / speed;
            }
            Eigen::RowVector2d p = state_.agent_positions.row(i) + v * config_.dt;
            for (int axis = 0; axis < 2; ++axis) {
                if (p(axis) > 1.0 || p(axis) < -1.0) {
                    p(axis) = std::clamp(p(axis), -1.0, 1.0);
                    v(axis) = 0.0;
                }
            }
            state_.agent_positions.row(i) = p;
            state_.agent_velocities.row(i) = v;
        }
        state_.step += 1;
        return {rewards(), state_.step >= config_.episode_length};
    }

private:
    SpreadConfig config_;
    SpreadState state_;
};

// ---------------------------------------------------------------------------
// Latent Ornstein-Uhlenbeck process

struct LatentParams {
    double mean_reversion = 0.05;  // theta_ou
    double diffusion = 0.3;        // eta
    double observation_noise = 0.5;  // sigma_eps
    double dt = 0.1;

    void validate() const {
        detail::require(mean_reversion > 0.0, "latent: mean reversion rate must be positive");
        detail::require(diffusion >= 0.0, "latent: diffusion must be non-negative");
        detail::require(observation_noise >= 0.0, "latent: observation noise must be non-negative");
        detail::require(dt > 0.0, "latent: dt must be positive");
    }

    [[nodiscard]] double stationary_variance() const { return diffusion * diffusion / (2.0 * mean_reversion); }
    /// Euler-Maruyama transition coefficient 1 - theta*dt.
    [[nodiscard]] double transition() const { return 1.0 - mean_reversion * dt; }
    [[nodiscard]] double process_noise_variance() const { return diffusion * diffusion * dt; }
    [[nodiscard]] double observation_variance() const { return observation_noise * observation_noise; }
};

struct LatentProcessState {
    double latent = 0.0;
    double observation = 0.0;
    std::int64_t step = 0;
};

/// Draws the latent from the stationary law and then advances it with Euler-Maruyama.
class LatentProcess {
public:
    LatentProcess(LatentParams params, std::uint64_t seed) : params_(params), rng_(seed) {
        params_.validate();
        state_.latent = std::sqrt(params_.stationary_variance()) * normal_(rng_);
    }

    [[nodiscard]] const LatentParams& params() const noexcept { return params_; }
    [[nodiscard]] const LatentProcessState& state() const noexcept { return state_; }

    /// Parameters can change between steps (regime switches).
    void set_params(const LatentParams& params) {
        params.validate();
        params_ = params;
    }

    /// Advances one step and returns the new noisy observation.
    double step() {
        const double z = normal_(rng_);
        const double eps = normal_(rng_);
        state_.latent = state_.latent - params_.mean_reversion * state_.latent * params_.dt +
                        params_.diffusion * std::sqrt(params_.dt) * z;
        state_.observation = state_.latent + params_.observation_noise * eps;
        state_.step += 1;
        return state_.observation;
    }

    /// Test hook: overrides the current latent value.
    void set_latent(double value) { state_.latent = value; }

private:
    LatentParams params_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    LatentProcessState state_;
};

}  // namespace acllft::envs
