#pragma once

// The central agent: dyadic context-length action schedule, spectral state,
// context-length selection, attention-weighted reward and its own updates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "acllft/approx.hpp"
#include "acllft/error.hpp"
#include "acllft/policy_gradient.hpp"
#include "acllft/spectral.hpp"

namespace acllft::central {

// ---------------------------------------------------------------------------
// Action schedule

struct ActionScheduleConfig {
    std::size_t slots = 5;        // M
    std::size_t k0 = 4;
    std::size_t threshold = 7;    // the full action set is available for t > threshold
    double length_cap_scale = 1.0;  // longest length = k0 * scale

    [[nodiscard]] int cap_exponent() const {
        return static_cast<int>(std::floor(std::log2(static_cast<double>(k0) * length_cap_scale) + 1e-9));
    }
};

struct AvailableActions {
    std::vector<std::size_t> lengths;  // M entries, zeros first
    approx::Mask mask;                 // duplicate zeros masked; slot 0 is the canonical "no context"

    [[nodiscard]] std::size_t available_count() const {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }
};

class ActionSchedule {
public:
    explicit ActionSchedule(ActionScheduleConfig config = {}) : config_(config) {
        detail::require(config_.k0 >= 1 && config_.length_cap_scale > 0.0, "schedule: k0 and cap scale must be positive");
        detail::require(config_.cap_exponent() >= 0, "schedule: k0 * cap scale must be at least 1");
        detail::require(config_.slots >= static_cast<std::size_t>(config_.cap_exponent()) + 1,
                        "schedule: M=" + std::to_string(config_.slots) + " cannot hold " +
                            std::to_string(config_.cap_exponent() + 1) + " dyadic lengths");
        const auto beyond = at(config_.threshold + 1);
        detail::require(beyond.lengths.back() == max_length(),
                        "schedule: action set is not complete beyond the threshold step");
    }

    [[nodiscard]] const ActionScheduleConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::size_t slots() const noexcept { return config_.slots; }
    [[nodiscard]] std::size_t max_length() const noexcept { return std::size_t{1} << config_.cap_exponent(); }

    /// {2^0, ..., 2^k} with k = min(log2(k0 * scale), floor(log2 t) - 1), left-padded with zeros.
    [[nodiscard]] AvailableActions at(std::size_t t) const {
        const int history_exponent = t == 0 ? -1 : spectral::floor_log2(t) - 1;
        const int k = std::min(config_.cap_exponent(), history_exponent);
        AvailableActions out;
        out.lengths.assign(config_.slots, 0);
        out.mask.assign(config_.slots, 0);
        const auto nonzero = static_cast<std::size_t>(k + 1);
        for (std::size_t i = 0; i < nonzero; ++i) {
            out.lengths[config_.slots - nonzero + i] = std::size_t{1} << i;
        }
        for (std::size_t i = 0; i < config_.slots; ++i) {
            out.mask[i] = (out.lengths[i] > 0 || i == 0) ? 1 : 0;
        }
        return out;
    }

private:
    ActionScheduleConfig config_;
};

[[nodiscard]] inline AvailableActions available_actions(std::size_t t, const ActionSchedule& schedule) {
    return schedule.at(t);
}

// ---------------------------------------------------------------------------
// Context selection

struct OptimalContext {
    Eigen::MatrixXd window;  // L_max x d, newest row last, leading rows zero
    std::size_t chosen_length = 0;
    double length_feature = 0.0;

    [[nodiscard]] Eigen::VectorXd flattened() const {
        Eigen::VectorXd out(window.size());
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < window.rows(); ++r) {
            for (Eigen::Index c = 0; c < window.cols(); ++c) {
                out(k++) = window(r, c);
            }
        }
        return out;
    }
};

enum class ContextMode { time_domain, lowpass };

[[nodiscard]] inline ContextMode parse_context_mode(std::string_view text) {
    if (text == "time_domain") {
        return ContextMode::time_domain;
    }
    if (text == "lowpass") {
        return ContextMode::lowpass;
    }
    throw ValidationError("unknown context mode '" + std::string(text) + "' (expected time_domain|lowpass)");
}

/// Copies the last L history rows into the tail of an L_max x d zero matrix.
[[nodiscard]] inline OptimalContext select_context(const Eigen::MatrixXd& history, std::size_t length,
                                                   std::size_t max_length) {
    detail::require(max_length >= 1, "select_context: L_max must be positive");
    detail::require(length <= static_cast<std::size_t>(history.rows()),
                    "select_context: L=" + std::to_string(length) + " exceeds the " +
                        std::to_string(history.rows()) + " available history steps");
    detail::require(length <= max_length, "select_context: L exceeds L_max");
    OptimalContext out;
    const auto l = static_cast<Eigen::Index>(length);
    out.window = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(max_length), history.cols());
    if (l > 0) {
        out.window.bottomRows(l) = history.bottomRows(l);
    }
    out.chosen_length = length;
    out.length_feature = static_cast<double>(length) / static_cast<double>(max_length);
    return out;
}

[[nodiscard]] inline OptimalContext select_context(const spectral::HistoryWindow& history, std::size_t length,
                                                   std::size_t max_length) {
    return select_context(history.steps(), length, max_length);
}

/// Ablation variant: the selected tail keeps only folded frequencies below `keep` per channel.
[[nodiscard]] inline OptimalContext select_lowpass_context(const Eigen::MatrixXd& history, std::size_t length,
                                                           std::size_t max_length, std::size_t keep) {
    auto out = select_context(history, length, max_length);
    if (length < 2) {
        return out;
    }
    const auto l = static_cast<Eigen::Index>(length);
    for (Eigen::Index c = 0; c < history.cols(); ++c) {
        std::vector<double> tail(static_cast<std::size_t>(l));
        for (Eigen::Index r = 0; r < l; ++r) {
            tail[static_cast<std::size_t>(r)] = out.window(out.window.rows() - l + r, c);
        }
        auto spectrum = spectral::dft(tail);
        for (std::size_t k = 0; k < spectrum.size(); ++k) {
            if (std::min(k, spectrum.size() - k) >= keep) {
                spectrum[k] = 0.0;
            }
        }
        const auto filtered = spectral::idft(spectrum);
        for (Eigen::Index r = 0; r < l; ++r) {
            out.window(out.window.rows() - l + r, c) = filtered[static_cast<std::size_t>(r)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reward

/// r_c = sum_i w_i r_i for weights on the simplex.
[[nodiscard]] inline double central_reward(std::span<const double> weights, std::span<const double> rewards) {
    detail::require(weights.size() == rewards.size() && !weights.empty(), "central_reward: weights and rewards differ in length");
    double total = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        detail::require(weights[i] >= 0.0, "central_reward: negative weight");
        sum += weights[i];
        total += weights[i] * rewards[i];
    }
    detail::require(std::abs(sum - 1.0) <= 1e-9, "central_reward: weights sum to " + std::to_string(sum) + ", not 1");
    return total;
}

// ---------------------------------------------------------------------------
// Decisions and updates

struct CentralDecision {
    std::size_t action_index = 0;
    std::size_t context_length = 0;
    double log_prob = 0.0;
    double value_estimate = 0.0;
    double entropy = 0.0;
    Eigen::VectorXd probabilities;
    approx::Mask mask;
};

/// Masked categorical choice over the schedule at step t; greedy when rng is null.
[[nodiscard]] inline CentralDecision decide(const Eigen::VectorXd& state, std::size_t t, const ActionSchedule& schedule,
                                            const approx::DenseNet& policy, const approx::DenseNet& critic,
                                            std::mt19937_64* rng) {
    detail::require(policy.input_dim() == state.size() && critic.input_dim() == state.size(),
                    "decide: central state dimension does not match the networks");
    detail::require(policy.output_dim() == static_cast<Eigen::Index>(schedule.slots()),
                    "decide: policy output does not match the action slots");
    const auto actions = schedule.at(t);
    const approx::CategoricalPolicy pi(policy.forward(state), actions.mask);
    CentralDecision out;
    out.action_index = rng != nullptr ? pi.sample(*rng) : pi.greedy();
    out.context_length = actions.lengths[out.action_index];
    out.log_prob = pi.log_prob(out.action_index);
    out.value_estimate = critic.forward(state)(0);
    out.entropy = pi.entropy();
    out.probabilities = pi.probabilities();
    out.mask = actions.mask;
    return out;
}

enum class UpdateMode { td, ppo };

[[nodiscard]] inline UpdateMode parse_update_mode(std::string_view text) {
    if (text == "td") {
        return UpdateMode::td;
    }
    if (text == "ppo") {
        return UpdateMode::ppo;
    }
    throw ValidationError("unknown central update mode '" + std::string(text) + "' (expected td|ppo)");
}

struct CentralTransition {
    Eigen::VectorXd state;
    Eigen::VectorXd next_state;
    std::size_t action = 0;
    approx::Mask mask;
    double log_prob = 0.0;
    double reward = 0.0;
    bool done = false;
};

struct CentralUpdateConfig {
    UpdateMode mode = UpdateMode::ppo;
    double gamma = 0.98;
    double lambda = 0.95;
    double step_size = 1e-3;  // zeta in td mode
    marl::PpoConfig ppo{};
};

struct CentralUpdateStats {
    double mean_td_error = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
};

/// td: delta = r + gamma V(s') - V(s); theta += zeta * mean(grad log pi * delta);
///     phi += zeta * mean(delta * grad V) (semi-gradient descent on delta^2 / 2).
/// ppo: GAE advantages from the critic, then clipped-surrogate epochs.
inline CentralUpdateStats central_update(std::span<const CentralTransition> batch, approx::DenseNet& policy,
                                         approx::AdamState& policy_state, approx::DenseNet& critic,
                                         approx::AdamState& critic_state, const CentralUpdateConfig& config) {
    detail::require(!batch.empty(), "central_update: empty batch");
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index dim = policy.input_dim();
    Eigen::MatrixXd states(dim, n);
    Eigen::MatrixXd next_states(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tr = batch[static_cast<std::size_t>(i)];
        detail::require(tr.state.size() == dim && tr.next_state.size() == dim, "central_update: state dimension mismatch");
        states.col(i) = tr.state;
        next_states.col(i) = tr.next_state;
    }
    approx::DenseNet::Cache critic_cache;
    const Eigen::RowVectorXd values = critic.forward_batch(states, &critic_cache).row(0);
    const Eigen::RowVectorXd next_values = critic.forward_batch(next_states).row(0);

    CentralUpdateStats stats;
    if (config.mode == UpdateMode::td) {
        Eigen::RowVectorXd deltas(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& tr = batch[static_cast<std::size_t>(i)];
            deltas(i) = tr.reward + config.gamma * (tr.done ? 0.0 : next_values(i)) - values(i);
        }
        if (!deltas.allFinite()) {
            throw DivergenceError("central_update: non-finite TD error");
        }
        approx::DenseNet::Cache policy_cache;
        const Eigen::MatrixXd logits = policy.forward_batch(states, &policy_cache);
        Eigen::MatrixXd logit_grad(logits.rows(), n);
        double entropy = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& tr = batch[static_cast<std::size_t>(i)];
            const approx::CategoricalPolicy pi(logits.col(i), tr.mask);
            logit_grad.col(i) = pi.log_prob_gradient(tr.action) * deltas(i) / static_cast<double>(n);
            entropy += pi.entropy();
        }
        const Eigen::VectorXd ascent = policy.backward_batch(policy_cache, logit_grad);
        const Eigen::VectorXd value_ascent = critic.backward_batch(critic_cache, Eigen::MatrixXd(deltas / static_cast<double>(n)));
        policy.parameters() += config.step_size * ascent;
        critic.parameters() += config.step_size * value_ascent;
        stats.mean_td_error = deltas.mean();
        stats.value_loss = deltas.squaredNorm() / static_cast<double>(n);
        stats.entropy = entropy / static_cast<double>(n);
        return stats;
    }

    std::vector<double> rewards(batch.size());
    std::vector<double> v(batch.size());
    std::vector<double> nv(batch.size());
    std::vector<std::uint8_t> dones(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        rewards[i] = batch[i].reward;
        v[i] = values(static_cast<Eigen::Index>(i));
        nv[i] = next_values(static_cast<Eigen::Index>(i));
        dones[i] = batch[i].done ? 1 : 0;
    }
    const auto gae = marl::compute_gae(rewards, v, nv, dones, config.gamma, config.lambda);

    marl::PolicyBatch pb;
    pb.policy_inputs = states;
    pb.critic_inputs = states;
    pb.old_log_probs.resize(n);
    pb.advantages.resize(n);
    pb.returns.resize(n);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        pb.actions.push_back(batch[i].action);
        pb.masks.push_back(batch[i].mask);
        pb.old_log_probs(idx) = batch[i].log_prob;
        pb.advantages(idx) = gae.advantages[i];
        pb.returns(idx) = gae.returns[i];
    }
    double delta_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        delta_sum += rewards[i] + config.gamma * (dones[i] ? 0.0 : nv[i]) - v[i];
    }
    const auto ppo = marl::ppo_update(pb, policy, policy_state, critic, critic_state, config.ppo);
    stats.mean_td_error = delta_sum / static_cast<double>(n);
    stats.policy_loss = ppo.policy_loss;
    stats.value_loss = ppo.value_loss;
    stats.entropy = ppo.entropy;
    stats.clip_fraction = ppo.clip_fraction;
    return stats;
}

// ---------------------------------------------------------------------------
// Agent bundle

struct CentralConfig {
    ActionScheduleConfig schedule{};
    std::vector<int> hidden{256, 64, 16};
    CentralUpdateConfig update{};
    double feature_scale = 0.0;  // 0 selects 1/sqrt(padded length)
    std::size_t history_cap = 0;  // newest rows fed to the spectral state, 0 keeps all
    std::size_t min_padded = 0;
};

/// Policy and critic over the truncated spectral state of the global-state history.
class CentralAgent {
public:
    CentralAgent(CentralConfig config, std::size_t state_channels, std::uint64_t seed)
        : config_(std::move(config)), schedule_(config_.schedule), channels_(state_channels) {
        detail::require(channels_ >= 1, "central agent: need at least one state channel");
        const auto input = static_cast<int>(state_dimension());
        std::vector<int> policy_sizes{input};
        policy_sizes.insert(policy_sizes.end(), config_.hidden.begin(), config_.hidden.end());
        std::vector<int> critic_sizes = policy_sizes;
        policy_sizes.push_back(static_cast<int>(schedule_.slots()));
        critic_sizes.push_back(1);
        policy_ = approx::DenseNet::initialized(policy_sizes, seed);
        critic_ = approx::DenseNet::initialized(critic_sizes, seed ^ 0x9e3779b97f4a7c15ULL);
        policy_state_ = approx::AdamState::zeros(policy_.parameter_count());
        critic_state_ = approx::AdamState::zeros(critic_.parameter_count());
    }

    [[nodiscard]] std::size_t state_dimension() const {
        return spectral::central_state_dimension(channels_, config_.schedule.k0);
    }

    /// Spectral features of the history (rows oldest first); an empty history maps to zeros.
    [[nodiscard]] Eigen::VectorXd state_features(const Eigen::MatrixXd& history) const {
        if (history.rows() == 0) {
            return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state_dimension()));
        }
        const Eigen::Index rows = config_.history_cap == 0
                                      ? history.rows()
                                      : std::min<Eigen::Index>(history.rows(), static_cast<Eigen::Index>(config_.history_cap));
        const spectral::HistoryWindow window(history.bottomRows(rows));
        const auto cs = spectral::central_state(window, config_.schedule.k0, config_.min_padded);
        const double scale = config_.feature_scale > 0.0 ? config_.feature_scale
                                                         : 1.0 / std::sqrt(static_cast<double>(cs.padded_t));
        return cs.features * scale;
    }

    [[nodiscard]] CentralDecision decide(const Eigen::VectorXd& state, std::size_t t, std::mt19937_64* rng) const {
        return central::decide(state, t, schedule_, policy_, critic_, rng);
    }

    CentralUpdateStats update(std::span<const CentralTransition> batch) {
        return central_update(batch, policy_, policy_state_, critic_, critic_state_, config_.update);
    }

    [[nodiscard]] const CentralConfig& config() const noexcept { return config_; }
    [[nodiscard]] const ActionSchedule& schedule() const noexcept { return schedule_; }
    [[nodiscard]] approx::DenseNet& policy() noexcept { return policy_; }
    [[nodiscard]] const approx::DenseNet& policy() const noexcept { return policy_; }
    [[nodiscard]] approx::DenseNet& critic() noexcept { return critic_; }
    [[nodiscard]] const approx::DenseNet& critic() const noexcept { return critic_; }
    [[nodiscard]] approx::AdamState& policy_state() noexcept { return policy_state_; }
    [[nodiscard]] approx::AdamState& critic_state() noexcept { return critic_state_; }
    [[nodiscard]] const approx::AdamState& policy_state() const noexcept { return policy_state_; }
    [[nodiscard]] const approx::AdamState& critic_state() const noexcept { return critic_state_; }

private:
    CentralConfig config_;
    ActionSchedule schedule_;
    std::size_t channels_ = 0;
    approx::DenseNet policy_;
    approx::DenseNet critic_;
    approx::AdamState policy_state_;
    approx::AdamState critic_state_;
};

}  // namespace acllft::central
