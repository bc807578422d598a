#pragma once

// Generalized advantage estimation and the clipped-surrogate actor-critic update
// shared by the decentralized agents and the central agent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acllft/approx.hpp"
#include "acllft/error.hpp"

namespace acllft::marl {

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// Backward recursion A_t = delta_t + gamma*lambda*(1 - done_t)*A_{t+1},
/// delta_t = r_t + gamma*(1 - done_t)*V(s_{t+1}) - V(s_t); returns = A + V.
[[nodiscard]] inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                                           std::span<const double> next_values, std::span<const std::uint8_t> dones,
                                           double gamma, double lambda) {
    const std::size_t n = rewards.size();
    detail::require(values.size() == n && next_values.size() == n && dones.size() == n,
                    "compute_gae: rewards, values, next_values and dones must have equal length");
    GaeResult out;
    out.advantages.assign(n, 0.0);
    out.returns.assign(n, 0.0);
    double running = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        detail::require(std::isfinite(values[t]) && std::isfinite(next_values[t]), "compute_gae: non-finite value");
        const double live = dones[t] ? 0.0 : 1.0;
        const double delta = rewards[t] + gamma * live * next_values[t] - values[t];
        running = delta + gamma * lambda * live * running;
        out.advantages[t] = running;
        out.returns[t] = running + values[t];
    }
    return out;
}

struct PpoConfig {
    double clip = 0.2;
    int epochs = 10;
    double entropy_coef = 0.01;
    bool normalize_advantages = true;
    approx::AdamConfig policy_adam{};
    approx::AdamConfig critic_adam{};
};

/// One column per sample.
struct PolicyBatch {
    Eigen::MatrixXd policy_inputs;
    Eigen::MatrixXd critic_inputs;
    std::vector<std::size_t> actions;
    std::vector<approx::Mask> masks;
    Eigen::VectorXd old_log_probs;
    Eigen::VectorXd advantages;
    Eigen::VectorXd returns;

    [[nodiscard]] std::size_t size() const noexcept { return actions.size(); }
};

struct PpoStats {
    double policy_loss = 0.0;  // -mean clipped surrogate
    double surrogate = 0.0;    // mean clipped surrogate
    double value_loss = 0.0;   // mean squared error against returns
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;    // mean(old_log_prob - log_prob)
};

namespace detail {

inline Eigen::VectorXd prepared_advantages(const PolicyBatch& batch, const PpoConfig& config) {
    Eigen::VectorXd adv = batch.advantages;
    if (config.normalize_advantages && adv.size() > 0) {
        const double mean = adv.mean();
        adv.array() -= mean;
        const double stddev = std::sqrt(adv.squaredNorm() / static_cast<double>(adv.size()));
        if (stddev >= 1e-8) {
            adv /= stddev;
        }
    }
    return adv;
}

inline void validate(const PolicyBatch& batch, const approx::DenseNet& policy, const approx::DenseNet& critic) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    acllft::detail::require(n > 0, "ppo: empty batch");
    acllft::detail::require(batch.policy_inputs.cols() == n && batch.critic_inputs.cols() == n &&
                                static_cast<Eigen::Index>(batch.masks.size()) == n &&
                                batch.old_log_probs.size() == n && batch.advantages.size() == n &&
                                batch.returns.size() == n,
                            "ppo: batch columns disagree");
    acllft::detail::require(batch.policy_inputs.rows() == policy.input_dim(), "ppo: policy input dim mismatch");
    acllft::detail::require(batch.critic_inputs.rows() == critic.input_dim(), "ppo: critic input dim mismatch");
    acllft::detail::require(critic.output_dim() == 1, "ppo: critic must have a scalar output");
}

struct PolicyPass {
    PpoStats stats;
    Eigen::MatrixXd logit_gradients;  // d(loss)/d(logits)
};

inline PolicyPass policy_pass(const PolicyBatch& batch, const Eigen::MatrixXd& logits, const Eigen::VectorXd& adv,
                              const PpoConfig& config) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    PolicyPass pass;
    pass.logit_gradients = Eigen::MatrixXd::Zero(logits.rows(), n);
    double surrogate = 0.0;
    double entropy = 0.0;
    double kl = 0.0;
    int clipped = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const approx::CategoricalPolicy pi(logits.col(i), batch.masks[idx]);
        const double logp = pi.log_prob(batch.actions[idx]);
        const double ratio = std::exp(logp - batch.old_log_probs(i));
        const double a = adv(i);
        const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
        surrogate += std::min(ratio * a, clipped_ratio * a);
        const double h = pi.entropy();
        entropy += h;
        kl += batch.old_log_probs(i) - logp;
        if (std::abs(ratio - 1.0) > config.clip) {
            ++clipped;
        }
        const bool active = a >= 0.0 ? ratio <= 1.0 + config.clip : ratio >= 1.0 - config.clip;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(logits.rows());
        if (active) {
            g -= a * ratio * pi.log_prob_gradient(batch.actions[idx]);
        }
        g -= config.entropy_coef * pi.entropy_gradient();
        pass.logit_gradients.col(i) = g / static_cast<double>(n);
    }
    const double inv = 1.0 / static_cast<double>(n);
    pass.stats.surrogate = surrogate * inv;
    pass.stats.policy_loss = -surrogate * inv;
    pass.stats.entropy = entropy * inv;
    pass.stats.approx_kl = kl * inv;
    pass.stats.clip_fraction = clipped * inv;
    return pass;
}

}  // namespace detail

/// Losses at the current parameters, without updating anything.
[[nodiscard]] inline PpoStats ppo_losses(const PolicyBatch& batch, const approx::DenseNet& policy,
                                         const approx::DenseNet& critic, const PpoConfig& config) {
    detail::validate(batch, policy, critic);
    const Eigen::VectorXd adv = detail::prepared_advantages(batch, config);
    auto pass = detail::policy_pass(batch, policy.forward_batch(batch.policy_inputs), adv, config);
    const Eigen::RowVectorXd values = critic.forward_batch(batch.critic_inputs).row(0);
    pass.stats.value_loss = (values.transpose() - batch.returns).squaredNorm() / static_cast<double>(batch.size());
    return pass.stats;
}

/// `epochs` full-batch passes: clipped surrogate ascent with an entropy bonus on the
/// policy, mean squared error descent on the critic. Returns first-epoch statistics
/// except clip fraction and KL, which are averaged over epochs.
inline PpoStats ppo_update(const PolicyBatch& batch, approx::DenseNet& policy, approx::AdamState& policy_state,
                           approx::DenseNet& critic, approx::AdamState& critic_state, const PpoConfig& config) {
    detail::validate(batch, policy, critic);
    acllft::detail::require(config.clip > 0.0 && config.epochs >= 1, "ppo: clip must be positive and epochs >= 1");
    const Eigen::VectorXd adv = detail::prepared_advantages(batch, config);
    const auto n = static_cast<double>(batch.size());

    PpoStats first;
    double clip_sum = 0.0;
    double kl_sum = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        approx::DenseNet::Cache policy_cache;
        const Eigen::MatrixXd logits = policy.forward_batch(batch.policy_inputs, &policy_cache);
        auto pass = detail::policy_pass(batch, logits, adv, config);

        approx::DenseNet::Cache critic_cache;
        const Eigen::MatrixXd values = critic.forward_batch(batch.critic_inputs, &critic_cache);
        const Eigen::RowVectorXd error = values.row(0) - batch.returns.transpose();
        pass.stats.value_loss = error.squaredNorm() / n;

        if (!std::isfinite(pass.stats.policy_loss) || !std::isfinite(pass.stats.value_loss)) {
            throw DivergenceError("ppo: non-finite loss");
        }
        if (epoch == 0) {
            first = pass.stats;
        }
        clip_sum += pass.stats.clip_fraction;
        kl_sum += pass.stats.approx_kl;

        const Eigen::VectorXd policy_grad = policy.backward_batch(policy_cache, pass.logit_gradients);
        const Eigen::VectorXd critic_grad = critic.backward_batch(critic_cache, Eigen::MatrixXd(2.0 * error / n));
        approx::adam_step(policy.parameters(), policy_grad, policy_state, config.policy_adam);
        approx::adam_step(critic.parameters(), critic_grad, critic_state, config.critic_adam);
    }
    first.clip_fraction = clip_sum / config.epochs;
    first.approx_kl = kl_sum / config.epochs;
    return first;
}

}  // namespace acllft::marl
