#pragma once

// Decentralized actors with a centralized critic, steered by the central agent's
// shared context-length choice. One episode is one update batch.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acllft/approx.hpp"
#include "acllft/central.hpp"
#include "acllft/error.hpp"
#include "acllft/policy_gradient.hpp"

namespace acllft::marl {

template <typename Env>
concept MultiAgentEnv = requires(Env env, const Env cenv, std::uint64_t seed, std::span<const int> actions) {
    { cenv.agent_count() } -> std::convertible_to<int>;
    { cenv.action_count() } -> std::convertible_to<int>;
    { cenv.observation_dim() } -> std::convertible_to<int>;
    { cenv.global_state_dim() } -> std::convertible_to<int>;
    env.reset(seed);
    { cenv.observations() } -> std::convertible_to<std::vector<Eigen::VectorXd>>;
    { cenv.global_state() } -> std::convertible_to<Eigen::VectorXd>;
    { env.step(actions).rewards } -> std::convertible_to<std::vector<double>>;
    { env.step(actions).done } -> std::convertible_to<bool>;
};

struct TrainerConfig {
    double gamma = 0.98;
    double lambda = 0.95;
    double clip = 0.2;
    int decentralized_epochs = 10;  // K_d
    int central_epochs = 10;        // K_c
    double entropy_coef = 0.01;
    double learning_rate = 1e-3;
    std::vector<int> hidden{256, 64, 16};
    central::CentralConfig central{};
    int fixed_length = -1;  // >= 0 replaces the central agent with a constant length
    central::ContextMode context_mode = central::ContextMode::time_domain;
    std::size_t attention_heads = 4;
    std::size_t attention_key_dim = 16;
    std::size_t episodes = 1000;
    std::size_t batch_episodes = 25;  // episodes collected per update
    std::size_t eval_interval = 100;
    std::size_t eval_episodes = 30;
    std::uint64_t seed = 0;
    bool value_normalization = true;  // critic regresses standardized returns
    double policy_output_gain = 0.01;  // scale of the initial logit layer, near-uniform start

    [[nodiscard]] std::size_t max_length() const { return central::ActionSchedule(central.schedule).max_length(); }

    void validate() const {
        acllft::detail::require(gamma > 0.0 && gamma < 1.0, "trainer: gamma must lie in (0, 1)");
        acllft::detail::require(lambda >= 0.0 && lambda <= 1.0, "trainer: lambda must lie in [0, 1]");
        acllft::detail::require(clip > 0.0, "trainer: clip must be positive");
        acllft::detail::require(decentralized_epochs >= 1 && central_epochs >= 1, "trainer: epochs must be positive");
        acllft::detail::require(learning_rate > 0.0, "trainer: learning rate must be positive");
        acllft::detail::require(eval_interval >= 1, "trainer: eval interval must be positive");
        acllft::detail::require(batch_episodes >= 1, "trainer: batch must hold at least one episode");
        acllft::detail::require(fixed_length < 0 || static_cast<std::size_t>(fixed_length) <= max_length(),
                        "trainer: fixed length exceeds L_max=" + std::to_string(max_length()));
        (void)central::ActionSchedule(central.schedule);
    }

    [[nodiscard]] bool adaptive() const noexcept { return fixed_length < 0; }
};

// ---------------------------------------------------------------------------
// Rollout records

struct Transition {
    int agent_id = 0;
    Eigen::VectorXd observation;
    central::OptimalContext context;
    int action = 0;
    double log_prob = 0.0;
    double reward = 0.0;
    Eigen::VectorXd next_observation;
    bool done = false;
    std::uint64_t policy_version = 0;
};

struct DecisionRecord {
    std::size_t step = 0;
    std::size_t t = 0;
    std::size_t action_index = 0;
    std::size_t context_length = 0;
    double value_estimate = 0.0;
    double entropy = 0.0;
    std::size_t available = 1;
};

struct Trajectory {
    std::vector<std::vector<Transition>> agents;  // agents[i][step]
    std::vector<central::CentralTransition> central;
    std::vector<Eigen::VectorXd> attention;  // omega per step
    std::vector<double> central_rewards;
    std::vector<DecisionRecord> decisions;
    std::vector<Eigen::VectorXd> critic_inputs;  // s_global per step
    std::vector<double> values;                  // V(s_global) per step
    std::vector<double> returns;                 // undiscounted return per agent
    std::vector<Eigen::MatrixX2d> positions;     // optional, filled when the env exposes positions

    [[nodiscard]] std::size_t length() const { return critic_inputs.size(); }

    [[nodiscard]] double mean_return() const {
        double total = 0.0;
        for (const double r : returns) {
            total += r;
        }
        return returns.empty() ? 0.0 : total / static_cast<double>(returns.size());
    }
};

struct AgentObservation {
    int agent_id = 0;
    Eigen::VectorXd observation;
};

/// Observations in agent-id order followed by the shared context window, flattened once.
[[nodiscard]] inline Eigen::VectorXd build_global_critic_input(std::span<const AgentObservation> observations,
                                                               const central::OptimalContext& context, int agent_count) {
    acllft::detail::require(agent_count >= 1, "critic input: need at least one agent");
    std::vector<const AgentObservation*> ordered(static_cast<std::size_t>(agent_count), nullptr);
    for (const auto& o : observations) {
        acllft::detail::require(o.agent_id >= 0 && o.agent_id < agent_count, "critic input: agent id out of range");
        acllft::detail::require(ordered[static_cast<std::size_t>(o.agent_id)] == nullptr, "critic input: duplicate agent " +
                                                                                       std::to_string(o.agent_id));
        ordered[static_cast<std::size_t>(o.agent_id)] = &o;
    }
    Eigen::Index dim = 0;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        acllft::detail::require(ordered[i] != nullptr, "critic input: missing agent " + std::to_string(i));
        dim += ordered[i]->observation.size();
    }
    const Eigen::VectorXd flat = context.flattened();
    Eigen::VectorXd out(dim + flat.size());
    Eigen::Index k = 0;
    for (const auto* o : ordered) {
        out.segment(k, o->observation.size()) = o->observation;
        k += o->observation.size();
    }
    out.tail(flat.size()) = flat;
    return out;
}

[[nodiscard]] inline Eigen::VectorXd build_global_critic_input(const std::vector<Eigen::VectorXd>& observations,
                                                               const central::OptimalContext& context) {
    std::vector<AgentObservation> tagged;
    for (std::size_t i = 0; i < observations.size(); ++i) {
        tagged.push_back({static_cast<int>(i), observations[i]});
    }
    return build_global_critic_input(tagged, context, static_cast<int>(observations.size()));
}

[[nodiscard]] inline Eigen::VectorXd policy_input(const Eigen::VectorXd& observation, const central::OptimalContext& context) {
    const Eigen::VectorXd flat = context.flattened();
    Eigen::VectorXd out(observation.size() + flat.size() + 1);
    out << observation, flat, context.length_feature;
    return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct UpdateStats {
    double central_entropy = 0.0;
    double clip_fraction = 0.0;
    double value_loss = 0.0;
    double policy_loss = 0.0;
    int alignment_sign = 0;
    double alignment = 0.0;
};

struct EvalResult {
    double mean_return = 0.0;
    double std_return = 0.0;
    double central_entropy = 0.0;  // mean policy entropy over steps with more than one available length
    std::map<std::size_t, std::size_t> length_counts;
    std::vector<double> returns;
};

[[nodiscard]] inline EvalResult summarize_returns(std::vector<double> returns) {
    EvalResult out;
    out.returns = std::move(returns);
    if (out.returns.empty()) {
        return out;
    }
    double mean = 0.0;
    for (const double r : out.returns) {
        mean += r;
    }
    mean /= static_cast<double>(out.returns.size());
    double var = 0.0;
    for (const double r : out.returns) {
        var += (r - mean) * (r - mean);
    }
    out.mean_return = mean;
    out.std_return = std::sqrt(var / static_cast<double>(out.returns.size()));
    return out;
}

/// Estimated sign of <grad J_c, grad sum_j J_j> with respect to the shared policy, from
/// g_c = sum_t gamma^t sum_i w_t^i grad log pi_i A_i and g_d = the same without weights.
struct AlignmentEstimate {
    double inner_product = 0.0;
    int sign = 0;
};

[[nodiscard]] inline AlignmentEstimate alignment_diagnostic(const approx::DenseNet& policy, const Eigen::MatrixXd& inputs,
                                                            std::span<const std::size_t> actions,
                                                            std::span<const approx::Mask> masks,
                                                            std::span<const double> advantages,
                                                            std::span<const double> weights,
                                                            std::span<const double> discounts) {
    const auto n = inputs.cols();
    acllft::detail::require(static_cast<Eigen::Index>(actions.size()) == n && static_cast<Eigen::Index>(masks.size()) == n &&
                        static_cast<Eigen::Index>(advantages.size()) == n &&
                        static_cast<Eigen::Index>(weights.size()) == n && static_cast<Eigen::Index>(discounts.size()) == n,
                    "alignment: column counts disagree");
    approx::DenseNet::Cache cache;
    const Eigen::MatrixXd logits = policy.forward_batch(inputs, &cache);
    Eigen::MatrixXd weighted(logits.rows(), n);
    Eigen::MatrixXd plain(logits.rows(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto idx = static_cast<std::size_t>(c);
        const approx::CategoricalPolicy pi(logits.col(c), masks[idx]);
        const Eigen::VectorXd g = pi.log_prob_gradient(actions[idx]) * (discounts[idx] * advantages[idx]);
        plain.col(c) = g;
        weighted.col(c) = g * weights[idx];
    }
    AlignmentEstimate out;
    out.inner_product = policy.backward_batch(cache, weighted).dot(policy.backward_batch(cache, plain));
    out.sign = out.inner_product > 0.0 ? 1 : (out.inner_product < 0.0 ? -1 : 0);
    return out;
}

// ---------------------------------------------------------------------------
// Trainer

template <typename Env>
concept HasPositions = requires(const Env env) {
    { env.state().agent_positions } -> std::convertible_to<Eigen::MatrixX2d>;
};

namespace detail {

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows, Eigen::Index cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    }
    return out;
}

/// Central update hyperparameters follow the trainer's unless the central config was customised.
inline TrainerConfig with_central_defaults(TrainerConfig config) {
    auto& cu = config.central.update;
    cu.gamma = config.gamma;
    cu.lambda = config.lambda;
    cu.step_size = config.learning_rate;
    cu.ppo.clip = config.clip;
    cu.ppo.epochs = config.central_epochs;
    cu.ppo.entropy_coef = config.entropy_coef;
    cu.ppo.policy_adam.learning_rate = config.learning_rate;
    cu.ppo.critic_adam.learning_rate = config.learning_rate;
    return config;
}

}  // namespace detail

/// Running mean and variance of critic targets (parallel Welford merge per batch).
struct ValueNormalizer {
    double mean = 0.0;
    double var = 1.0;
    double count = 0.0;

    void update(std::span<const double> targets) {
        if (targets.empty()) {
            return;
        }
        const auto n = static_cast<double>(targets.size());
        double m = 0.0;
        for (const double x : targets) {
            m += x;
        }
        m /= n;
        double v = 0.0;
        for (const double x : targets) {
            v += (x - m) * (x - m);
        }
        v /= n;
        const double total = count + n;
        const double delta = m - mean;
        const double m2 = (count > 0.0 ? var * count : 0.0) + v * n + delta * delta * count * n / total;
        mean += delta * n / total;
        var = m2 / total;
        count = total;
    }

    [[nodiscard]] double scale() const { return std::sqrt(std::max(var, 1e-8)); }
    [[nodiscard]] double normalize(double x) const { return (x - mean) / scale(); }
    [[nodiscard]] double denormalize(double x) const { return x * scale() + mean; }
};

struct EpisodeMetrics {
    std::size_t episode = 0;
    double mean_return = 0.0;
    double central_entropy = 0.0;
    double clip_fraction = 0.0;
    double value_loss = 0.0;
    int alignment_sign = 0;
};

struct EvalRecord {
    std::size_t episode = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
    double central_entropy = 0.0;
};

struct DecisionLogRow {
    std::size_t episode = 0;
    DecisionRecord decision;
};

struct TrainResult {
    std::vector<EpisodeMetrics> metrics;
    std::vector<EvalRecord> evaluations;
    std::vector<DecisionLogRow> decisions;  // first greedy evaluation episode at each evaluation point
    EvalResult final_eval;
    bool diverged = false;
    std::string message;
    std::size_t episodes_completed = 0;
};

class Trainer {
public:
    Trainer(TrainerConfig config, int agent_count, int observation_dim, int global_state_dim, int action_count)
        : config_(detail::with_central_defaults(std::move(config))),
          agent_count_(agent_count),
          observation_dim_(observation_dim),
          global_state_dim_(global_state_dim),
          action_count_(action_count),
          central_(config_.central, static_cast<std::size_t>(std::max(global_state_dim, 1)), config_.seed * 7919 + 3),
          heads_(config_.attention_heads, config_.attention_key_dim, 1 + config_.central.schedule.slots,
                 1 + static_cast<std::size_t>(std::max(action_count, 1)), config_.seed * 7919 + 5) {
        config_.validate();
        acllft::detail::require(agent_count_ >= 1 && observation_dim_ >= 1 && global_state_dim_ >= 1 && action_count_ >= 1,
                                "trainer: environment dimensions must be positive");
        const int context_dim = static_cast<int>(config_.max_length()) * global_state_dim_;
        std::vector<int> policy_sizes{observation_dim_ + context_dim + 1};
        policy_sizes.insert(policy_sizes.end(), config_.hidden.begin(), config_.hidden.end());
        policy_sizes.push_back(action_count_);
        std::vector<int> critic_sizes{agent_count_ * observation_dim_ + context_dim};
        critic_sizes.insert(critic_sizes.end(), config_.hidden.begin(), config_.hidden.end());
        critic_sizes.push_back(1);
        policy_ = approx::DenseNet::initialized(policy_sizes, config_.seed * 7919 + 1);
        critic_ = approx::DenseNet::initialized(critic_sizes, config_.seed * 7919 + 2);
        const std::size_t last = policy_.layer_count() - 1;
        policy_.weight(last) *= config_.policy_output_gain;
        policy_.bias(last).setZero();
        policy_state_ = approx::AdamState::zeros(policy_.parameter_count());
        critic_state_ = approx::AdamState::zeros(critic_.parameter_count());
        ppo_.clip = config_.clip;
        ppo_.epochs = config_.decentralized_epochs;
        ppo_.entropy_coef = config_.entropy_coef;
        ppo_.policy_adam.learning_rate = config_.learning_rate;
        ppo_.critic_adam.learning_rate = config_.learning_rate;
    }

    template <MultiAgentEnv Env>
    [[nodiscard]] static Trainer for_env(TrainerConfig config, const Env& env) {
        return Trainer(std::move(config), env.agent_count(), env.observation_dim(), env.global_state_dim(), env.action_count());
    }

    [[nodiscard]] const TrainerConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::uint64_t policy_version() const noexcept { return version_; }
    [[nodiscard]] approx::DenseNet& policy() noexcept { return policy_; }
    [[nodiscard]] const approx::DenseNet& policy() const noexcept { return policy_; }
    [[nodiscard]] approx::DenseNet& critic() noexcept { return critic_; }
    [[nodiscard]] const approx::DenseNet& critic() const noexcept { return critic_; }
    [[nodiscard]] const approx::AdamState& policy_state() const noexcept { return policy_state_; }
    [[nodiscard]] const approx::AdamState& critic_state() const noexcept { return critic_state_; }
    [[nodiscard]] central::CentralAgent& central_agent() noexcept { return central_; }
    [[nodiscard]] const central::CentralAgent& central_agent() const noexcept { return central_; }
    [[nodiscard]] const approx::AttentionHeads& attention_heads() const noexcept { return heads_; }

    /// One episode following the rollout loop: spectral state of the past global
    /// states, shared length choice, context slice, per-agent actions, attention
    /// weights and central reward. A null rng acts greedily everywhere.
    template <MultiAgentEnv Env>
    [[nodiscard]] Trajectory run_episode(Env& env, std::uint64_t env_seed, std::mt19937_64* rng) const {
        acllft::detail::require(env.agent_count() == agent_count_ && env.observation_dim() == observation_dim_ &&
                                    env.global_state_dim() == global_state_dim_ && env.action_count() == action_count_,
                                "run_episode: environment does not match the trainer's dimensions");
        env.reset(env_seed);
        const auto n = static_cast<std::size_t>(agent_count_);
        const std::size_t max_length = config_.max_length();
        const approx::Mask action_mask = approx::all_available(static_cast<std::size_t>(action_count_));
        Trajectory traj;
        traj.agents.resize(n);
        traj.returns.assign(n, 0.0);
        std::vector<Eigen::VectorXd> history_rows;
        std::vector<Eigen::VectorXd> obs = env.observations();
        Eigen::VectorXd central_state = central_.state_features(Eigen::MatrixXd(0, global_state_dim_));
        bool done = false;
        for (std::size_t t = 0; !done; ++t) {
            acllft::detail::require(t < 1000000, "run_episode: environment never signalled done");
            const Eigen::MatrixXd history = detail::stack_rows(history_rows, global_state_dim_);

            std::size_t length = 0;
            std::optional<central::CentralDecision> decision;
            if (config_.adaptive()) {
                decision = central_.decide(central_state, t, rng);
                length = decision->context_length;
                const auto available = static_cast<std::size_t>(
                    std::count(decision->mask.begin(), decision->mask.end(), std::uint8_t{1}));
                traj.decisions.push_back({t, t, decision->action_index, length, decision->value_estimate,
                                          decision->entropy, available});
            } else {
                length = std::min(static_cast<std::size_t>(config_.fixed_length), t);
            }
            const auto context = config_.context_mode == central::ContextMode::lowpass
                                     ? central::select_lowpass_context(history, length, max_length, config_.central.schedule.k0)
                                     : central::select_context(history, length, max_length);

            Eigen::MatrixXd inputs(policy_.input_dim(), static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) {
                inputs.col(static_cast<Eigen::Index>(i)) = policy_input(obs[i], context);
            }
            const Eigen::MatrixXd logits = policy_.forward_batch(inputs);
            Eigen::VectorXd critic_in = build_global_critic_input(obs, context);
            const double value = value_of(critic_.forward(critic_in)(0));

            std::vector<int> actions(n);
            std::vector<double> log_probs(n);
            std::vector<Eigen::VectorXd> features(n);
            for (std::size_t i = 0; i < n; ++i) {
                const approx::CategoricalPolicy pi(logits.col(static_cast<Eigen::Index>(i)), action_mask);
                const std::size_t a = rng != nullptr ? pi.sample(*rng) : pi.greedy();
                actions[i] = static_cast<int>(a);
                log_probs[i] = pi.log_prob(a);
                Eigen::VectorXd f(1 + action_count_);
                f << value, pi.probabilities();
                features[i] = std::move(f);
            }

            history_rows.push_back(env.global_state());
            const auto result = env.step(std::span<const int>(actions));
            done = result.done;
            const std::vector<double> rewards(result.rewards.begin(), result.rewards.end());
            acllft::detail::require(rewards.size() == n, "run_episode: environment returned the wrong number of rewards");
            const std::vector<Eigen::VectorXd> next_obs = env.observations();
            if constexpr (HasPositions<Env>) {
                traj.positions.push_back(env.state().agent_positions);
            }

            Eigen::VectorXd weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
            if (decision) {
                Eigen::VectorXd fc(1 + decision->probabilities.size());
                fc << decision->value_estimate, decision->probabilities;
                weights = approx::attention_weights(fc, features, heads_);
            }
            const double central_r = central::central_reward(std::span<const double>(weights.data(), n), rewards);

            for (std::size_t i = 0; i < n; ++i) {
                acllft::detail::require(std::isfinite(rewards[i]), "run_episode: non-finite reward");
                traj.agents[i].push_back({static_cast<int>(i), obs[i], context, actions[i], log_probs[i], rewards[i],
                                          next_obs[i], done, version_});
                traj.returns[i] += rewards[i];
            }
            Eigen::VectorXd next_central_state;
            if (decision) {
                next_central_state = central_.state_features(detail::stack_rows(history_rows, global_state_dim_));
                traj.central.push_back({central_state, next_central_state, decision->action_index, decision->mask,
                                        decision->log_prob, central_r, done});
            }
            traj.attention.push_back(std::move(weights));
            traj.central_rewards.push_back(central_r);
            traj.critic_inputs.push_back(std::move(critic_in));
            traj.values.push_back(value);
            obs = next_obs;
            if (decision) {
                central_state = std::move(next_central_state);
            }
        }
        return traj;
    }

    UpdateStats update(const Trajectory& traj) { return update(std::span<const Trajectory>(&traj, 1)); }

    /// Central update first, then K_d full-batch clipped-surrogate epochs on the shared
    /// policy and critic over every transition of the collected episodes.
    UpdateStats update(std::span<const Trajectory> episodes) {
        const auto n = static_cast<std::size_t>(agent_count_);
        acllft::detail::require(!episodes.empty(), "update: no episodes");
        std::size_t total_steps = 0;
        for (const auto& traj : episodes) {
            acllft::detail::require(traj.length() > 0 && traj.agents.size() == n, "update: empty or malformed trajectory");
            total_steps += traj.length();
        }
        UpdateStats stats;
        if (config_.adaptive()) {
            double entropy = 0.0;
            std::size_t counted = 0;
            std::vector<central::CentralTransition> central_batch;
            for (const auto& traj : episodes) {
                for (const auto& d : traj.decisions) {
                    if (d.available > 1) {
                        entropy += d.entropy;
                        ++counted;
                    }
                }
                central_batch.insert(central_batch.end(), traj.central.begin(), traj.central.end());
            }
            stats.central_entropy = counted > 0 ? entropy / static_cast<double>(counted) : 0.0;
            if (!central_batch.empty()) {
                (void)central_.update(central_batch);
            }
        }

        // GAE per episode and agent; columns are ordered episode, step, agent.
        std::vector<std::vector<std::vector<double>>> advantages(episodes.size());
        std::vector<std::vector<std::vector<double>>> returns(episodes.size());
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            const auto& traj = episodes[e];
            const std::size_t steps = traj.length();
            std::vector<double> next_values(steps, 0.0);
            std::vector<std::uint8_t> dones(steps, 0);
            for (std::size_t t = 0; t < steps; ++t) {
                next_values[t] = t + 1 < steps ? traj.values[t + 1] : 0.0;
                dones[t] = traj.agents[0][t].done ? 1 : 0;
            }
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> rewards(steps);
                for (std::size_t t = 0; t < steps; ++t) {
                    rewards[t] = traj.agents[i][t].reward;
                }
                auto gae = compute_gae(rewards, traj.values, next_values, dones, config_.gamma, config_.lambda);
                advantages[e].push_back(std::move(gae.advantages));
                returns[e].push_back(std::move(gae.returns));
            }
        }
        if (config_.value_normalization) {
            for (const auto& per_episode : returns) {
                for (const auto& r : per_episode) {
                    value_norm_.update(r);
                }
            }
        }
        PolicyBatch batch;
        const auto cols = static_cast<Eigen::Index>(total_steps * n);
        batch.policy_inputs.resize(policy_.input_dim(), cols);
        batch.critic_inputs.resize(critic_.input_dim(), cols);
        batch.old_log_probs.resize(cols);
        batch.advantages.resize(cols);
        batch.returns.resize(cols);
        std::vector<double> weights(static_cast<std::size_t>(cols));
        std::vector<double> discounts(static_cast<std::size_t>(cols));
        const approx::Mask mask = approx::all_available(static_cast<std::size_t>(action_count_));
        Eigen::Index c = 0;
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            const auto& traj = episodes[e];
            double discount = 1.0;
            for (std::size_t t = 0; t < traj.length(); ++t) {
                for (std::size_t i = 0; i < n; ++i, ++c) {
                    const auto& tr = traj.agents[i][t];
                    acllft::detail::require(tr.policy_version == version_,
                                            "update: trajectory was collected with stale parameters");
                    batch.policy_inputs.col(c) = policy_input(tr.observation, tr.context);
                    batch.critic_inputs.col(c) = traj.critic_inputs[t];
                    batch.actions.push_back(static_cast<std::size_t>(tr.action));
                    batch.masks.push_back(mask);
                    batch.old_log_probs(c) = tr.log_prob;
                    batch.advantages(c) = advantages[e][i][t];
                    batch.returns(c) = config_.value_normalization ? value_norm_.normalize(returns[e][i][t]) : returns[e][i][t];
                    weights[static_cast<std::size_t>(c)] = traj.attention[t](static_cast<Eigen::Index>(i));
                    discounts[static_cast<std::size_t>(c)] = discount;
                }
                discount *= config_.gamma;
            }
        }
        const std::vector<double> adv(batch.advantages.data(), batch.advantages.data() + cols);
        const auto alignment = alignment_diagnostic(policy_, batch.policy_inputs, batch.actions, batch.masks, adv, weights, discounts);
        stats.alignment = alignment.inner_product;
        stats.alignment_sign = alignment.sign;

        const auto ppo = ppo_update(batch, policy_, policy_state_, critic_, critic_state_, ppo_);
        stats.clip_fraction = ppo.clip_fraction;
        stats.value_loss = ppo.value_loss;
        stats.policy_loss = ppo.policy_loss;
        ++version_;
        return stats;
    }

    /// Greedy episodes on the given seeds.
    template <MultiAgentEnv Env>
    [[nodiscard]] EvalResult evaluate(Env& env, std::span<const std::uint64_t> seeds,
                                      std::vector<DecisionRecord>* first_decisions = nullptr) const {
        std::vector<double> returns;
        double entropy = 0.0;
        std::size_t counted = 0;
        std::map<std::size_t, std::size_t> counts;
        for (std::size_t e = 0; e < seeds.size(); ++e) {
            const auto traj = run_episode(env, seeds[e], nullptr);
            returns.push_back(traj.mean_return());
            for (const auto& d : traj.decisions) {
                counts[d.context_length] += 1;
                if (d.available > 1) {
                    entropy += d.entropy;
                    ++counted;
                }
            }
            if (e == 0 && first_decisions != nullptr) {
                *first_decisions = traj.decisions;
            }
        }
        auto out = summarize_returns(std::move(returns));
        out.central_entropy = counted > 0 ? entropy / static_cast<double>(counted) : 0.0;
        out.length_counts = std::move(counts);
        return out;
    }

    struct Snapshot {
        Eigen::VectorXd policy, critic, central_policy, central_critic;
        approx::AdamState policy_state, critic_state, central_policy_state, central_critic_state;
        ValueNormalizer value_norm;
    };

    [[nodiscard]] Snapshot snapshot() const {
        return {policy_.parameters(),           critic_.parameters(), central_.policy().parameters(),
                central_.critic().parameters(), policy_state_,        critic_state_,
                central_.policy_state(),        central_.critic_state(), value_norm_};
    }

    void restore(const Snapshot& s) {
        policy_.parameters() = s.policy;
        critic_.parameters() = s.critic;
        central_.policy().parameters() = s.central_policy;
        central_.critic().parameters() = s.central_critic;
        policy_state_ = s.policy_state;
        critic_state_ = s.critic_state;
        central_.policy_state() = s.central_policy_state;
        central_.critic_state() = s.central_critic_state;
        value_norm_ = s.value_norm;
    }

    [[nodiscard]] const ValueNormalizer& value_normalizer() const noexcept { return value_norm_; }

    /// Collects batch_episodes episodes, then updates. Episode e uses env seed
    /// seed + e; evaluation runs every eval_interval episodes (and at 0 and the end)
    /// on fixed seeds, with the parameters after the update that consumed episode e.
    /// A divergence restores the last good parameters and stops.
    template <MultiAgentEnv Env>
    TrainResult train(Env& env, const std::function<void(const EpisodeMetrics&)>& on_episode = {}) {
        TrainResult result;
        const auto seeds = eval_seeds(config_);
        const auto record_eval = [&](std::size_t episode) {
            std::vector<DecisionRecord> decisions;
            auto ev = evaluate(env, seeds, &decisions);
            result.evaluations.push_back({episode, ev.mean_return, ev.std_return, ev.central_entropy});
            for (const auto& d : decisions) {
                result.decisions.push_back({episode, d});
            }
            result.final_eval = std::move(ev);
        };
        record_eval(0);
        std::vector<Trajectory> pending;
        std::size_t first = 1;
        for (std::size_t e = 1; e <= config_.episodes; ++e) {
            std::mt19937_64 rng(episode_rng_seed(config_.seed, e));
            pending.push_back(run_episode(env, config_.seed + e, &rng));
            if (pending.size() < config_.batch_episodes && e < config_.episodes) {
                continue;
            }
            const Snapshot good = snapshot();
            try {
                const auto stats = update(pending);
                for (std::size_t k = 0; k < pending.size(); ++k) {
                    EpisodeMetrics m{first + k, pending[k].mean_return(), stats.central_entropy, stats.clip_fraction,
                                     stats.value_loss, stats.alignment_sign};
                    result.metrics.push_back(m);
                    if (on_episode) {
                        on_episode(m);
                    }
                }
            } catch (const DivergenceError& err) {
                restore(good);
                result.diverged = true;
                result.message = "diverged in the update after episode " + std::to_string(e) + ": " + err.what();
                break;
            }
            for (std::size_t k = first; k <= e; ++k) {
                result.episodes_completed = k;
                if (k % config_.eval_interval == 0 || k == config_.episodes) {
                    record_eval(k);
                }
            }
            pending.clear();
            first = e + 1;
        }
        return result;
    }

    [[nodiscard]] static std::vector<std::uint64_t> eval_seeds(const TrainerConfig& config) {
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < config.eval_episodes; ++i) {
            seeds.push_back(1000000000ULL + config.seed * 1000ULL + i);
        }
        return seeds;
    }

    [[nodiscard]] static std::uint64_t episode_rng_seed(std::uint64_t seed, std::size_t episode) {
        return (seed + 1) * 0x9e3779b97f4a7c15ULL ^ (static_cast<std::uint64_t>(episode) * 0xbf58476d1ce4e5b9ULL);
    }

private:
    TrainerConfig config_;
    int agent_count_ = 0;
    int observation_dim_ = 0;
    int global_state_dim_ = 0;
    int action_count_ = 0;
    central::CentralAgent central_;
    approx::AttentionHeads heads_;
    approx::DenseNet policy_;
    approx::DenseNet critic_;
    approx::AdamState policy_state_;
    approx::AdamState critic_state_;
    PpoConfig ppo_{};
    ValueNormalizer value_norm_{};
    std::uint64_t version_ = 0;

    [[nodiscard]] double value_of(double critic_output) const {
        return config_.value_normalization ? value_norm_.denormalize(critic_output) : critic_output;
    }
};

/// Uniformly random joint actions on the given seeds; the reference for improvement claims.
template <MultiAgentEnv Env>
[[nodiscard]] EvalResult evaluate_random(Env& env, std::span<const std::uint64_t> seeds, std::uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    std::vector<double> returns;
    for (const auto seed : seeds) {
        env.reset(seed);
        std::vector<double> totals(static_cast<std::size_t>(env.agent_count()), 0.0);
        bool done = false;
        while (!done) {
            std::vector<int> actions(static_cast<std::size_t>(env.agent_count()));
            for (auto& a : actions) {
                a = static_cast<int>(approx::uniform01(rng) * env.action_count());
            }
            const auto result = env.step(std::span<const int>(actions));
            for (std::size_t i = 0; i < totals.size(); ++i) {
                totals[i] += result.rewards[i];
            }
            done = result.done;
        }
        double mean = 0.0;
        for (const double r : totals) {
            mean += r;
        }
        returns.push_back(mean / static_cast<double>(totals.size()));
    }
    return summarize_returns(std::move(returns));
}

}  // namespace acllft::marl
