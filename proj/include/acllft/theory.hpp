#pragma once

// Window-length information loss on a latent Ornstein-Uhlenbeck process:
// Kalman posterior over the last L observations, the per-step optimal window,
// and cumulative loss curves for fixed and adaptive window policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acllft/approx.hpp"
#include "acllft/central.hpp"
#include "acllft/envs.hpp"
#include "acllft/error.hpp"

namespace acllft::theory {

using envs::LatentParams;

struct PosteriorEstimate {
    double mean = 0.0;
    double variance = 0.0;
    std::size_t window = 0;
};

/// Linear-Gaussian filter over `observations` (oldest first) started from the
/// stationary prior on the oldest observed state. An empty window returns the prior.
[[nodiscard]] inline PosteriorEstimate kalman_posterior(std::span<const double> observations, const LatentParams& params) {
    params.validate();
    PosteriorEstimate out;
    out.window = observations.size();
    out.variance = params.stationary_variance();
    const double a = params.transition();
    const double q = params.process_noise_variance();
    const double r = params.observation_variance();
    for (std::size_t i = 0; i < observations.size(); ++i) {
        detail::require(std::isfinite(observations[i]), "kalman_posterior: non-finite observation");
        if (i > 0) {
            out.mean *= a;
            out.variance = a * a * out.variance + q;
        }
        const double gain = out.variance / (out.variance + r);
        out.mean += gain * (observations[i] - out.mean);
        out.variance *= (1.0 - gain);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regime-switching benchmark

/// Alternates the mean-reversion rate between the base value and `fast_mean_reversion`
/// every `period` steps. The diffusion is rescaled in the fast regime so the
/// continuous stationary variance is unchanged. period = 0 disables switching.
struct RegimeSchedule {
    LatentParams base{};
    double fast_mean_reversion = 1.0;
    std::size_t period = 2000;

    [[nodiscard]] bool fast_at(std::size_t step) const {
        return period > 0 && ((step / period) % 2 == 1);
    }

    [[nodiscard]] LatentParams params_at(std::size_t step) const {
        if (!fast_at(step)) {
            return base;
        }
        LatentParams p = base;
        p.mean_reversion = fast_mean_reversion;
        p.diffusion = std::sqrt(2.0 * fast_mean_reversion * base.stationary_variance());
        return p;
    }
};

/// True-parameter path of a simulated trace, indexed by absolute step (0 = initial draw).
struct RegimePath {
    std::vector<LatentParams> params;       // params[s] drives the transition into step s
    std::vector<double> marginal_variance;  // Var(xi_s) under the true path
    std::vector<double> observations;       // observations[s], s >= 1 (entry 0 unused)
    std::vector<double> latents;
};

[[nodiscard]] inline RegimePath simulate_path(const RegimeSchedule& schedule, std::size_t steps, std::uint64_t seed) {
    RegimePath path;
    envs::LatentProcess process(schedule.params_at(0), seed);
    path.params.push_back(schedule.params_at(0));
    path.marginal_variance.push_back(schedule.params_at(0).stationary_variance());
    path.observations.push_back(0.0);
    path.latents.push_back(process.state().latent);
    for (std::size_t s = 1; s <= steps; ++s) {
        const auto p = schedule.params_at(s);
        process.set_params(p);
        path.params.push_back(p);
        const double a = p.transition();
        path.marginal_variance.push_back(a * a * path.marginal_variance.back() + p.process_noise_variance());
        path.observations.push_back(process.step());
        path.latents.push_back(process.state().latent);
    }
    return path;
}

/// Mean squared error of the window-L filter estimate of xi_end, where the filter
/// assumes `nominal` parameters while the state follows `path`. Propagates the
/// joint covariance of (xi, xi_hat) exactly. With path == nominal and a stationary
/// marginal at the window start this equals the Kalman posterior variance.
[[nodiscard]] inline double window_error_variance(const RegimePath& path, std::size_t end, std::size_t length,
                                                  const LatentParams& nominal) {
    detail::require(end < path.params.size(), "window_error_variance: end step outside the path");
    if (length == 0) {
        return path.marginal_variance[end];
    }
    detail::require(length <= end, "window_error_variance: window reaches before the first observation");
    const double r = nominal.observation_variance();
    const double a_nom = nominal.transition();
    const double q_nom = nominal.process_noise_variance();
    const std::size_t start = end - length + 1;
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    c(0, 0) = path.marginal_variance[start];
    double prior = nominal.stationary_variance();
    for (std::size_t s = start; s <= end; ++s) {
        if (s > start) {
            const auto& p = path.params[s];
            const Eigen::Matrix2d a = Eigen::Vector2d(p.transition(), a_nom).asDiagonal();
            c = a * c * a.transpose();
            c(0, 0) += p.process_noise_variance();
            prior = a_nom * a_nom * prior + q_nom;
        }
        const double gain = prior / (prior + r);
        Eigen::Matrix2d b;
        b << 1.0, 0.0, gain, 1.0 - gain;
        c = b * c * b.transpose();
        c(1, 1) += gain * gain * path.params[s].observation_variance();
        prior *= (1.0 - gain);
    }
    return c(0, 0) - 2.0 * c(0, 1) + c(1, 1);
}

// ---------------------------------------------------------------------------
// Optimal window and loss

struct WindowChoice {
    std::size_t length = 0;
    double variance = 0.0;
};

/// Minimum over candidates; ties go to the smaller length.
[[nodiscard]] inline WindowChoice argmin_window(std::span<const std::size_t> candidates, std::span<const double> variances) {
    detail::require(!candidates.empty() && candidates.size() == variances.size(), "optimal_window: need one variance per candidate");
    WindowChoice best{candidates[0], variances[0]};
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        if (variances[i] < best.variance || (variances[i] == best.variance && candidates[i] < best.length)) {
            best = {candidates[i], variances[i]};
        }
    }
    return best;
}

/// Exhaustive search of the Kalman posterior variance over candidate windows ending at the last observation.
[[nodiscard]] inline WindowChoice optimal_window(std::span<const double> history, const LatentParams& params,
                                                 std::span<const std::size_t> candidates) {
    std::vector<double> variances;
    for (const auto length : candidates) {
        detail::require(length <= history.size(), "optimal_window: candidate L=" + std::to_string(length) +
                                                      " exceeds the " + std::to_string(history.size()) + " observations");
        variances.push_back(kalman_posterior(history.last(length), params).variance);
    }
    return argmin_window(candidates, variances);
}

/// 0.5 * log(var_L / var_min).
[[nodiscard]] inline double info_loss(double variance, double min_variance) {
    detail::require(variance > 0.0 && min_variance > 0.0, "info_loss: variances must be positive");
    const double ratio = variance / min_variance;
    if (ratio < 1.0 - 1e-9) {
        throw std::logic_error("info_loss: variance below the claimed minimum (ratio " + std::to_string(ratio) + ")");
    }
    return 0.5 * std::log(std::max(ratio, 1.0));
}

// ---------------------------------------------------------------------------
// Fits

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

[[nodiscard]] inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    detail::require(x.size() == y.size() && x.size() >= 2, "linear_fit: need at least two paired points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    detail::require(sxx > 0.0, "linear_fit: x has no spread");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

struct ConvexityFit {
    bool applicable = false;
    double k = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t optimum = 0;
};

/// Least squares of (var_L - var_min) on c + k * (L - L*)^2 / 2 over candidates within
/// `radius` of L*. Flat profiles report applicable = false.
[[nodiscard]] inline ConvexityFit convexity_diagnostic(std::span<const std::size_t> lengths, std::span<const double> variances,
                                                       double radius = 4.0) {
    detail::require(lengths.size() == variances.size(), "convexity_diagnostic: one variance per length");
    ConvexityFit out;
    if (lengths.size() < 5) {
        return out;
    }
    const auto best = argmin_window(lengths, variances);
    out.optimum = best.length;
    std::vector<double> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        const double offset = static_cast<double>(lengths[i]) - static_cast<double>(best.length);
        if (std::abs(offset) <= radius) {
            x.push_back(0.5 * offset * offset);
            y.push_back(variances[i] - best.variance);
        }
    }
    const double spread = *std::max_element(y.begin(), y.end());
    if (x.size() < 3 || spread <= 1e-15 * std::max(1.0, best.variance)) {
        return out;
    }
    const auto fit = linear_fit(x, y);
    out.applicable = true;
    out.k = fit.slope;
    out.intercept = fit.intercept;
    out.r2 = fit.r2;
    return out;
}

// ---------------------------------------------------------------------------
// Regret experiment

struct LearnedAdaptiveConfig {
    std::size_t history = 64;
    std::size_t k0 = 8;
    std::vector<int> hidden{64, 64};
    std::size_t update_interval = 32;
    std::size_t replay_window = 4096;  // recent transitions eligible for each update
    std::size_t minibatch = 256;       // drawn from the replay window, newest interval always included
    int epochs = 10;
    double learning_rate = 1e-3;
    double entropy_coef = 0.05;
    double reward_scale = 1.0;
};

struct RegretConfig {
    RegimeSchedule schedule{};
    std::size_t horizon = 20000;
    std::vector<std::size_t> fixed_lengths{1, 2, 4, 8, 16, 32};
    bool include_oracle = true;
    bool include_learned = true;
    LearnedAdaptiveConfig learned{};
    std::uint64_t seed = 0;

    void validate() const {
        schedule.base.validate();
        detail::require(schedule.fast_mean_reversion > 0.0, "regret: fast mean reversion must be positive");
        detail::require(horizon >= 1, "regret: horizon must be positive");
        detail::require(!fixed_lengths.empty(), "regret: need at least one fixed length");
        for (const auto l : fixed_lengths) {
            detail::require(l >= 1 && l <= learned.history, "regret: fixed lengths must lie in [1, history]");
        }
    }
};

struct PolicyCurve {
    std::string name;
    std::vector<double> per_step;
    std::vector<double> cumulative;
    LinearFit linear;
    LinearFit loglog;  // slope is the growth exponent; an all-zero curve fits exponent 0 exactly
    std::string model;  // "linear" for fixed lengths, "loglog" for adaptive policies
};

struct RegretReport {
    std::size_t horizon = 0;
    std::vector<std::size_t> candidates;
    std::vector<PolicyCurve> curves;
    std::vector<std::size_t> optimal_lengths;
    std::vector<double> min_variances;
    std::vector<std::size_t> learned_lengths;

    [[nodiscard]] const PolicyCurve& curve(const std::string& name) const {
        for (const auto& c : curves) {
            if (c.name == name) {
                return c;
            }
        }
        throw ValidationError("regret report has no policy named '" + name + "'");
    }

    [[nodiscard]] std::vector<const PolicyCurve*> fixed_curves() const {
        std::vector<const PolicyCurve*> out;
        for (const auto& c : curves) {
            if (c.model == "linear") {
                out.push_back(&c);
            }
        }
        return out;
    }

    /// Smallest cumulative loss among the fixed-length curves at T.
    [[nodiscard]] double best_fixed_total() const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto* c : fixed_curves()) {
            best = std::min(best, c->cumulative.back());
        }
        return best;
    }
};

[[nodiscard]] inline std::string fixed_policy_name(std::size_t length) { return "fixed_" + std::to_string(length); }

namespace detail {

inline void finish_curve(PolicyCurve& curve) {
    double total = 0.0;
    curve.cumulative.reserve(curve.per_step.size());
    for (const double loss : curve.per_step) {
        total += loss;
        curve.cumulative.push_back(total);
    }
    std::vector<double> t(curve.per_step.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(i + 1);
    }
    if (t.size() >= 2) {
        curve.linear = linear_fit(t, curve.cumulative);
    }
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (curve.cumulative[i] > 0.0) {
            lx.push_back(std::log(t[i]));
            ly.push_back(std::log(curve.cumulative[i]));
        }
    }
    if (lx.size() >= 2) {
        curve.loglog = linear_fit(lx, ly);
    } else {
        curve.loglog = {0.0, 0.0, 1.0};
    }
}

inline central::CentralConfig learned_central_config(const LearnedAdaptiveConfig& cfg, std::size_t max_length) {
    central::CentralConfig c;
    const auto slots = static_cast<std::size_t>(spectral::floor_log2(max_length)) + 1;
    c.schedule.slots = slots;
    c.schedule.k0 = cfg.k0;
    c.schedule.length_cap_scale = static_cast<double>(max_length) / static_cast<double>(cfg.k0);
    c.schedule.threshold = 2 * max_length - 1;
    c.hidden = cfg.hidden;
    c.history_cap = cfg.history;
    c.min_padded = cfg.history;
    c.update.mode = central::UpdateMode::ppo;
    c.update.gamma = 0.0;
    c.update.lambda = 0.0;
    c.update.ppo.epochs = cfg.epochs;
    c.update.ppo.entropy_coef = cfg.entropy_coef;
    c.update.ppo.policy_adam.learning_rate = cfg.learning_rate;
    c.update.ppo.critic_adam.learning_rate = cfg.learning_rate;
    return c;
}

/// The newest `fresh` transitions plus a uniform draw without replacement from the older ones.
inline std::vector<central::CentralTransition> replay_batch(const std::deque<central::CentralTransition>& replay,
                                                           std::size_t fresh, std::size_t size, std::mt19937_64& rng) {
    fresh = std::min(fresh, replay.size());
    const std::size_t older = replay.size() - fresh;
    std::vector<std::size_t> picks(older);
    for (std::size_t i = 0; i < older; ++i) {
        picks[i] = i;
    }
    const std::size_t draw = std::min(older, size > fresh ? size - fresh : 0);
    for (std::size_t i = 0; i < draw; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(approx::uniform01(rng) * static_cast<double>(older - i));
        std::swap(picks[i], picks[std::min(j, older - 1)]);
    }
    std::vector<central::CentralTransition> batch;
    batch.reserve(draw + fresh);
    for (std::size_t i = 0; i < draw; ++i) {
        batch.push_back(replay[picks[i]]);
    }
    for (std::size_t i = older; i < replay.size(); ++i) {
        batch.push_back(replay[i]);
    }
    return batch;
}

}  // namespace detail

/// Runs the latent process for `history` burn-in steps plus T scored steps. Each
/// scored step evaluates every candidate window against the nominal-parameter
/// filter, takes the minimum as the per-step optimum and charges each policy
/// 0.5 * log(var_L / var_min). The learned policy is a central agent acting on the
/// spectral state of the last `history` observations with reward -loss, trained
/// online (the loss of each sampled choice counts).
[[nodiscard]] inline RegretReport regret_experiment(const RegretConfig& config) {
    config.validate();
    const auto& nominal = config.schedule.base;
    std::vector<std::size_t> candidates = config.fixed_lengths;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const std::size_t burn_in = config.learned.history;
    const auto path = simulate_path(config.schedule, burn_in + config.horizon, config.seed);

    RegretReport report;
    report.horizon = config.horizon;
    report.candidates = candidates;
    for (const auto l : config.fixed_lengths) {
        report.curves.push_back({fixed_policy_name(l), {}, {}, {}, {}, "linear"});
    }
    if (config.include_oracle) {
        report.curves.push_back({"oracle", {}, {}, {}, {}, "loglog"});
    }

    std::optional<central::CentralAgent> agent;
    std::vector<std::size_t> learned_lengths_by_slot;
    std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
    std::deque<central::CentralTransition> replay;
    std::size_t since_update = 0;
    if (config.include_learned) {
        const auto slots = static_cast<std::size_t>(spectral::floor_log2(candidates.back())) + 1;
        bool dyadic = candidates.size() == slots;
        for (std::size_t i = 0; dyadic && i < candidates.size(); ++i) {
            dyadic = candidates[i] == (std::size_t{1} << i);
        }
        acllft::detail::require(dyadic, "regret: the learned policy needs the dyadic candidates 1, 2, ..., 2^k");
        agent.emplace(detail::learned_central_config(config.learned, candidates.back()), 1, config.seed + 1);
        report.curves.push_back({"learned", {}, {}, {}, {}, "loglog"});
    }

    const auto curve_index = [&report](const std::string& name) {
        for (std::size_t i = 0; i < report.curves.size(); ++i) {
            if (report.curves[i].name == name) {
                return i;
            }
        }
        return report.curves.size();
    };
    const std::size_t oracle_idx = curve_index("oracle");
    const std::size_t learned_idx = curve_index("learned");

    std::vector<double> variances(candidates.size());
    for (std::size_t step = 1; step <= config.horizon; ++step) {
        const std::size_t s = burn_in + step;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            variances[i] = window_error_variance(path, s, candidates[i], nominal);
        }
        const auto best = argmin_window(candidates, variances);
        report.optimal_lengths.push_back(best.length);
        report.min_variances.push_back(best.variance);
        const auto loss_of = [&](std::size_t length) {
            const auto it = std::find(candidates.begin(), candidates.end(), length);
            return info_loss(variances[static_cast<std::size_t>(it - candidates.begin())], best.variance);
        };
        for (std::size_t c = 0; c < config.fixed_lengths.size(); ++c) {
            report.curves[c].per_step.push_back(loss_of(config.fixed_lengths[c]));
        }
        if (oracle_idx < report.curves.size()) {
            report.curves[oracle_idx].per_step.push_back(loss_of(best.length));
        }
        if (agent) {
            // Decision made from the observations up to and including step s.
            const auto h = static_cast<Eigen::Index>(config.learned.history);
            Eigen::MatrixXd history(h, 1);
            for (Eigen::Index r = 0; r < h; ++r) {
                history(r, 0) = path.observations[s - static_cast<std::size_t>(h) + 1 + static_cast<std::size_t>(r)];
            }
            const Eigen::VectorXd state = agent->state_features(history);
            const auto decision = agent->decide(state, s, &rng);
            const double loss = loss_of(decision.context_length);
            report.curves[learned_idx].per_step.push_back(loss);
            report.learned_lengths.push_back(decision.context_length);
            replay.push_back({state, state, decision.action_index, decision.mask, decision.log_prob,
                              -config.learned.reward_scale * loss, true});
            if (replay.size() > config.learned.replay_window) {
                replay.pop_front();
            }
            if (++since_update >= config.learned.update_interval) {
                agent->update(detail::replay_batch(replay, since_update, config.learned.minibatch, rng));
                since_update = 0;
            }
        }
    }
    for (auto& curve : report.curves) {
        detail::finish_curve(curve);
    }
    return report;
}

}  // namespace acllft::theory
