#pragma once

// Dense feedforward approximators, masked categorical policies, multi-head
// attention scoring and the Adam optimizer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "acllft/error.hpp"

namespace acllft::approx {

using Mask = std::vector<std::uint8_t>;

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
[[nodiscard]] inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// DenseNet

/// Fully connected network, ReLU on hidden layers and identity output.
///
/// Parameters live in one flat vector: for each layer the weight matrix
/// (out x in, column-major) followed by the bias vector.
class DenseNet {
public:
    /// Post-activation values kept by forward_batch for a later backward pass.
    struct Cache {
        std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input batch
        std::vector<Eigen::MatrixXd> pre_activations;
    };

    DenseNet() = default;

    explicit DenseNet(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
        detail::require(sizes_.size() >= 2, "DenseNet needs at least an input and an output layer");
        for (const int width : sizes_) {
            detail::require(width >= 1, "DenseNet layer widths must be positive");
        }
        offsets_.push_back(0);
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const auto in = static_cast<Eigen::Index>(sizes_[l]);
            const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
            offsets_.push_back(offsets_.back() + (in + 1) * out);
        }
        params_ = Eigen::VectorXd::Zero(offsets_.back());
    }

    /// Weights and biases drawn uniformly from +-1/sqrt(fan_in).
    static DenseNet initialized(std::vector<int> layer_sizes, std::uint64_t seed) {
        DenseNet net(std::move(layer_sizes));
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
            auto segment = net.params_.segment(net.offsets_[l], net.offsets_[l + 1] - net.offsets_[l]);
            for (Eigen::Index i = 0; i < segment.size(); ++i) {
                segment(i) = (2.0 * uniform01(rng) - 1.0) * bound;
            }
        }
        return net;
    }

    [[nodiscard]] std::size_t layer_count() const noexcept { return sizes_.size() - 1; }
    [[nodiscard]] const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
    [[nodiscard]] Eigen::Index input_dim() const noexcept { return sizes_.front(); }
    [[nodiscard]] Eigen::Index output_dim() const noexcept { return sizes_.back(); }
    [[nodiscard]] Eigen::Index parameter_count() const noexcept { return params_.size(); }

    [[nodiscard]] Eigen::VectorXd& parameters() noexcept { return params_; }
    [[nodiscard]] const Eigen::VectorXd& parameters() const noexcept { return params_; }

    [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const {
        return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
    }
    [[nodiscard]] Eigen::Map<Eigen::MatrixXd> weight(std::size_t l) {
        return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
    }
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
        return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
    }
    [[nodiscard]] Eigen::Map<Eigen::VectorXd> bias(std::size_t l) {
        return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
    }

    /// Forward pass over a batch stored column-wise (input_dim x batch).
    [[nodiscard]] Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, Cache* cache = nullptr) const {
        detail::require(inputs.rows() == input_dim(), "DenseNet: input has " + std::to_string(inputs.rows()) +
                                                           " features, expected " + std::to_string(input_dim()));
        if (cache != nullptr) {
            cache->activations.assign(1, inputs);
            cache->pre_activations.clear();
        }
        Eigen::MatrixXd current = inputs;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            Eigen::MatrixXd z = weight(l) * current;
            z.colwise() += bias(l);
            const bool hidden = l + 1 < layer_count();
            if (cache != nullptr) {
                cache->pre_activations.push_back(z);
            }
            current = hidden ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
            if (cache != nullptr) {
                cache->activations.push_back(current);
            }
        }
        return current;
    }

    [[nodiscard]] Eigen::VectorXd forward(const Eigen::VectorXd& input) const {
        return forward_batch(Eigen::MatrixXd(input)).col(0);
    }

    /// Gradient of sum(output_gradients .* outputs) with respect to the flat parameters.
    [[nodiscard]] Eigen::VectorXd backward_batch(const Cache& cache, const Eigen::MatrixXd& output_gradients) const {
        detail::require(cache.activations.size() == layer_count() + 1, "DenseNet: cache does not match network depth");
        const Eigen::MatrixXd& last = cache.activations.back();
        detail::require(output_gradients.rows() == last.rows() && output_gradients.cols() == last.cols(),
                        "DenseNet: output gradient shape does not match forward outputs");
        Eigen::VectorXd grads = Eigen::VectorXd::Zero(parameter_count());
        Eigen::MatrixXd delta = output_gradients;
        for (std::size_t l = layer_count(); l-- > 0;) {
            if (l + 1 < layer_count()) {
                delta = delta.cwiseProduct((cache.pre_activations[l].array() > 0.0).cast<double>().matrix());
            }
            const auto in = sizes_[l];
            const auto out = sizes_[l + 1];
            Eigen::Map<Eigen::MatrixXd> dw(grads.data() + offsets_[l], out, in);
            Eigen::Map<Eigen::VectorXd> db(grads.data() + offsets_[l] + out * in, out);
            dw.noalias() = delta * cache.activations[l].transpose();
            db = delta.rowwise().sum();
            if (l > 0) {
                delta = weight(l).transpose() * delta;
            }
        }
        return grads;
    }

    [[nodiscard]] Eigen::VectorXd backprop(const Eigen::VectorXd& input, const Eigen::VectorXd& output_gradient) const {
        detail::require(output_gradient.size() == output_dim(), "DenseNet: output gradient has wrong length");
        Cache cache;
        (void)forward_batch(Eigen::MatrixXd(input), &cache);
        return backward_batch(cache, Eigen::MatrixXd(output_gradient));
    }

private:
    std::vector<int> sizes_;
    std::vector<Eigen::Index> offsets_;
    Eigen::VectorXd params_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    std::int64_t step = 0;

    static AdamState zeros(Eigen::Index n) {
        return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
    }
};

/// One bias-corrected adaptive-moment descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamConfig& config) {
    detail::require(config.learning_rate > 0.0, "adam: learning rate must be positive");
    detail::require(params.size() == grads.size(), "adam: parameter and gradient sizes differ");
    if (state.first_moment.size() != params.size()) {
        state = AdamState::zeros(params.size());
    }
    if (!grads.allFinite()) {
        throw DivergenceError("adam: non-finite gradient");
    }
    state.step += 1;
    state.first_moment = config.beta1 * state.first_moment + (1.0 - config.beta1) * grads;
    state.second_moment = config.beta2 * state.second_moment + (1.0 - config.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    params.array() -= config.learning_rate * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + config.epsilon);
}

// ---------------------------------------------------------------------------
// Categorical policies

/// Softmax restricted to unmasked entries; masked entries get probability exactly 0.
[[nodiscard]] inline Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits, const Mask& mask) {
    detail::require(static_cast<Eigen::Index>(mask.size()) == logits.size(), "masked_softmax: mask length mismatch");
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) {
            peak = std::max(peak, logits(i));
        }
    }
    detail::require(std::isfinite(peak), "masked_softmax: every action is masked (or logits are not finite)");
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(logits.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) {
            probs(i) = std::exp(logits(i) - peak);
            total += probs(i);
        }
    }
    return probs / total;
}

[[nodiscard]] inline Mask all_available(std::size_t n) { return Mask(n, 1); }

class CategoricalPolicy {
public:
    CategoricalPolicy(const Eigen::VectorXd& logits, Mask mask)
        : mask_(std::move(mask)), probs_(masked_softmax(logits, mask_)) {}

    [[nodiscard]] const Eigen::VectorXd& probabilities() const noexcept { return probs_; }
    [[nodiscard]] const Mask& mask() const noexcept { return mask_; }

    [[nodiscard]] double log_prob(std::size_t action) const {
        detail::require(action < mask_.size() && mask_[action], "log_prob: action is masked or out of range");
        return std::log(probs_(static_cast<Eigen::Index>(action)));
    }

    [[nodiscard]] double entropy() const {
        double h = 0.0;
        for (Eigen::Index i = 0; i < probs_.size(); ++i) {
            if (probs_(i) > 0.0) {
                h -= probs_(i) * std::log(probs_(i));
            }
        }
        return h;
    }

    /// Lowest index among the most probable actions.
    [[nodiscard]] std::size_t greedy() const {
        Eigen::Index best = 0;
        for (Eigen::Index i = 0; i < probs_.size(); ++i) {
            if (mask_[static_cast<std::size_t>(i)] && (!mask_[static_cast<std::size_t>(best)] || probs_(i) > probs_(best))) {
                best = i;
            }
        }
        return static_cast<std::size_t>(best);
    }

    [[nodiscard]] std::size_t sample(std::mt19937_64& rng) const {
        const double u = uniform01(rng);
        double cumulative = 0.0;
        std::size_t last = 0;
        for (Eigen::Index i = 0; i < probs_.size(); ++i) {
            if (!mask_[static_cast<std::size_t>(i)]) {
                continue;
            }
            last = static_cast<std::size_t>(i);
            cumulative += probs_(i);
            if (u < cumulative) {
                return last;
            }
        }
        return last;
    }

    /// d log pi(action) / d logits.
    [[nodiscard]] Eigen::VectorXd log_prob_gradient(std::size_t action) const {
        Eigen::VectorXd g = -probs_;
        g(static_cast<Eigen::Index>(action)) += 1.0;
        return g;
    }

    /// d H / d logits; zero on masked entries.
    [[nodiscard]] Eigen::VectorXd entropy_gradient() const {
        const double h = entropy();
        Eigen::VectorXd g = Eigen::VectorXd::Zero(probs_.size());
        for (Eigen::Index i = 0; i < probs_.size(); ++i) {
            if (probs_(i) > 0.0) {
                g(i) = -probs_(i) * (std::log(probs_(i)) + h);
            }
        }
        return g;
    }

private:
    Mask mask_;
    Eigen::VectorXd probs_;
};

// ---------------------------------------------------------------------------
// Multi-head attention scoring

/// Fixed query/key projections, one pair per head.
class AttentionHeads {
public:
    AttentionHeads(std::size_t head_count, std::size_t key_dim, std::size_t query_input_dim, std::size_t key_input_dim,
                   std::uint64_t seed)
        : key_dim_(key_dim) {
        detail::require(head_count >= 1 && key_dim >= 1, "attention: head count and d_k must be positive");
        detail::require(query_input_dim >= 1 && key_input_dim >= 1, "attention: input dims must be positive");
        std::mt19937_64 rng(seed);
        const auto draw = [&rng](Eigen::Index rows, Eigen::Index cols) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
            Eigen::MatrixXd w(rows, cols);
            for (Eigen::Index c = 0; c < cols; ++c) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                    w(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
                }
            }
            return w;
        };
        const auto dk = static_cast<Eigen::Index>(key_dim);
        for (std::size_t g = 0; g < head_count; ++g) {
            query_.push_back(draw(dk, static_cast<Eigen::Index>(query_input_dim)));
            key_.push_back(draw(dk, static_cast<Eigen::Index>(key_input_dim)));
        }
    }

    /// Explicit projections, mainly for tests.
    AttentionHeads(std::vector<Eigen::MatrixXd> query, std::vector<Eigen::MatrixXd> key)
        : query_(std::move(query)), key_(std::move(key)) {
        detail::require(!query_.empty() && query_.size() == key_.size(), "attention: need one query and key per head");
        key_dim_ = static_cast<std::size_t>(query_.front().rows());
        for (std::size_t g = 0; g < query_.size(); ++g) {
            detail::require(static_cast<std::size_t>(query_[g].rows()) == key_dim_ &&
                                static_cast<std::size_t>(key_[g].rows()) == key_dim_,
                            "attention: all heads must share d_k");
        }
    }

    [[nodiscard]] std::size_t head_count() const noexcept { return query_.size(); }
    [[nodiscard]] std::size_t key_dim() const noexcept { return key_dim_; }
    [[nodiscard]] const Eigen::MatrixXd& query(std::size_t g) const { return query_[g]; }
    [[nodiscard]] const Eigen::MatrixXd& key(std::size_t g) const { return key_[g]; }

private:
    std::size_t key_dim_ = 0;
    std::vector<Eigen::MatrixXd> query_;
    std::vector<Eigen::MatrixXd> key_;
};

/// Per-agent weights: softmax over agents of Q_c . K_i / sqrt(d_k) per head, averaged over heads.
[[nodiscard]] inline Eigen::VectorXd attention_weights(const Eigen::VectorXd& central_feature,
                                                       std::span<const Eigen::VectorXd> agent_features,
                                                       const AttentionHeads& heads) {
    detail::require(!agent_features.empty(), "attention: need at least one agent");
    const auto n = static_cast<Eigen::Index>(agent_features.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(heads.key_dim()));
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(n);
    for (std::size_t g = 0; g < heads.head_count(); ++g) {
        detail::require(heads.query(g).cols() == central_feature.size(), "attention: central feature dim mismatch");
        const Eigen::VectorXd q = heads.query(g) * central_feature;
        Eigen::VectorXd scores(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& f = agent_features[static_cast<std::size_t>(i)];
            detail::require(heads.key(g).cols() == f.size(), "attention: agent feature dim mismatch");
            scores(i) = q.dot(heads.key(g) * f) * scale;
        }
        weights += masked_softmax(scores, all_available(static_cast<std::size_t>(n)));
    }
    return weights / static_cast<double>(heads.head_count());
}

// ---------------------------------------------------------------------------
// Checkpoints

[[nodiscard]] inline nlohmann::json to_json(const Eigen::VectorXd& v) {
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

[[nodiscard]] inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

/// {layer_sizes, weights: per-layer row-major lists, biases, optimizer_state}.
[[nodiscard]] inline nlohmann::json checkpoint(const DenseNet& net, const AdamState* optimizer = nullptr) {
    nlohmann::json out;
    out["layer_sizes"] = net.layer_sizes();
    out["weights"] = nlohmann::json::array();
    out["biases"] = nlohmann::json::array();
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const Eigen::MatrixXd w = net.weight(l);
        std::vector<double> row_major;
        row_major.reserve(static_cast<std::size_t>(w.size()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                row_major.push_back(w(r, c));
            }
        }
        out["weights"].push_back(row_major);
        out["biases"].push_back(to_json(net.bias(l)));
    }
    if (optimizer != nullptr && optimizer->first_moment.size() == net.parameter_count()) {
        out["optimizer_state"] = {{"step", optimizer->step},
                                  {"first_moment", to_json(optimizer->first_moment)},
                                  {"second_moment", to_json(optimizer->second_moment)}};
    } else {
        out["optimizer_state"] = nullptr;
    }
    return out;
}

struct LoadedNet {
    DenseNet net;
    AdamState optimizer;
};

[[nodiscard]] inline LoadedNet load_checkpoint(const nlohmann::json& j) {
    try {
        DenseNet net(j.at("layer_sizes").get<std::vector<int>>());
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        detail::require(weights.size() == net.layer_count() && biases.size() == net.layer_count(),
                        "checkpoint: layer count does not match layer_sizes");
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const auto w = weights[l].get<std::vector<double>>();
            const auto b = biases[l].get<std::vector<double>>();
            auto wl = net.weight(l);
            auto bl = net.bias(l);
            detail::require(static_cast<Eigen::Index>(w.size()) == wl.size(),
                            "checkpoint: weight count mismatch in layer " + std::to_string(l));
            detail::require(static_cast<Eigen::Index>(b.size()) == bl.size(),
                            "checkpoint: bias count mismatch in layer " + std::to_string(l));
            for (Eigen::Index r = 0; r < wl.rows(); ++r) {
                for (Eigen::Index c = 0; c < wl.cols(); ++c) {
                    wl(r, c) = w[static_cast<std::size_t>(r * wl.cols() + c)];
                }
            }
            bl = Eigen::Map<const Eigen::VectorXd>(b.data(), bl.size());
        }
        AdamState state = AdamState::zeros(net.parameter_count());
        const auto& opt = j.at("optimizer_state");
        if (!opt.is_null()) {
            state.step = opt.at("step").get<std::int64_t>();
            state.first_moment = vector_from_json(opt.at("first_moment"));
            state.second_moment = vector_from_json(opt.at("second_moment"));
            detail::require(state.first_moment.size() == net.parameter_count() &&
                                state.second_moment.size() == net.parameter_count(),
                            "checkpoint: optimizer state size mismatch");
        }
        return {std::move(net), std::move(state)};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
    }
}

}  // namespace acllft::approx
