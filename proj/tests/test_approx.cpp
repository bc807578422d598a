#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "acllft/approx.hpp"

using namespace acllft;

namespace {

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = normal(rng);
    }
    return v;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Central differences of g . net(x) against backprop on random parameter probes.
double worst_parameter_probe(approx::DenseNet net, std::uint64_t seed, int probes) {
    std::mt19937_64 rng(seed);
    const Eigen::VectorXd x = random_vector(rng, net.input_dim());
    const Eigen::VectorXd g = random_vector(rng, net.output_dim());
    const Eigen::VectorXd analytic = net.backprop(x, g);
    std::uniform_int_distribution<Eigen::Index> pick(0, net.parameter_count() - 1);
    double worst = 0.0;
    const double h = 1e-6;
    for (int p = 0; p < probes; ++p) {
        const Eigen::Index i = pick(rng);
        const double saved = net.parameters()(i);
        net.parameters()(i) = saved + h;
        const double up = g.dot(net.forward(x));
        net.parameters()(i) = saved - h;
        const double down = g.dot(net.forward(x));
        net.parameters()(i) = saved;
        const double numeric = (up - down) / (2.0 * h);
        if (std::abs(numeric) < 1e-7 && std::abs(analytic(i)) < 1e-7) {
            continue;  // both zero (dead unit)
        }
        worst = std::max(worst, relative_gap(numeric, analytic(i)));
    }
    return worst;
}

}  // namespace

TEST(DenseNet, ParameterLayoutAndCount) {
    const approx::DenseNet net({3, 4, 2});
    EXPECT_EQ(net.parameter_count(), (3 + 1) * 4 + (4 + 1) * 2);
    EXPECT_EQ(net.layer_count(), 2u);
    EXPECT_EQ(net.input_dim(), 3);
    EXPECT_EQ(net.output_dim(), 2);
}

TEST(DenseNet, ForwardMatchesHandComputation) {
    approx::DenseNet net({2, 2, 1});
    net.weight(0) << 1.0, -1.0, 0.5, 2.0;
    net.bias(0) << 0.0, -1.0;
    net.weight(1) << 3.0, -2.0;
    net.bias(1) << 0.5;
    Eigen::VectorXd x(2);
    x << 1.0, 2.0;
    // hidden = relu([1-2, 0.5+4-1]) = [0, 3.5]; out = -7 + 0.5
    EXPECT_DOUBLE_EQ(net.forward(x)(0), -6.5);
}

TEST(DenseNet, InitializationIsSeededAndBounded) {
    const auto a = approx::DenseNet::initialized({16, 8, 4}, 42);
    const auto b = approx::DenseNet::initialized({16, 8, 4}, 42);
    const auto c = approx::DenseNet::initialized({16, 8, 4}, 43);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_NE(a.parameters(), c.parameters());
    EXPECT_LE(a.weight(0).cwiseAbs().maxCoeff(), 0.25);
}

TEST(DenseNet, RejectsWrongInputWidth) {
    const auto net = approx::DenseNet::initialized({3, 2}, 1);
    EXPECT_THROW((void)net.forward(Eigen::VectorXd::Zero(4)), ValidationError);
    EXPECT_THROW(approx::DenseNet({3}), ValidationError);
}

TEST(DenseNet, BackpropMatchesFiniteDifferencesOnEveryShapeUsed) {
    const std::vector<std::vector<int>> shapes{
        {81, 256, 64, 16, 5},   // Spread policy: obs + 4-step context + length feature
        {128, 256, 64, 16, 1},  // Spread critic
        {112, 256, 64, 16, 6},  // central policy over the spectral state
        {112, 256, 64, 16, 1},  // central critic
        {15, 64, 64, 6},        // theorem-check central policy
        {15, 64, 64, 1},
    };
    std::uint64_t seed = 100;
    for (const auto& shape : shapes) {
        const auto net = approx::DenseNet::initialized(shape, seed++);
        EXPECT_LE(worst_parameter_probe(net, seed++, 100), 1e-4) << "input " << shape.front();
    }
}

TEST(DenseNet, BatchGradientIsSumOfSampleGradients) {
    std::mt19937_64 rng(9);
    const auto net = approx::DenseNet::initialized({5, 7, 3}, 9);
    Eigen::MatrixXd inputs(5, 4);
    Eigen::MatrixXd grads(3, 4);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(net.parameter_count());
    for (Eigen::Index c = 0; c < 4; ++c) {
        inputs.col(c) = random_vector(rng, 5);
        grads.col(c) = random_vector(rng, 3);
        total += net.backprop(inputs.col(c), grads.col(c));
    }
    approx::DenseNet::Cache cache;
    (void)net.forward_batch(inputs, &cache);
    EXPECT_LE((net.backward_batch(cache, grads) - total).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Adam, FirstStepMovesEveryParameterByLearningRate) {
    Eigen::VectorXd params = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd grads(3);
    grads << 2.0, -0.5, 1e-3;
    auto state = approx::AdamState::zeros(3);
    approx::AdamConfig cfg;
    cfg.learning_rate = 0.1;
    approx::adam_step(params, grads, state, cfg);
    // bias-corrected m/sqrt(v) = sign(g) on step one
    EXPECT_NEAR(params(0), -0.1, 1e-6);
    EXPECT_NEAR(params(1), 0.1, 1e-6);
    EXPECT_NEAR(params(2), -0.1, 1e-4);
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, MinimizesQuadratic) {
    Eigen::VectorXd x(2);
    x << 3.0, -2.0;
    auto state = approx::AdamState::zeros(2);
    approx::AdamConfig cfg;
    cfg.learning_rate = 0.05;
    for (int i = 0; i < 2000; ++i) {
        approx::adam_step(x, Eigen::VectorXd(2.0 * x), state, cfg);
    }
    EXPECT_LE(x.norm(), 1e-2);
}

TEST(Adam, NonFiniteGradientIsDivergence) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    auto state = approx::AdamState::zeros(1);
    EXPECT_THROW(approx::adam_step(x, Eigen::VectorXd::Constant(1, std::nan("")), state, {}), DivergenceError);
}

TEST(CategoricalPolicy, MaskedSoftmaxZeroesMaskedEntries) {
    Eigen::VectorXd logits(4);
    logits << 5.0, 1.0, 2.0, 100.0;
    const auto p = approx::masked_softmax(logits, {1, 1, 1, 0});
    EXPECT_EQ(p(3), 0.0);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_NEAR(p(1) / p(2), std::exp(-1.0), 1e-12);
}

TEST(CategoricalPolicy, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd logits = random_vector(rng, 6, 2.0);
        approx::Mask mask(6, 1);
        mask[static_cast<std::size_t>(trial % 6)] = trial % 2;
        const approx::CategoricalPolicy pi(logits, mask);
        const std::size_t action = (static_cast<std::size_t>(trial) + 1) % 6;
        if (!mask[action]) {
            continue;
        }
        const auto lg = pi.log_prob_gradient(action);
        const auto hg = pi.entropy_gradient();
        for (Eigen::Index i = 0; i < 6; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) {
                continue;
            }
            const double h = 1e-6;
            Eigen::VectorXd up = logits;
            Eigen::VectorXd down = logits;
            up(i) += h;
            down(i) -= h;
            const approx::CategoricalPolicy pu(up, mask);
            const approx::CategoricalPolicy pd(down, mask);
            EXPECT_NEAR((pu.log_prob(action) - pd.log_prob(action)) / (2 * h), lg(i), 1e-6);
            EXPECT_NEAR((pu.entropy() - pd.entropy()) / (2 * h), hg(i), 1e-6);
        }
    }
}

TEST(CategoricalPolicy, UniformHasMaximalEntropyAndLowestIndexGreedy) {
    const approx::CategoricalPolicy pi(Eigen::VectorXd::Zero(5), approx::all_available(5));
    EXPECT_NEAR(pi.entropy(), std::log(5.0), 1e-12);
    EXPECT_EQ(pi.greedy(), 0u);
    const approx::CategoricalPolicy masked(Eigen::VectorXd::Zero(3), {0, 1, 1});
    EXPECT_EQ(masked.greedy(), 1u);
    EXPECT_THROW((void)masked.log_prob(0), ValidationError);
}

TEST(CategoricalPolicy, SamplingPassesChiSquare) {
    Eigen::VectorXd logits(4);
    logits << 0.0, 1.0, -1.0, 0.5;
    const approx::CategoricalPolicy pi(logits, {1, 1, 0, 1});
    std::mt19937_64 rng(123);
    std::vector<int> counts(4, 0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        ++counts[pi.sample(rng)];
    }
    EXPECT_EQ(counts[2], 0);
    double chi2 = 0.0;
    for (int k : {0, 1, 3}) {
        const double expected = n * pi.probabilities()(k);
        chi2 += (counts[static_cast<std::size_t>(k)] - expected) * (counts[static_cast<std::size_t>(k)] - expected) / expected;
    }
    EXPECT_LT(chi2, 13.8);  // chi-square, 2 dof, p = 0.001
}

TEST(Attention, WeightsFormADistributionForEveryTeamSize) {
    std::mt19937_64 rng(8);
    const approx::AttentionHeads heads(4, 16, 7, 6, 21);
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<Eigen::VectorXd> agents;
        for (std::size_t i = 0; i < n; ++i) {
            agents.push_back(random_vector(rng, 6, 3.0));
        }
        const auto w = approx::attention_weights(random_vector(rng, 7, 3.0), agents, heads);
        EXPECT_NEAR(w.sum(), 1.0, 1e-9) << "n=" << n;
        EXPECT_GE(w.minCoeff(), 0.0);
    }
}

TEST(Attention, SingleHeadMatchesScaledDotProductOracle) {
    Eigen::MatrixXd q(2, 2);
    q << 1.0, 0.0, 0.0, 1.0;
    Eigen::MatrixXd k(2, 2);
    k << 2.0, 0.0, 0.0, 1.0;
    const approx::AttentionHeads heads({q}, {k});
    Eigen::VectorXd c(2);
    c << 1.0, 1.0;
    std::vector<Eigen::VectorXd> agents{Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 1.0)};
    const auto w = approx::attention_weights(c, agents, heads);
    const double s0 = 2.0 / std::sqrt(2.0);
    const double s1 = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(w(0), std::exp(s0) / (std::exp(s0) + std::exp(s1)), 1e-12);
}

TEST(Attention, PermutingAgentsPermutesWeights) {
    std::mt19937_64 rng(31);
    const approx::AttentionHeads heads(3, 8, 4, 4, 5);
    std::vector<Eigen::VectorXd> agents;
    for (int i = 0; i < 5; ++i) {
        agents.push_back(random_vector(rng, 4));
    }
    const Eigen::VectorXd c = random_vector(rng, 4);
    const auto w = approx::attention_weights(c, agents, heads);
    std::vector<Eigen::VectorXd> reversed(agents.rbegin(), agents.rend());
    const auto wr = approx::attention_weights(c, reversed, heads);
    for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(w(i), wr(4 - i), 1e-12);
    }
}

TEST(Checkpoint, RoundTripRestoresParametersAndOptimizer) {
    auto net = approx::DenseNet::initialized({4, 3, 2}, 3);
    auto state = approx::AdamState::zeros(net.parameter_count());
    approx::adam_step(net.parameters(), Eigen::VectorXd::Ones(net.parameter_count()), state, {});
    const auto json = approx::checkpoint(net, &state);
    const auto loaded = approx::load_checkpoint(nlohmann::json::parse(json.dump()));
    EXPECT_EQ(loaded.net.layer_sizes(), net.layer_sizes());
    EXPECT_EQ(loaded.net.parameters(), net.parameters());
    EXPECT_EQ(loaded.optimizer.step, 1);
    EXPECT_EQ(loaded.optimizer.first_moment, state.first_moment);
}

TEST(Checkpoint, WeightsAreStoredRowMajor) {
    approx::DenseNet net({2, 2});
    net.weight(0) << 1.0, 2.0, 3.0, 4.0;
    const auto json = approx::checkpoint(net);
    EXPECT_EQ(json["weights"][0].get<std::vector<double>>(), (std::vector<double>{1.0, 2.0, 3.0, 4.0}));
    EXPECT_TRUE(json["optimizer_state"].is_null());
}

TEST(Checkpoint, MalformedInputIsValidationError) {
    EXPECT_THROW((void)approx::load_checkpoint(nlohmann::json::parse(R"({"layer_sizes":[2,1]})")), ValidationError);
    auto json = approx::checkpoint(approx::DenseNet({2, 1}));
    json["weights"][0] = std::vector<double>{1.0};
    EXPECT_THROW((void)approx::load_checkpoint(json), ValidationError);
}
