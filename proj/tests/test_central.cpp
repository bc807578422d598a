#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "acllft/central.hpp"

using namespace acllft;

namespace {

std::vector<std::size_t> lengths_at(const central::ActionScheduleConfig& cfg, std::size_t t) {
    return central::ActionSchedule(cfg).at(t).lengths;
}

}  // namespace

TEST(ActionSchedule, SpreadRowAtStepEight) {
    central::ActionScheduleConfig cfg;
    cfg.slots = 5;
    cfg.k0 = 4;
    cfg.threshold = 7;
    EXPECT_EQ(lengths_at(cfg, 8), (std::vector<std::size_t>{0, 0, 1, 2, 4}));
}

TEST(ActionSchedule, FootballRowAtStep128) {
    central::ActionScheduleConfig cfg;
    cfg.slots = 19;
    cfg.k0 = 64;
    cfg.threshold = 127;
    std::vector<std::size_t> expected(12, 0);
    for (std::size_t l = 1; l <= 64; l <<= 1) {
        expected.push_back(l);
    }
    EXPECT_EQ(lengths_at(cfg, 128), expected);
}

TEST(ActionSchedule, EarlyStepsGrowDyadically) {
    const central::ActionScheduleConfig cfg;  // M = 5, k0 = 4
    EXPECT_EQ(lengths_at(cfg, 0), (std::vector<std::size_t>{0, 0, 0, 0, 0}));
    EXPECT_EQ(lengths_at(cfg, 1), (std::vector<std::size_t>{0, 0, 0, 0, 0}));
    EXPECT_EQ(lengths_at(cfg, 2), (std::vector<std::size_t>{0, 0, 0, 0, 1}));
    EXPECT_EQ(lengths_at(cfg, 3), (std::vector<std::size_t>{0, 0, 0, 0, 1}));
    EXPECT_EQ(lengths_at(cfg, 4), (std::vector<std::size_t>{0, 0, 0, 1, 2}));
    EXPECT_EQ(lengths_at(cfg, 7), (std::vector<std::size_t>{0, 0, 0, 1, 2}));
    EXPECT_EQ(lengths_at(cfg, 25), (std::vector<std::size_t>{0, 0, 1, 2, 4}));
}

TEST(ActionSchedule, LengthNeverExceedsAvailableHistoryProperty) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        central::ActionScheduleConfig cfg;
        cfg.k0 = std::size_t{1} << (rng() % 6);
        cfg.slots = static_cast<std::size_t>(cfg.cap_exponent()) + 1 + rng() % 4;
        cfg.threshold = 2 * cfg.k0 - 1;
        const central::ActionSchedule schedule(cfg);
        const std::size_t t = rng() % 300;
        const auto a = schedule.at(t);
        ASSERT_EQ(a.lengths.size(), cfg.slots);
        EXPECT_EQ(a.mask[0], 1);
        for (std::size_t i = 0; i < cfg.slots; ++i) {
            EXPECT_LE(a.lengths[i], std::max<std::size_t>(t / 2, 0));
            EXPECT_LE(a.lengths[i], schedule.max_length());
            EXPECT_EQ(a.mask[i], a.lengths[i] > 0 || i == 0 ? 1 : 0);
            if (i > 0) {
                EXPECT_GE(a.lengths[i], a.lengths[i - 1]);
            }
        }
        if (t > cfg.threshold) {
            // Every dyadic length plus "no context" when a spare slot is left for it.
            EXPECT_EQ(a.available_count(), std::min(cfg.slots, static_cast<std::size_t>(cfg.cap_exponent()) + 2));
        }
    }
}

TEST(ActionSchedule, ValidatesConfiguration) {
    central::ActionScheduleConfig too_few;
    too_few.slots = 2;
    EXPECT_THROW(central::ActionSchedule{too_few}, ValidationError);
    central::ActionScheduleConfig early;
    early.threshold = 3;  // at t = 4 only {1, 2} exist
    EXPECT_THROW(central::ActionSchedule{early}, ValidationError);
    central::ActionScheduleConfig scaled;
    scaled.length_cap_scale = 2.0;
    scaled.threshold = 15;
    EXPECT_EQ(central::ActionSchedule(scaled).max_length(), 8u);
}

TEST(SelectContext, CopiesNewestRowsIntoZeroPaddedWindow) {
    Eigen::MatrixXd history(5, 2);
    for (Eigen::Index r = 0; r < 5; ++r) {
        history(r, 0) = r;
        history(r, 1) = 10 * r;
    }
    const auto ctx = central::select_context(history, 2, 4);
    EXPECT_EQ(ctx.window.rows(), 4);
    EXPECT_EQ(ctx.window.row(0).norm(), 0.0);
    EXPECT_EQ(ctx.window.row(1).norm(), 0.0);
    EXPECT_DOUBLE_EQ(ctx.window(2, 0), 3.0);
    EXPECT_DOUBLE_EQ(ctx.window(3, 1), 40.0);
    EXPECT_DOUBLE_EQ(ctx.length_feature, 0.5);
    const auto flat = ctx.flattened();
    EXPECT_EQ(flat.size(), 8);
    EXPECT_DOUBLE_EQ(flat(4), 3.0);
    EXPECT_DOUBLE_EQ(flat(5), 30.0);
}

TEST(SelectContext, ZeroLengthGivesEmptyContext) {
    const auto ctx = central::select_context(Eigen::MatrixXd(0, 3), 0, 4);
    EXPECT_EQ(ctx.window.norm(), 0.0);
    EXPECT_EQ(ctx.chosen_length, 0u);
}

TEST(SelectContext, RejectsLengthBeyondHistory) {
    EXPECT_THROW((void)central::select_context(Eigen::MatrixXd::Ones(2, 1), 4, 4), ValidationError);
    EXPECT_THROW((void)central::select_context(Eigen::MatrixXd::Ones(8, 1), 8, 4), ValidationError);
}

TEST(SelectContext, LowpassKeepsConstantsAndDropsAlternation) {
    Eigen::MatrixXd history(4, 2);
    history << 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0;
    const auto ctx = central::select_lowpass_context(history, 4, 4, 1);
    for (Eigen::Index r = 0; r < 4; ++r) {
        EXPECT_NEAR(ctx.window(r, 0), 1.0, 1e-12);
        EXPECT_NEAR(ctx.window(r, 1), 0.0, 1e-12);
    }
    const auto full = central::select_lowpass_context(history, 4, 4, 3);
    EXPECT_LE((full.window - history).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CentralReward, IsConvexCombination) {
    const std::vector<double> w{0.25, 0.25, 0.5};
    const std::vector<double> r{1.0, -1.0, 4.0};
    EXPECT_DOUBLE_EQ(central::central_reward(w, r), 2.0);
}

TEST(CentralReward, UniformWeightsGiveMeanProperty) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 8;
        std::vector<double> r(n);
        std::vector<double> w(n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = normal(rng);
            w[i] = approx::uniform01(rng) + 1e-3;
            total += w[i];
        }
        for (auto& x : w) {
            x /= total;
        }
        const double rc = central::central_reward(w, r);
        EXPECT_GE(rc, *std::min_element(r.begin(), r.end()) - 1e-12);
        EXPECT_LE(rc, *std::max_element(r.begin(), r.end()) + 1e-12);
    }
}

TEST(CentralReward, RejectsInvalidWeights) {
    const std::vector<double> r{1.0, 2.0};
    EXPECT_THROW((void)central::central_reward(std::vector<double>{0.5, 0.6}, r), ValidationError);
    EXPECT_THROW((void)central::central_reward(std::vector<double>{1.5, -0.5}, r), ValidationError);
    EXPECT_THROW((void)central::central_reward(std::vector<double>{1.0}, r), ValidationError);
}

TEST(Decide, NeverPicksMaskedSlots) {
    central::CentralConfig cfg;
    cfg.hidden = {8};
    const central::CentralAgent agent(cfg, 2, 1);
    std::mt19937_64 rng(4);
    const Eigen::VectorXd state = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(agent.state_dimension()));
    for (std::size_t t = 0; t < 12; ++t) {
        for (int k = 0; k < 50; ++k) {
            const auto d = agent.decide(state, t, &rng);
            EXPECT_EQ(d.mask[d.action_index], 1);
            EXPECT_LE(d.context_length, t / 2);
            EXPECT_NEAR(d.probabilities.sum(), 1.0, 1e-12);
        }
    }
    const auto g1 = agent.decide(state, 9, nullptr);
    const auto g2 = agent.decide(state, 9, nullptr);
    EXPECT_EQ(g1.action_index, g2.action_index);
}

TEST(CentralAgent, EmptyHistoryGivesZeroStateAndScaleIsApplied) {
    central::CentralConfig cfg;
    cfg.hidden = {4};
    const central::CentralAgent agent(cfg, 3, 2);
    EXPECT_EQ(agent.state_dimension(), 21u);
    EXPECT_EQ(agent.state_features(Eigen::MatrixXd(0, 3)).norm(), 0.0);
    const auto f = agent.state_features(Eigen::MatrixXd::Ones(8, 3));
    EXPECT_NEAR(f(0), 8.0 / std::sqrt(8.0), 1e-12);
}

TEST(CentralUpdate, TdSingleTransitionMatchesHandArithmetic) {
    approx::DenseNet policy({1, 2});
    approx::DenseNet critic({1, 1});
    critic.bias(0)(0) = 0.5;
    central::CentralTransition tr;
    tr.state = Eigen::VectorXd::Constant(1, 1.0);
    tr.next_state = Eigen::VectorXd::Constant(1, 1.0);
    tr.action = 1;
    tr.mask = {1, 1};
    tr.reward = 2.0;
    central::CentralUpdateConfig cfg;
    cfg.mode = central::UpdateMode::td;
    cfg.gamma = 0.5;
    cfg.step_size = 0.1;
    approx::AdamState ps;
    approx::AdamState cs;
    const std::vector<central::CentralTransition> batch{tr};
    const auto stats = central::central_update(batch, policy, ps, critic, cs, cfg);
    // delta = 2 + 0.5 * 0.5 - 0.5 = 1.75
    EXPECT_NEAR(stats.mean_td_error, 1.75, 1e-12);
    // d log pi(1) / d logit1 = 1 - 0.5 at uniform logits; input 1.0
    EXPECT_NEAR(policy.weight(0)(1, 0), 0.1 * 0.5 * 1.75, 1e-12);
    EXPECT_NEAR(policy.weight(0)(0, 0), -0.1 * 0.5 * 1.75, 1e-12);
    EXPECT_NEAR(critic.bias(0)(0), 0.5 + 0.1 * 1.75, 1e-12);
}

TEST(CentralUpdate, PpoRaisesProbabilityOfRewardedSlot) {
    central::CentralConfig cfg;
    cfg.hidden = {16};
    cfg.update.ppo.epochs = 5;
    central::CentralAgent agent(cfg, 1, 9);
    const Eigen::VectorXd s = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(agent.state_dimension()), 0.3);
    std::mt19937_64 rng(1);
    const double before = agent.decide(s, 20, nullptr).probabilities(4);
    for (int round = 0; round < 30; ++round) {
        std::vector<central::CentralTransition> batch;
        for (int k = 0; k < 16; ++k) {
            const auto d = agent.decide(s, 20, &rng);
            batch.push_back({s, s, d.action_index, d.mask, d.log_prob, d.context_length == 4 ? 1.0 : 0.0, true});
        }
        (void)agent.update(batch);
    }
    EXPECT_GT(agent.decide(s, 20, nullptr).probabilities(4), before + 0.1);
}

TEST(CentralUpdate, RejectsEmptyBatchAndBadModes) {
    central::CentralConfig cfg;
    cfg.hidden = {4};
    central::CentralAgent agent(cfg, 1, 1);
    EXPECT_THROW((void)agent.update({}), ValidationError);
    EXPECT_THROW((void)central::parse_update_mode("sarsa"), ValidationError);
    EXPECT_THROW((void)central::parse_context_mode("freq"), ValidationError);
}
