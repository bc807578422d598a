#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "acllft/spectral.hpp"

using namespace acllft;
using spectral::Complex;

namespace {

// Independent oracle: textbook double loop in long double.
std::vector<Complex> naive_dft(const std::vector<double>& x) {
    const std::size_t t = x.size();
    std::vector<Complex> out(t);
    for (std::size_t k = 0; k < t; ++k) {
        long double re = 0.0L;
        long double im = 0.0L;
        for (std::size_t u = 0; u < t; ++u) {
            const long double angle = -2.0L * 3.141592653589793238462643383279502884L * static_cast<long double>(k * u % t) /
                                      static_cast<long double>(t);
            re += x[u] * std::cos(angle);
            im += x[u] * std::sin(angle);
        }
        out[k] = Complex(static_cast<double>(re), static_cast<double>(im));
    }
    return out;
}

std::vector<double> random_signal(std::mt19937_64& rng, std::size_t t) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(t);
    for (auto& v : x) {
        v = normal(rng);
    }
    return x;
}

double energy(const std::vector<double>& x) {
    double s = 0.0;
    for (const double v : x) {
        s += v * v;
    }
    return s;
}

const std::vector<std::size_t> kLengths{8, 16, 32, 64, 128, 256, 512, 1024};

}  // namespace

TEST(Dft, MatchesNaiveOracle) {
    std::mt19937_64 rng(1);
    for (const std::size_t t : {1, 2, 3, 5, 8, 12, 16, 64}) {
        const auto x = random_signal(rng, t);
        const auto fast = spectral::dft(x);
        const auto slow = naive_dft(x);
        for (std::size_t k = 0; k < t; ++k) {
            EXPECT_NEAR(std::abs(fast[k] - slow[k]), 0.0, 1e-9 * (1.0 + std::abs(slow[k]))) << "t=" << t << " k=" << k;
        }
    }
}

TEST(Dft, ImpulseHasFlatSpectrum) {
    std::vector<double> x(16, 0.0);
    x[0] = 1.0;
    for (const auto& c : spectral::dft(x)) {
        EXPECT_NEAR(c.real(), 1.0, 1e-12);
        EXPECT_NEAR(c.imag(), 0.0, 1e-12);
    }
}

TEST(Dft, ConstantConcentratesAtZero) {
    const std::vector<double> x(32, 2.5);
    const auto s = spectral::dft(x);
    EXPECT_NEAR(s[0].real(), 80.0, 1e-9);
    for (std::size_t k = 1; k < s.size(); ++k) {
        EXPECT_NEAR(std::abs(s[k]), 0.0, 1e-9);
    }
}

TEST(Dft, RoundTripParsevalAndSymmetryProperty) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        for (const std::size_t t : kLengths) {
            const auto x = random_signal(rng, t);
            const auto s = spectral::dft(x);
            const auto back = spectral::idft(s);
            double err = 0.0;
            for (std::size_t u = 0; u < t; ++u) {
                err = std::max(err, std::abs(back[u] - x[u]));
            }
            double peak = 0.0;
            for (const double v : x) {
                peak = std::max(peak, std::abs(v));
            }
            EXPECT_LE(err / peak, 1e-9) << "t=" << t;

            double spectral_energy = 0.0;
            for (const auto& c : s) {
                spectral_energy += std::norm(c);
            }
            EXPECT_NEAR(spectral_energy / static_cast<double>(t), energy(x), 1e-9 * energy(x));

            for (std::size_t k = 1; k < t; ++k) {
                EXPECT_NEAR(std::abs(s[k] - std::conj(s[t - k])), 0.0, 1e-9 * (1.0 + std::abs(s[k])));
            }
        }
    }
}

TEST(Dft, IdftRejectsAsymmetricSpectrum) {
    std::vector<Complex> s(8, Complex(0.0, 0.0));
    s[1] = Complex(0.0, 1.0);
    EXPECT_THROW((void)spectral::idft(s), ValidationError);
}

TEST(Dft, LeadingCoefficientsMatchFullTransform) {
    std::mt19937_64 rng(3);
    const auto x = random_signal(rng, 64);
    const auto full = naive_dft(x);
    const auto lead = spectral::leading_coefficients(x, 9);
    for (std::size_t k = 0; k < lead.size(); ++k) {
        EXPECT_NEAR(std::abs(lead[k] - full[k]), 0.0, 1e-9);
    }
}

TEST(WindowBank, ExactModeIsAPartitionAndDisjoint) {
    for (const std::size_t t : kLengths) {
        for (int m = 1; (std::size_t{1} << m) < t / 2; ++m) {
            const auto bank = spectral::build_window_bank(t, m, spectral::WindowMode::exact);
            EXPECT_TRUE(bank.residual_set.empty()) << "t=" << t << " m=" << m;
            for (std::size_t k = 0; k < t; ++k) {
                EXPECT_EQ(bank.coverage(k), 1);
            }
        }
    }
}

TEST(WindowBank, DistinctWindowsHaveZeroProducts) {
    for (const auto mode : {spectral::WindowMode::exact, spectral::WindowMode::literal}) {
        for (const std::size_t t : kLengths) {
            for (int m = 1; (std::size_t{1} << m) < t / 2; ++m) {
                const auto bank = spectral::build_window_bank(t, m, mode);
                std::vector<const std::vector<std::uint8_t>*> windows{&bank.lowpass};
                for (const auto& b : bank.bands) {
                    windows.push_back(&b);
                }
                for (std::size_t a = 0; a < windows.size(); ++a) {
                    for (std::size_t b = a + 1; b < windows.size(); ++b) {
                        for (std::size_t k = 0; k < t; ++k) {
                            ASSERT_EQ((*windows[a])[k] * (*windows[b])[k], 0) << "t=" << t << " m=" << m << " k=" << k;
                        }
                    }
                }
            }
        }
    }
}

TEST(WindowBank, WindowsAreMirrorSymmetric) {
    for (const auto mode : {spectral::WindowMode::exact, spectral::WindowMode::literal}) {
        const auto bank = spectral::build_window_bank(64, 2, mode);
        for (std::size_t k = 1; k < 64; ++k) {
            EXPECT_EQ(bank.lowpass[k], bank.lowpass[64 - k]);
            for (const auto& b : bank.bands) {
                EXPECT_EQ(b[k], b[64 - k]);
            }
        }
    }
}

TEST(WindowBank, LiteralResidualShrinksWithT) {
    const std::vector<std::size_t> lengths{16, 32, 64, 128, 256, 512, 1024};
    for (int m = 1; m <= 2; ++m) {
        const auto trend = spectral::partition_residual_trend(m, lengths);
        for (std::size_t i = 1; i < trend.size(); ++i) {
            EXPECT_LE(trend[i].fraction, trend[i - 1].fraction);
        }
        const double ratio = trend[2].fraction / trend[0].fraction;  // t = 64 over t = 16
        EXPECT_GE(ratio, 0.1);
        EXPECT_LE(ratio, 0.6);
    }
}

TEST(WindowBank, LowpassHoldsLowFrequencies) {
    const auto bank = spectral::build_window_bank(32, 2, spectral::WindowMode::exact);
    for (std::size_t k = 0; k <= 4; ++k) {
        EXPECT_EQ(bank.lowpass[k], 1);
        EXPECT_EQ(bank.lowpass[(32 - k) % 32], 1);
    }
    EXPECT_EQ(bank.lowpass[5], 0);
    EXPECT_EQ(bank.lowpass[16], 0);
}

TEST(WindowBank, RejectsInvalidArguments) {
    EXPECT_THROW((void)spectral::build_window_bank(12, 1, spectral::WindowMode::exact), ValidationError);
    EXPECT_THROW((void)spectral::build_window_bank(16, 0, spectral::WindowMode::exact), ValidationError);
    EXPECT_THROW((void)spectral::build_window_bank(16, 3, spectral::WindowMode::exact), ValidationError);
    EXPECT_THROW((void)spectral::parse_window_mode("dyadic"), ValidationError);
}

TEST(Decompose, ExactModeReconstructsProperty) {
    std::mt19937_64 rng(11);
    for (const std::size_t t : {16, 64, 256}) {
        Eigen::MatrixXd steps(static_cast<Eigen::Index>(t), 3);
        for (Eigen::Index r = 0; r < steps.rows(); ++r) {
            for (Eigen::Index c = 0; c < 3; ++c) {
                steps(r, c) = std::normal_distribution<double>(0.0, 1.0)(rng);
            }
        }
        const spectral::HistoryWindow history(steps);
        const auto bank = spectral::build_window_bank(t, 2, spectral::WindowMode::exact);
        const auto dec = spectral::decompose(history, bank);
        EXPECT_LE((dec.reconstruction() - steps).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Decompose, LiteralErrorEnergyEqualsResidualEnergy) {
    std::mt19937_64 rng(5);
    for (const std::size_t t : {16, 32, 64, 128}) {
        const auto x = random_signal(rng, t);
        Eigen::MatrixXd steps(static_cast<Eigen::Index>(t), 1);
        for (std::size_t u = 0; u < t; ++u) {
            steps(static_cast<Eigen::Index>(u), 0) = x[u];
        }
        const auto bank = spectral::build_window_bank(t, 1, spectral::WindowMode::literal);
        const auto dec = spectral::decompose(spectral::HistoryWindow(steps), bank);
        const double error_energy = (dec.reconstruction() - steps).squaredNorm();
        const auto s = naive_dft(x);
        double residual_energy = 0.0;
        for (const auto k : bank.residual_set) {
            residual_energy += std::norm(s[k]);
        }
        residual_energy /= static_cast<double>(t);
        EXPECT_NEAR(error_energy, residual_energy, 1e-9 * std::max(1.0, residual_energy));
    }
}

TEST(Decompose, PureToneLandsInOneBand) {
    const std::size_t t = 64;
    Eigen::MatrixXd steps(64, 1);
    for (Eigen::Index u = 0; u < 64; ++u) {
        steps(u, 0) = std::cos(2.0 * M_PI * 12.0 * static_cast<double>(u) / 64.0);
    }
    const auto bank = spectral::build_window_bank(t, 2, spectral::WindowMode::exact);
    const auto dec = spectral::decompose(spectral::HistoryWindow(steps), bank);
    // folded frequency 12 -> floor(log2 12) - 2 = 1
    EXPECT_LE(dec.lowpass_component.cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((dec.band_components[1] - steps).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(dec.band_components[0].cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Decompose, RejectsLengthMismatch) {
    const auto bank = spectral::build_window_bank(16, 1, spectral::WindowMode::exact);
    EXPECT_THROW((void)spectral::decompose(spectral::HistoryWindow(Eigen::MatrixXd::Ones(8, 1)), bank), ValidationError);
}

TEST(CentralState, PacksLeadingCoefficientsOfPaddedHistory) {
    std::mt19937_64 rng(2);
    Eigen::MatrixXd steps(5, 2);
    for (Eigen::Index r = 0; r < 5; ++r) {
        steps(r, 0) = std::normal_distribution<double>(0.0, 1.0)(rng);
        steps(r, 1) = std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    const auto state = spectral::central_state(spectral::HistoryWindow(steps), 3);
    EXPECT_EQ(state.padded_t, 8u);
    ASSERT_EQ(state.features.size(), static_cast<Eigen::Index>(spectral::central_state_dimension(2, 3)));
    Eigen::Index i = 0;
    for (Eigen::Index c = 0; c < 2; ++c) {
        std::vector<double> padded(8, 0.0);
        for (Eigen::Index r = 0; r < 5; ++r) {
            padded[static_cast<std::size_t>(3 + r)] = steps(r, c);
        }
        const auto s = naive_dft(padded);
        EXPECT_NEAR(state.features(i++), s[0].real(), 1e-12);
        for (std::size_t k = 1; k < 3; ++k) {
            EXPECT_NEAR(state.features(i++), s[k].real(), 1e-12);
            EXPECT_NEAR(state.features(i++), s[k].imag(), 1e-12);
        }
    }
}

TEST(CentralState, ConstantHistoryHasOnlyDcOnFullWindow) {
    const auto state = spectral::central_state(spectral::HistoryWindow(Eigen::MatrixXd::Constant(16, 1, 0.5)), 4);
    EXPECT_NEAR(state.features(0), 8.0, 1e-12);
    for (Eigen::Index i = 1; i < state.features.size(); ++i) {
        EXPECT_NEAR(state.features(i), 0.0, 1e-12);
    }
}

TEST(CentralState, RespectsMinimumPadding) {
    const auto state = spectral::central_state(spectral::HistoryWindow(Eigen::MatrixXd::Ones(3, 1)), 2, 32);
    EXPECT_EQ(state.padded_t, 32u);
    EXPECT_EQ(state.source_t, 3u);
}

TEST(CentralState, LeftPadKeepsNewestRowLast) {
    Eigen::MatrixXd steps(2, 1);
    steps << 1.0, 2.0;
    const auto padded = spectral::left_pad(steps, 4);
    EXPECT_DOUBLE_EQ(padded(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(padded(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(padded(2, 0), 1.0);
    EXPECT_DOUBLE_EQ(padded(3, 0), 2.0);
    EXPECT_THROW((void)spectral::left_pad(steps, 1), ValidationError);
}
