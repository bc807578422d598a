#pragma once

// Discrete Fourier transform, dyadic window banks over discrete frequencies,
// band decomposition and the truncated spectral state used by the central agent.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "acllft/error.hpp"

namespace acllft::spectral {

using Complex = std::complex<double>;

/// Imaginary residue tolerated (and discarded) when inverting a spectrum to a real signal.
inline constexpr double kImagResidueLimit = 1e-6;

[[nodiscard]] constexpr bool is_power_of_two(std::size_t n) noexcept {
    return n != 0 && (n & (n - 1)) == 0;
}

/// floor(log2 n) for n >= 1.
[[nodiscard]] constexpr int floor_log2(std::size_t n) noexcept {
    int result = -1;
    while (n != 0) {
        n >>= 1;
        ++result;
    }
    return result;
}

[[nodiscard]] constexpr std::size_t next_power_of_two(std::size_t n) noexcept {
    std::size_t p = 1;
    while (p < n) {
        p <<= 1;
    }
    return p;
}

namespace detail {

// Direct O(t^2) summation with an exact-index twiddle table, sign = -1 forward, +1 inverse.
inline std::vector<Complex> direct_transform(std::span<const Complex> input, int sign) {
    const std::size_t t = input.size();
    std::vector<Complex> twiddle(t);
    for (std::size_t n = 0; n < t; ++n) {
        const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(t);
        twiddle[n] = Complex(std::cos(angle), std::sin(angle));
    }
    std::vector<Complex> output(t);
    for (std::size_t k = 0; k < t; ++k) {
        Complex acc(0.0, 0.0);
        std::size_t index = 0;
        for (std::size_t u = 0; u < t; ++u) {
            acc += input[u] * twiddle[index];
            index += k;
            if (index >= t) {
                index %= t;
            }
        }
        output[k] = acc;
    }
    return output;
}

}  // namespace detail

/// S[k] = sum_u s[u] exp(-i 2 pi k u / t).
[[nodiscard]] inline std::vector<Complex> dft(std::span<const double> signal) {
    acllft::detail::require(!signal.empty(), "dft: signal must contain at least one sample");
    std::vector<Complex> input(signal.size());
    for (std::size_t u = 0; u < signal.size(); ++u) {
        acllft::detail::require(std::isfinite(signal[u]), "dft: non-finite sample at index " + std::to_string(u));
        input[u] = Complex(signal[u], 0.0);
    }
    return detail::direct_transform(input, -1);
}

/// Complex-valued inverse transform, (1/t) sum_k S[k] exp(+i 2 pi k u / t).
[[nodiscard]] inline std::vector<Complex> idft_complex(std::span<const Complex> coefficients) {
    acllft::detail::require(!coefficients.empty(), "idft: spectrum must contain at least one coefficient");
    auto out = detail::direct_transform(coefficients, +1);
    const double scale = 1.0 / static_cast<double>(coefficients.size());
    for (auto& value : out) {
        value *= scale;
    }
    return out;
}

/// Real inverse transform. The imaginary residue, measured relative to max(1, max|x|),
/// is discarded; above kImagResidueLimit the spectrum is not conjugate symmetric and
/// the call fails.
[[nodiscard]] inline std::vector<double> idft(std::span<const Complex> coefficients) {
    const auto full = idft_complex(coefficients);
    double scale = 1.0;
    double residue = 0.0;
    for (const auto& value : full) {
        scale = std::max(scale, std::abs(value));
        residue = std::max(residue, std::abs(value.imag()));
    }
    if (residue / scale > kImagResidueLimit) {
        throw ValidationError("idft: spectrum is not conjugate symmetric (imaginary residue " +
                              std::to_string(residue / scale) + ")");
    }
    std::vector<double> real(full.size());
    std::transform(full.begin(), full.end(), real.begin(), [](const Complex& c) { return c.real(); });
    return real;
}

/// The first `count` DFT coefficients, O(count * t).
[[nodiscard]] inline std::vector<Complex> leading_coefficients(std::span<const double> signal, std::size_t count) {
    const std::size_t t = signal.size();
    acllft::detail::require(t >= 1 && count <= t, "leading_coefficients: count exceeds signal length");
    std::vector<Complex> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        Complex acc(0.0, 0.0);
        std::size_t index = 0;
        for (std::size_t u = 0; u < t; ++u) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(index) / static_cast<double>(t);
            acc += signal[u] * Complex(std::cos(angle), std::sin(angle));
            index = (index + k) % t;
        }
        out[k] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Window bank

enum class WindowMode { literal, exact };

[[nodiscard]] inline std::string_view to_string(WindowMode mode) noexcept {
    return mode == WindowMode::literal ? "literal" : "exact";
}

[[nodiscard]] inline WindowMode parse_window_mode(std::string_view text) {
    if (text == "literal") {
        return WindowMode::literal;
    }
    if (text == "exact") {
        return WindowMode::exact;
    }
    throw ValidationError("unknown window mode '" + std::string(text) + "' (expected literal|exact)");
}

/// Low-pass window and dyadic band-pass windows over frequency indices 0..t-1.
struct WindowBank {
    std::size_t t = 0;
    int levels = 0;  // J with t = 2^J
    int m = 0;
    WindowMode mode = WindowMode::exact;
    std::vector<std::uint8_t> lowpass;
    std::vector<std::vector<std::uint8_t>> bands;  // j = 0 .. J-1-m
    std::vector<std::size_t> residual_set;         // k where lowpass + sum(bands) != 1

    [[nodiscard]] int coverage(std::size_t k) const {
        int total = lowpass[k];
        for (const auto& band : bands) {
            total += band[k];
        }
        return total;
    }

    [[nodiscard]] double residual_fraction() const {
        return static_cast<double>(residual_set.size()) / static_cast<double>(t);
    }
};

/// Builds the bank for t = 2^J and truncation level m.
///
/// exact: each index is assigned through its folded frequency f = min(k, t-k);
///   f <= 2^m goes to the low-pass window, otherwise to band min(floor(log2 f) - m, J-1-m).
/// literal: the low-pass window is {k <= 2^m or k >= t - 2^m}; band j takes
///   2^(j+m) <= k < 2^(j+m+1) on the positive half (k < t/2) and
///   t - 2^(j+m+1) < k <= t - 2^(j+m) on the mirrored half (k > t/2). The low-pass
///   window wins at k = 2^m and k = t - 2^m. Nyquist (k = t/2) lies on neither half
///   and is the only index left uncovered.
[[nodiscard]] inline WindowBank build_window_bank(std::size_t t, int m, WindowMode mode) {
    acllft::detail::require(is_power_of_two(t), "window bank: t=" + std::to_string(t) + " is not a power of two");
    const int levels = floor_log2(t);
    acllft::detail::require(levels >= 2, "window bank: t must be at least 4");
    acllft::detail::require(m > 0 && m < levels, "window bank: m=" + std::to_string(m) + " outside (0, J)");
    const std::size_t cutoff = std::size_t{1} << m;
    acllft::detail::require(cutoff < t / 2, "window bank: 2^m must be below t/2");

    WindowBank bank;
    bank.t = t;
    bank.levels = levels;
    bank.m = m;
    bank.mode = mode;
    bank.lowpass.assign(t, 0);
    const int band_count = levels - m;
    bank.bands.assign(static_cast<std::size_t>(band_count), std::vector<std::uint8_t>(t, 0));

    for (std::size_t k = 0; k < t; ++k) {
        if (k <= cutoff || k >= t - cutoff) {
            bank.lowpass[k] = 1;
        }
    }

    if (mode == WindowMode::exact) {
        for (std::size_t k = 0; k < t; ++k) {
            const std::size_t folded = std::min(k, t - k);
            if (folded <= cutoff) {
                continue;
            }
            const int j = std::min(floor_log2(folded) - m, band_count - 1);
            bank.bands[static_cast<std::size_t>(j)][k] = 1;
        }
    } else {
        const std::size_t half = t / 2;
        for (int j = 0; j < band_count; ++j) {
            const std::size_t lo = std::size_t{1} << (j + m);
            const std::size_t hi = lo << 1;
            auto& band = bank.bands[static_cast<std::size_t>(j)];
            for (std::size_t k = 0; k < t; ++k) {
                if (bank.lowpass[k]) {
                    continue;
                }
                const bool positive = k < half && k >= lo && k < hi;
                const bool mirrored = k > half && k + hi > t && k + lo <= t;
                if (positive || mirrored) {
                    band[k] = 1;
                }
            }
        }
    }

    for (std::size_t k = 0; k < t; ++k) {
        if (bank.coverage(k) != 1) {
            bank.residual_set.push_back(k);
        }
    }
    return bank;
}

struct ResidualPoint {
    std::size_t t = 0;
    std::size_t count = 0;
    double fraction = 0.0;
};

/// Residual-set density |E|/t for each length at a fixed truncation level.
[[nodiscard]] inline std::vector<ResidualPoint> partition_residual_trend(int m, std::span<const std::size_t> lengths,
                                                                         WindowMode mode = WindowMode::literal) {
    std::vector<ResidualPoint> trend;
    trend.reserve(lengths.size());
    for (const std::size_t t : lengths) {
        const auto bank = build_window_bank(t, m, mode);
        trend.push_back({t, bank.residual_set.size(), bank.residual_fraction()});
    }
    return trend;
}

// ---------------------------------------------------------------------------
// Histories and decomposition

/// Per-step global states, oldest row first.
class HistoryWindow {
public:
    HistoryWindow() = default;

    explicit HistoryWindow(Eigen::MatrixXd steps) : steps_(std::move(steps)) {
        acllft::detail::require(steps_.rows() >= 1 && steps_.cols() >= 1, "history window must be at least 1x1");
        acllft::detail::require(steps_.allFinite(), "history window contains non-finite entries");
    }

    [[nodiscard]] std::size_t t() const noexcept { return static_cast<std::size_t>(steps_.rows()); }
    [[nodiscard]] std::size_t d() const noexcept { return static_cast<std::size_t>(steps_.cols()); }
    [[nodiscard]] const Eigen::MatrixXd& steps() const noexcept { return steps_; }

private:
    Eigen::MatrixXd steps_;
};

struct SpectralDecomposition {
    std::vector<std::vector<Complex>> coefficients;  // one spectrum per feature channel
    Eigen::MatrixXd lowpass_component;               // t x d
    std::vector<Eigen::MatrixXd> band_components;    // one t x d matrix per band

    [[nodiscard]] Eigen::MatrixXd reconstruction() const {
        Eigen::MatrixXd total = lowpass_component;
        for (const auto& band : band_components) {
            total += band;
        }
        return total;
    }
};

namespace detail {

inline std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out[static_cast<std::size_t>(r)] = m(r, c);
    }
    return out;
}

inline std::vector<double> masked_inverse(const std::vector<Complex>& spectrum, const std::vector<std::uint8_t>& window) {
    std::vector<Complex> filtered(spectrum.size());
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        filtered[k] = window[k] ? spectrum[k] : Complex(0.0, 0.0);
    }
    return idft(filtered);
}

}  // namespace detail

/// Low-pass and per-band components of every feature channel.
[[nodiscard]] inline SpectralDecomposition decompose(const HistoryWindow& history, const WindowBank& bank) {
    acllft::detail::require(history.t() == bank.t, "decompose: history length " + std::to_string(history.t()) +
                                                       " does not match window bank length " + std::to_string(bank.t));
    const auto t = static_cast<Eigen::Index>(history.t());
    const auto d = static_cast<Eigen::Index>(history.d());

    SpectralDecomposition out;
    out.lowpass_component = Eigen::MatrixXd::Zero(t, d);
    out.band_components.assign(bank.bands.size(), Eigen::MatrixXd::Zero(t, d));
    for (Eigen::Index c = 0; c < d; ++c) {
        const auto signal = detail::column(history.steps(), c);
        out.coefficients.push_back(dft(signal));
        const auto& spectrum = out.coefficients.back();
        const auto low = detail::masked_inverse(spectrum, bank.lowpass);
        for (Eigen::Index u = 0; u < t; ++u) {
            out.lowpass_component(u, c) = low[static_cast<std::size_t>(u)];
        }
        for (std::size_t j = 0; j < bank.bands.size(); ++j) {
            const auto band = detail::masked_inverse(spectrum, bank.bands[j]);
            for (Eigen::Index u = 0; u < t; ++u) {
                out.band_components[j](u, c) = band[static_cast<std::size_t>(u)];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Central-agent state

struct CentralState {
    Eigen::VectorXd features;
    std::size_t k0 = 0;
    std::size_t source_t = 0;
    std::size_t padded_t = 0;
};

[[nodiscard]] constexpr std::size_t central_state_dimension(std::size_t d, std::size_t k0) noexcept {
    return d * (2 * k0 - 1);
}

/// Prepends zero rows so the history spans `length` steps; the newest row stays last.
[[nodiscard]] inline Eigen::MatrixXd left_pad(const Eigen::MatrixXd& steps, std::size_t length) {
    const auto rows = static_cast<Eigen::Index>(length);
    acllft::detail::require(rows >= steps.rows(), "left_pad: target shorter than history");
    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(rows, steps.cols());
    padded.bottomRows(steps.rows()) = steps;
    return padded;
}

/// Truncated low-frequency representation of a history.
///
/// Each channel is left-padded to t_pad = next power of two >= max(t, 2*k0, min_padded)
/// and transformed; the state packs Re S[0], then (Re S[k], Im S[k]) for k = 1..k0-1.
/// Channels are concatenated, so the dimension is d * (2*k0 - 1).
[[nodiscard]] inline CentralState central_state(const HistoryWindow& history, std::size_t k0,
                                                std::size_t min_padded = 0) {
    acllft::detail::require(k0 >= 1, "central_state: k0 must be at least 1");
    const std::size_t padded_t = next_power_of_two(std::max({history.t(), 2 * k0, min_padded}));
    acllft::detail::require(k0 <= padded_t / 2, "central_state: k0 exceeds the Nyquist index of the padded window");
    const Eigen::MatrixXd padded = left_pad(history.steps(), padded_t);

    CentralState state;
    state.k0 = k0;
    state.source_t = history.t();
    state.padded_t = padded_t;
    state.features.resize(static_cast<Eigen::Index>(central_state_dimension(history.d(), k0)));
    Eigen::Index out = 0;
    for (Eigen::Index c = 0; c < padded.cols(); ++c) {
        const auto spectrum = leading_coefficients(detail::column(padded, c), k0);
        state.features(out++) = spectrum[0].real();
        for (std::size_t k = 1; k < k0; ++k) {
            state.features(out++) = spectrum[k].real();
            state.features(out++) = spectrum[k].imag();
        }
    }
    return state;
}

}  // namespace acllft::spectral
