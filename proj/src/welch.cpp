#include "dbvae/welch.hpp"

#include <cmath>
#include <string>

namespace dbvae {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<double> make_window(WelchWindow kind, std::size_t length) {
    std::vector<double> w(length, 1.0);
    if (kind == WelchWindow::Hann) {
        // Periodic Hann, the spectral-analysis convention.
        for (std::size_t n = 0; n < length; ++n) {
            w[n] = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(n) /
                                         static_cast<double>(length)));
        }
    }
    return w;
}

}  // namespace

std::size_t welch_bin_count(const WelchConfig& config, double sample_rate_hz) {
    const double spacing = sample_rate_hz / static_cast<double>(config.segment_length);
    // Bins k = 0,1,... with k*spacing <= max_frequency (half-open guard on
    // rounding: the default setup lands bin 192 at exactly 2000 Hz).
    const std::size_t max_bin =
        static_cast<std::size_t>(std::floor(config.max_frequency_hz / spacing + 1e-9));
    const std::size_t nyquist_bin = config.segment_length / 2;
    return std::min(max_bin, nyquist_bin) + 1;
}

double welch_bin_spacing_hz(const WelchConfig& config, double sample_rate_hz) {
    return sample_rate_hz / static_cast<double>(config.segment_length);
}

WelchPlan::WelchPlan(const WelchConfig& config, double sample_rate_hz)
    : config_(config), sample_rate_(sample_rate_hz) {
    if (sample_rate_hz <= 0.0) throw ConfigError("welch: sample rate must be > 0");
    if (config.segment_length < 2) throw ConfigError("welch: segment length too small");
    if (config.overlap_fraction < 0.0 || config.overlap_fraction >= 1.0) {
        throw ConfigError("welch: overlap fraction must be in [0,1)");
    }
    bins_ = welch_bin_count(config, sample_rate_hz);
    hop_ = static_cast<std::size_t>(
        std::round(static_cast<double>(config.segment_length) *
                   (1.0 - config.overlap_fraction)));
    if (hop_ == 0) hop_ = 1;
    window_ = make_window(config.window, config.segment_length);
    window_power_ = 0.0;
    for (double w : window_) window_power_ += w * w;

    const std::size_t L = config.segment_length;
    cos_t_ = Matrix(bins_, L);
    sin_t_ = Matrix(bins_, L);
    for (std::size_t k = 0; k < bins_; ++k) {
        for (std::size_t n = 0; n < L; ++n) {
            const double angle =
                kTwoPi * static_cast<double>(k) * static_cast<double>(n) /
                static_cast<double>(L);
            cos_t_(k, n) = std::cos(angle);
            sin_t_(k, n) = std::sin(angle);
        }
    }
}

std::size_t WelchPlan::segments_for(std::size_t sample_count) const {
    if (sample_count < config_.segment_length) return 0;
    return (sample_count - config_.segment_length) / hop_ + 1;
}

std::vector<double> WelchPlan::psd(const std::vector<double>& samples) const {
    const std::size_t L = config_.segment_length;
    const std::size_t segs = segments_for(samples.size());
    if (segs == 0) {
        throw InputError("welch: recording shorter than one segment (" +
                         std::to_string(samples.size()) + " < " + std::to_string(L) + ")");
    }

    // Windowed segments as a matrix, then the truncated DFT as two GEMMs.
    Matrix seg(segs, L);
    for (std::size_t s = 0; s < segs; ++s) {
        const double* src = samples.data() + s * hop_;
        for (std::size_t n = 0; n < L; ++n) seg(s, n) = src[n] * window_[n];
    }
    const Matrix re = matmul_bt(seg, cos_t_);  // segs × bins
    const Matrix im = matmul_bt(seg, sin_t_);

    const std::size_t nyquist_bin = L / 2;
    std::vector<double> psd(bins_, 0.0);
    const double norm = 1.0 / (sample_rate_ * window_power_);
    for (std::size_t k = 0; k < bins_; ++k) {
        double acc = 0.0;
        for (std::size_t s = 0; s < segs; ++s) {
            acc += re(s, k) * re(s, k) + im(s, k) * im(s, k);
        }
        double scale = norm / static_cast<double>(segs);
        if (k != 0 && k != nyquist_bin) scale *= 2.0;  // one-sided
        psd[k] = acc * scale;
    }
    return psd;
}

std::vector<double> welch_psd(const TimeSeriesRecording& recording,
                              const WelchConfig& config) {
    if (recording.samples.empty()) throw InputError("welch: empty recording");
    WelchPlan plan(config, recording.sample_rate_hz);
    return plan.psd(recording.samples);
}

}  // namespace dbvae
