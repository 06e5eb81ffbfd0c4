#pragma once

#include <optional>
#include <vector>

#include "dbvae/matrix.hpp"

namespace dbvae {

enum class OpticalBand { Nm808, Nm975 };

struct TimeSeriesRecording {
    std::vector<double> samples;
    double sample_rate_hz = 20000.0;
    std::optional<OpticalBand> band;
};

enum class WelchWindow { Hann, Rectangular };

// Default settings: 1920-sample Hann segments at 50% overlap on 20 kHz data
// give a 10.41666... Hz bin spacing and exactly 193 bins covering 0-2 kHz.
struct WelchConfig {
    std::size_t segment_length = 1920;
    double overlap_fraction = 0.5;
    WelchWindow window = WelchWindow::Hann;
    double max_frequency_hz = 2000.0;
};

std::size_t welch_bin_count(const WelchConfig& config, double sample_rate_hz);
double welch_bin_spacing_hz(const WelchConfig& config, double sample_rate_hz);

// Averaged one-sided windowed periodograms (power spectral density, density
// scaling), truncated to bins with center frequency <= max_frequency_hz.
std::vector<double> welch_psd(const TimeSeriesRecording& recording,
                              const WelchConfig& config = {});

// Precomputed trig tables for repeated transforms with one configuration.
class WelchPlan {
public:
    WelchPlan(const WelchConfig& config, double sample_rate_hz);
    std::vector<double> psd(const std::vector<double>& samples) const;
    std::size_t bins() const { return bins_; }
    const WelchConfig& config() const { return config_; }
    double sample_rate_hz() const { return sample_rate_; }
    std::size_t segments_for(std::size_t sample_count) const;

private:
    WelchConfig config_;
    double sample_rate_ = 0.0;
    std::size_t bins_ = 0;
    std::size_t hop_ = 0;
    std::vector<double> window_;
    double window_power_ = 0.0;  // sum of squared window values
    Matrix cos_t_;               // bins × segment_length
    Matrix sin_t_;
};

}  // namespace dbvae
