#include "dbvae/synth.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <thread>

#include "dbvae/rng.hpp"

namespace dbvae {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Gamma(shape, 1/shape) variate (mean 1) via Marsaglia-Tsang; shape >= 1.
double mean_one_gamma(double shape, Rng& rng) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = rng.gaussian();
        const double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        const double v = t * t * t;
        const double u = rng.uniform();
        if (u <= 0.0) continue;
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v / shape;
        }
    }
}

// DFT of the length-L boxcar at angular frequency theta (per-sample radians).
std::complex<double> dirichlet(double theta, std::size_t length) {
    const double l = static_cast<double>(length);
    const double half = std::sin(0.5 * theta);
    if (std::abs(half) < 1e-12) {
        return std::polar(l, -0.5 * theta * (l - 1.0));
    }
    return std::polar(std::sin(0.5 * l * theta) / half, -0.5 * theta * (l - 1.0));
}

double window_gain_sq(double theta, const WelchConfig& welch) {
    const std::size_t L = welch.segment_length;
    if (welch.window == WelchWindow::Rectangular) {
        return std::norm(dirichlet(theta, L));
    }
    // Periodic Hann = 0.5 - 0.25 e^{+i 2pi n/L} - 0.25 e^{-i 2pi n/L}.
    const double shift = kTwoPi / static_cast<double>(L);
    const std::complex<double> w = 0.5 * dirichlet(theta, L) -
                                   0.25 * dirichlet(theta - shift, L) -
                                   0.25 * dirichlet(theta + shift, L);
    return std::norm(w);
}

}  // namespace

void SpeciesProfile::validate() const {
    if (!(wbf_mean_hz > 20.0 && wbf_mean_hz < 1000.0)) {
        throw ConfigError("profile '" + name + "': fundamental must be in (20, 1000) Hz");
    }
    if (!(wbf_rel_std >= 0.0)) throw ConfigError("profile '" + name + "': spread must be >= 0");
    if (!(harmonic_decay > 0.0 && harmonic_decay < 1.0)) {
        throw ConfigError("profile '" + name + "': harmonic decay must be in (0,1)");
    }
    if (harmonic_count < 1) throw ConfigError("profile '" + name + "': need >= 1 harmonic");
    if (!(body_floor >= 0.0) || !(noise_level >= 0.0)) {
        throw ConfigError("profile '" + name + "': negative body/noise level");
    }
}

std::vector<SpeciesProfile> default_species_profiles() {
    return {
        {"tortrix_like", 45.0, 0.06, 0.55, 4, 0.18, 0.06},
        {"lacewing_like", 60.0, 0.05, 0.50, 4, 0.15, 0.05},
        {"aphid_like", 78.0, 0.08, 0.45, 3, 0.12, 0.07},
        {"whitefly_like", 100.0, 0.06, 0.50, 4, 0.12, 0.05},
        {"bumblebee_like", 128.0, 0.05, 0.65, 5, 0.20, 0.04},
        {"hoverfly_like", 163.0, 0.06, 0.60, 5, 0.15, 0.05},
        {"housefly_like", 208.0, 0.07, 0.55, 4, 0.10, 0.06},
        {"blowfly_like", 265.0, 0.06, 0.60, 4, 0.10, 0.05},
        {"weevil_like", 338.0, 0.25, 0.50, 3, 0.08, 0.10},
        {"fruitfly_like", 430.0, 0.08, 0.45, 3, 0.08, 0.07},
        {"midge_like", 545.0, 0.05, 0.42, 3, 0.06, 0.06},
        {"mosquito_like", 650.0, 0.04, 0.40, 3, 0.05, 0.05},
    };
}

TimeSeriesRecording synthesize_recording(const SpeciesProfile& profile, double duration_s,
                                         std::uint64_t seed, const GeneratorConfig& config) {
    profile.validate();
    const double fs = config.sample_rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * fs));
    const std::size_t min_n = config.welch.segment_length;
    if (n < min_n) {
        throw ConfigError("synthesize_recording: duration shorter than one Welch segment");
    }

    Rng rng(seed);
    const double f0 = profile.wbf_mean_hz * std::exp(profile.wbf_rel_std * rng.gaussian());
    std::vector<double> phase(static_cast<std::size_t>(profile.harmonic_count));
    for (double& p : phase) p = rng.uniform(0.0, kTwoPi);

    TimeSeriesRecording rec;
    rec.sample_rate_hz = fs;
    rec.samples.resize(n);
    const double amp = config.amplitude;
    const double body = profile.body_floor * amp;
    const double noise_std = profile.noise_level * amp;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        double v = body;
        double a_h = amp;
        for (int h = 1; h <= profile.harmonic_count; ++h) {
            v += a_h * std::sin(kTwoPi * f0 * static_cast<double>(h) * t +
                                phase[static_cast<std::size_t>(h - 1)]);
            a_h *= profile.harmonic_decay;
        }
        if (noise_std > 0.0) v += noise_std * rng.gaussian();
        rec.samples[i] = v;
    }
    return rec;
}

std::vector<double> synthesize_spectrum(const SpeciesProfile& profile, std::uint64_t seed,
                                        const GeneratorConfig& config, const WelchPlan& plan) {
    if (!config.direct_spectra) {
        const TimeSeriesRecording rec =
            synthesize_recording(profile, config.duration_s, seed, config);
        return preprocess({plan.psd(rec.samples)});
    }

    // Direct path: expected Welch PSD of the same signal model, with per-bin
    // averaging noise matching the segment count of the configured duration.
    profile.validate();
    Rng rng(seed);
    const double f0 = profile.wbf_mean_hz * std::exp(profile.wbf_rel_std * rng.gaussian());

    const double fs = plan.sample_rate_hz();
    const WelchConfig& welch = plan.config();
    const std::size_t bins = plan.bins();
    const std::size_t L = welch.segment_length;
    const std::size_t nyquist_bin = L / 2;
    double window_power = 0.0;  // sum w^2
    {
        // Recompute here instead of exposing plan internals.
        for (std::size_t n = 0; n < L; ++n) {
            const double w =
                welch.window == WelchWindow::Hann
                    ? 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(n) /
                                            static_cast<double>(L)))
                    : 1.0;
            window_power += w * w;
        }
    }
    const double amp = config.amplitude;
    const double norm = 1.0 / (fs * window_power);
    const double spacing = fs / static_cast<double>(L);

    std::vector<double> expected(bins, 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
        const double f_k = spacing * static_cast<double>(k);
        const double one_sided = (k != 0 && k != nyquist_bin) ? 2.0 : 1.0;
        double e = 0.0;
        // Harmonics: amplitude A contributes (A^2/4)(|W(f-fh)|^2+|W(f+fh)|^2).
        double a_h = amp;
        for (int h = 1; h <= profile.harmonic_count; ++h) {
            const double fh = f0 * static_cast<double>(h);
            const double th_minus = kTwoPi * (f_k - fh) / fs;
            const double th_plus = kTwoPi * (f_k + fh) / fs;
            e += 0.25 * a_h * a_h *
                 (window_gain_sq(th_minus, welch) + window_gain_sq(th_plus, welch));
            a_h *= profile.harmonic_decay;
        }
        // DC body level.
        const double body = profile.body_floor * amp;
        e += body * body * window_gain_sq(kTwoPi * f_k / fs, welch);
        e *= one_sided * norm;
        // White noise floor.
        const double noise_std = profile.noise_level * amp;
        e += one_sided * noise_std * noise_std / fs;
        expected[k] = e;
    }

    const std::size_t segs = plan.segments_for(
        static_cast<std::size_t>(std::llround(config.duration_s * fs)));
    const double shape = static_cast<double>(std::max<std::size_t>(segs, 1));
    std::vector<double> psd(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        psd[k] = expected[k] * mean_one_gamma(shape, rng);
    }
    return preprocess({psd});
}

DatasetBundle generate_dataset(const std::vector<SpeciesProfile>& profiles,
                               std::size_t unlabelled_count,
                               std::size_t labelled_per_species, std::uint64_t seed,
                               const GeneratorConfig& config) {
    if (profiles.empty()) throw ConfigError("generate_dataset: no species profiles");
    if (unlabelled_count == 0 || labelled_per_species == 0) {
        throw ConfigError("generate_dataset: counts must be positive");
    }
    for (const SpeciesProfile& p : profiles) p.validate();

    const WelchPlan plan(config.welch, config.sample_rate_hz);
    if (plan.bins() != kSpectrumBins) {
        throw ConfigError("generate_dataset: Welch configuration does not yield " +
                          std::to_string(kSpectrumBins) + " bins");
    }

    DatasetBundle out;
    const std::size_t labelled_count = labelled_per_species * profiles.size();
    out.unlabelled.bins = Matrix(unlabelled_count, kSpectrumBins);
    out.unlabelled.ids.resize(unlabelled_count);
    out.unlabelled.labels.assign(unlabelled_count, "");
    out.hidden_truth.resize(unlabelled_count);
    out.labelled.bins = Matrix(labelled_count, kSpectrumBins);
    out.labelled.ids.resize(labelled_count);
    out.labelled.labels.resize(labelled_count);

    // Record i (over unlabelled then labelled) always uses stream i, so the
    // worker partition cannot affect the data.
    auto fill_record = [&](std::size_t i) {
        Rng pick = Rng::derive(seed, i);
        if (i < unlabelled_count) {
            const std::size_t sp = static_cast<std::size_t>(pick.index(profiles.size()));
            const std::vector<double> bins =
                synthesize_spectrum(profiles[sp], pick.next_u64(), config, plan);
            for (std::size_t j = 0; j < kSpectrumBins; ++j) out.unlabelled.bins(i, j) = bins[j];
            char buf[16];
            std::snprintf(buf, sizeof buf, "u%06zu", i);
            out.unlabelled.ids[i] = buf;
            out.hidden_truth[i] = profiles[sp].name;
        } else {
            const std::size_t li = i - unlabelled_count;
            const std::size_t sp = li / labelled_per_species;
            const std::vector<double> bins =
                synthesize_spectrum(profiles[sp], pick.next_u64(), config, plan);
            for (std::size_t j = 0; j < kSpectrumBins; ++j) out.labelled.bins(li, j) = bins[j];
            char buf[16];
            std::snprintf(buf, sizeof buf, "l%06zu", li);
            out.labelled.ids[li] = buf;
            out.labelled.labels[li] = profiles[sp].name;
        }
    };

    const std::size_t total = unlabelled_count + labelled_count;
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), 4);
    if (workers <= 1 || total < 256) {
        for (std::size_t i = 0; i < total; ++i) fill_record(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < total; i += workers) fill_record(i);
            });
        }
        for (std::thread& t : pool) t.join();
    }
    return out;
}

}  // namespace dbvae
