#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include "dbvae/rng.hpp"
#include "dbvae/spectrum.hpp"
#include "dbvae/synth.hpp"
#include "dbvae/welch.hpp"

using namespace dbvae;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(
        std::max_element(v.begin(), v.end()) - v.begin());
}

// Direct DFT oracle over one Hann-windowed segment.
std::vector<double> single_segment_dft_power(const std::vector<double>& samples,
                                             std::size_t length, std::size_t bins) {
    std::vector<double> power(bins, 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t n = 0; n < length; ++n) {
            const double w =
                0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(n) /
                                      static_cast<double>(length)));
            const double angle =
                kTwoPi * static_cast<double>(k) * static_cast<double>(n) /
                static_cast<double>(length);
            acc += samples[n] * w *
                   std::complex<double>(std::cos(angle), -std::sin(angle));
        }
        power[k] = std::norm(acc);
    }
    return power;
}

}  // namespace

TEST_CASE("default Welch settings yield exactly 193 bins at 10.4166 Hz spacing") {
    const WelchConfig cfg;
    CHECK(welch_bin_count(cfg, 20000.0) == 193);
    CHECK(welch_bin_spacing_hz(cfg, 20000.0) == doctest::Approx(20000.0 / 1920.0));
    // Bin 192 sits exactly at 2 kHz.
    CHECK(192.0 * welch_bin_spacing_hz(cfg, 20000.0) == doctest::Approx(2000.0));
}

TEST_CASE("welch of a DC signal concentrates all energy in bin 0") {
    TimeSeriesRecording rec;
    rec.sample_rate_hz = 20000.0;
    rec.samples.assign(4 * 1920, 3.5);

    // Rectangular window: the boxcar transform has exact zeros at the other
    // bin centers, so everything lands in bin 0.
    WelchConfig rect;
    rect.window = WelchWindow::Rectangular;
    const std::vector<double> psd = welch_psd(rec, rect);
    REQUIRE(psd.size() == 193);
    CHECK(psd[0] > 0.0);
    for (std::size_t k = 1; k < psd.size(); ++k) {
        CHECK(psd[k] <= 1e-12 * psd[0]);
    }

    // The Hann window spreads DC into bins +-1 by construction; beyond that
    // the spectrum is clean.
    const std::vector<double> hann = welch_psd(rec);
    CHECK(argmax(hann) == 0);
    for (std::size_t k = 2; k < hann.size(); ++k) {
        CHECK(hann[k] <= 1e-12 * hann[0]);
    }
}

TEST_CASE("welch rejects too-short recordings and bad configs") {
    TimeSeriesRecording rec;
    rec.samples.assign(100, 1.0);
    CHECK_THROWS_AS(welch_psd(rec), InputError);
    WelchConfig bad;
    bad.overlap_fraction = 1.0;
    rec.samples.assign(4000, 1.0);
    CHECK_THROWS_AS(welch_psd(rec, bad), ConfigError);
}

TEST_CASE("on-bin sine at 520.8333 Hz peaks at bin 50, matching the DFT oracle") {
    const double fs = 20000.0;
    const double f = 50.0 * fs / 1920.0;  // exactly bin 50
    TimeSeriesRecording rec;
    rec.sample_rate_hz = fs;
    rec.samples.resize(1920 * 6);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        rec.samples[i] = std::sin(kTwoPi * f * static_cast<double>(i) / fs);
    }
    const std::vector<double> psd = welch_psd(rec);
    CHECK(argmax(psd) == 50);

    // Independent oracle: direct DFT of the first windowed segment.
    const std::vector<double> oracle = single_segment_dft_power(
        std::vector<double>(rec.samples.begin(), rec.samples.begin() + 1920), 1920, 193);
    CHECK(argmax(oracle) == 50);

    // Parseval-style concentration: > 95% of PSD mass within +-2 bins.
    double total = std::accumulate(psd.begin(), psd.end(), 0.0);
    double near = 0.0;
    for (std::size_t k = 48; k <= 52; ++k) near += psd[k];
    CHECK(near / total > 0.95);
}

TEST_CASE("welch PSD is non-negative") {
    Rng rng(9);
    TimeSeriesRecording rec;
    rec.samples.resize(1920 * 3);
    for (double& v : rec.samples) v = rng.gaussian();
    for (double v : welch_psd(rec)) CHECK(v >= 0.0);
}

TEST_CASE("white noise PSD is flat within 10% over Monte-Carlo averaged segments") {
    // 10 recordings of 200 segments each; their averaged PSD per bin must sit
    // within 10% of the across-bin mean.
    const WelchConfig cfg;
    const std::size_t samples_for_200_segs = 1920 + 199 * 960;
    std::vector<double> mean_psd(193, 0.0);
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        Rng rng(1000 + trial);
        TimeSeriesRecording rec;
        rec.samples.resize(samples_for_200_segs);
        for (double& v : rec.samples) v = rng.gaussian();
        const std::vector<double> psd = welch_psd(rec, cfg);
        for (std::size_t k = 0; k < 193; ++k) mean_psd[k] += psd[k] / 10.0;
    }
    // Bin 0 is excluded: the one-sided density at DC is half the interior
    // level by construction.
    const double level =
        std::accumulate(mean_psd.begin() + 1, mean_psd.end(), 0.0) / 192.0;
    for (std::size_t k = 1; k < 193; ++k) {
        CHECK(std::abs(mean_psd[k] - level) / level < 0.10);
    }
}

TEST_CASE("preprocess averages bands, log-transforms and max-normalizes") {
    // Hand case: log1p of (e-1, e^2-1, 0) is (1, 2, 0) -> normalized (0.5, 1, 0).
    std::vector<double> band(kSpectrumBins, 0.0);
    band[0] = std::exp(1.0) - 1.0;
    band[1] = std::exp(2.0) - 1.0;
    const std::vector<double> out = preprocess({band});
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[1] == 1.0);
    CHECK(out[2] == 0.0);
}

TEST_CASE("preprocess of two identical bands equals one band") {
    Rng rng(21);
    std::vector<double> band(kSpectrumBins);
    for (double& v : band) v = rng.uniform(0.0, 10.0);
    const std::vector<double> one = preprocess({band});
    const std::vector<double> two = preprocess({band, band});
    for (std::size_t i = 0; i < kSpectrumBins; ++i) CHECK(one[i] == two[i]);
}

TEST_CASE("preprocess output max is exactly 1 and all bins are in [0,1]") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> band(kSpectrumBins);
        for (double& v : band) v = rng.uniform(0.0, 1000.0);
        const std::vector<double> out = preprocess({band});
        CHECK(*std::max_element(out.begin(), out.end()) == 1.0);
        for (double v : out) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK_NOTHROW(validate_spectrum_bins(out));
    }
}

TEST_CASE("preprocess scale behaviour: scaled input still normalizes to max 1") {
    Rng rng(23);
    std::vector<double> band(kSpectrumBins);
    for (double& v : band) v = rng.uniform(0.0, 5.0);
    const std::vector<double> base = preprocess({band});
    std::vector<double> scaled = band;
    for (double& v : scaled) v *= 37.0;
    const std::vector<double> big = preprocess({scaled});
    CHECK(*std::max_element(base.begin(), base.end()) == 1.0);
    CHECK(*std::max_element(big.begin(), big.end()) == 1.0);
    // Same argmax; values differ only through the log transform.
    CHECK(argmax(base) == argmax(big));
}

TEST_CASE("preprocess rejects an all-zero spectrum") {
    CHECK_THROWS_AS(preprocess({std::vector<double>(kSpectrumBins, 0.0)}), InputError);
}

TEST_CASE("synthesize_recording is deterministic per seed") {
    SpeciesProfile p = default_species_profiles()[3];
    const TimeSeriesRecording a = synthesize_recording(p, 0.3, 42);
    const TimeSeriesRecording b = synthesize_recording(p, 0.3, 42);
    const TimeSeriesRecording c = synthesize_recording(p, 0.3, 43);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i] == b.samples[i]);
    bool differs = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i] != c.samples[i]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("noise-free single-harmonic recording peaks at the fundamental bin") {
    SpeciesProfile p;
    p.name = "pure";
    p.wbf_mean_hz = 420.0;
    p.wbf_rel_std = 0.0;
    p.harmonic_decay = 0.5;
    p.harmonic_count = 1;
    p.body_floor = 0.0;
    p.noise_level = 0.0;
    GeneratorConfig cfg;
    const TimeSeriesRecording rec = synthesize_recording(p, 0.8, 5, cfg);
    const std::vector<double> bins = preprocess({welch_psd(rec)});
    const double spacing = 20000.0 / 1920.0;
    const auto peak = static_cast<double>(argmax(bins));
    CHECK(std::abs(peak - 420.0 / spacing) <= 1.0);
}

TEST_CASE("spectral argmax ordering follows fundamental ordering") {
    SpeciesProfile low;
    low.name = "moth_like";
    low.wbf_mean_hz = 50.0;
    low.wbf_rel_std = 0.0;
    low.harmonic_count = 2;
    low.harmonic_decay = 0.4;
    low.body_floor = 0.0;
    low.noise_level = 0.01;
    SpeciesProfile high = low;
    high.name = "mosquito_like";
    high.wbf_mean_hz = 600.0;
    const GeneratorConfig cfg;
    const WelchPlan plan(cfg.welch, cfg.sample_rate_hz);
    const std::vector<double> lo = synthesize_spectrum(low, 1, cfg, plan);
    const std::vector<double> hi = synthesize_spectrum(high, 1, cfg, plan);
    CHECK(argmax(hi) > argmax(lo));
}

TEST_CASE("direct spectral path resembles the Welch path for the same species") {
    SpeciesProfile p = default_species_profiles()[6];
    GeneratorConfig welch_cfg;
    GeneratorConfig direct_cfg;
    direct_cfg.direct_spectra = true;
    const WelchPlan plan(welch_cfg.welch, welch_cfg.sample_rate_hz);
    const std::vector<double> via_welch = synthesize_spectrum(p, 3, welch_cfg, plan);
    const std::vector<double> direct = synthesize_spectrum(p, 3, direct_cfg, plan);
    // Same fundamental (same seed, same first draw): peaks within one bin.
    CHECK(std::abs(static_cast<double>(argmax(via_welch)) -
                   static_cast<double>(argmax(direct))) <= 1.0);
}

TEST_CASE("generate_dataset counting and invariants") {
    const std::vector<SpeciesProfile> all = default_species_profiles();
    std::vector<SpeciesProfile> profiles(all.begin(), all.begin() + 4);
    GeneratorConfig cfg;
    cfg.direct_spectra = true;  // fast path for tests
    const DatasetBundle data = generate_dataset(profiles, 60, 5, 99, cfg);

    CHECK(data.unlabelled.size() == 60);
    CHECK(data.hidden_truth.size() == 60);
    CHECK(data.labelled.size() == 20);

    // Exactly labelled_per_species per species.
    for (const auto& p : profiles) {
        const auto n = std::count(data.labelled.labels.begin(), data.labelled.labels.end(),
                                  p.name);
        CHECK(n == 5);
    }
    // Unlabelled labels are stripped but the truth is retained.
    for (const auto& l : data.unlabelled.labels) CHECK(l.empty());
    for (const auto& t : data.hidden_truth) CHECK(!t.empty());

    // Disjoint record ids.
    for (const auto& id : data.unlabelled.ids) CHECK(id[0] == 'u');
    for (const auto& id : data.labelled.ids) CHECK(id[0] == 'l');

    // Every record satisfies the spectrum invariants.
    for (std::size_t i = 0; i < data.unlabelled.size(); ++i) {
        std::vector<double> bins(kSpectrumBins);
        for (std::size_t j = 0; j < kSpectrumBins; ++j) bins[j] = data.unlabelled.bins(i, j);
        CHECK_NOTHROW(validate_spectrum_bins(bins));
    }
}

TEST_CASE("generate_dataset is bit-reproducible for a fixed seed") {
    const std::vector<SpeciesProfile> all = default_species_profiles();
    std::vector<SpeciesProfile> profiles(all.begin(), all.begin() + 3);
    GeneratorConfig cfg;
    cfg.direct_spectra = true;
    const DatasetBundle a = generate_dataset(profiles, 40, 3, 7, cfg);
    const DatasetBundle b = generate_dataset(profiles, 40, 3, 7, cfg);
    REQUIRE(a.unlabelled.bins.size() == b.unlabelled.bins.size());
    for (std::size_t i = 0; i < a.unlabelled.bins.size(); ++i) {
        CHECK(a.unlabelled.bins.values()[i] == b.unlabelled.bins.values()[i]);
    }
    CHECK(a.hidden_truth == b.hidden_truth);
    for (std::size_t i = 0; i < a.labelled.bins.size(); ++i) {
        CHECK(a.labelled.bins.values()[i] == b.labelled.bins.values()[i]);
    }
}

TEST_CASE("degenerate mixture: single profile means a single truth label") {
    GeneratorConfig cfg;
    cfg.direct_spectra = true;
    const DatasetBundle data =
        generate_dataset({default_species_profiles()[0]}, 25, 2, 3, cfg);
    for (const auto& t : data.hidden_truth) CHECK(t == default_species_profiles()[0].name);
}

TEST_CASE("generate_dataset rejects empty or invalid configurations") {
    GeneratorConfig cfg;
    CHECK_THROWS_AS(generate_dataset({}, 10, 2, 1, cfg), ConfigError);
    SpeciesProfile bad = default_species_profiles()[0];
    bad.wbf_mean_hz = 5.0;  // outside (20, 1000)
    CHECK_THROWS_AS(generate_dataset({bad}, 10, 2, 1, cfg), ConfigError);
    CHECK_THROWS_AS(synthesize_recording(default_species_profiles()[0], 0.01, 1, cfg),
                    ConfigError);
}
