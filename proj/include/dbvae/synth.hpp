#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbvae/spectrum.hpp"
#include "dbvae/welch.hpp"

namespace dbvae {

// Shape parameters of one synthetic species' wing-beat signature. These are
// generator design values for experiments, not measurements of real species.
struct SpeciesProfile {
    std::string name;
    double wbf_mean_hz = 200.0;   // fundamental wing-beat frequency
    double wbf_rel_std = 0.05;    // lognormal spread of the fundamental
    double harmonic_decay = 0.6;  // per-harmonic amplitude ratio, in (0,1)
    int harmonic_count = 4;       // harmonics including the fundamental
    double body_floor = 0.1;      // DC body-signal level relative to amplitude
    double noise_level = 0.05;    // additive noise std relative to amplitude

    void validate() const;
};

// Twelve species spanning fundamentals 45-650 Hz; one (the widest-spread) is
// deliberately hard to cluster.
std::vector<SpeciesProfile> default_species_profiles();

struct GeneratorConfig {
    double duration_s = 0.8;
    double amplitude = 300.0;  // detector-count scale; makes the log transform bite
    double sample_rate_hz = 20000.0;
    bool direct_spectra = false;  // skip time-series synthesis; draw PSDs directly
    WelchConfig welch;
};

// Sum of harmonics of a per-recording fundamental drawn from the profile's
// lognormal, plus a DC body level and additive white noise. Deterministic per
// seed.
TimeSeriesRecording synthesize_recording(const SpeciesProfile& profile, double duration_s,
                                         std::uint64_t seed,
                                         const GeneratorConfig& config = {});

// Draws one preprocessed spectrum for the profile, via the time-series + Welch
// path or the direct spectral path depending on config.
std::vector<double> synthesize_spectrum(const SpeciesProfile& profile, std::uint64_t seed,
                                        const GeneratorConfig& config,
                                        const WelchPlan& plan);

struct DatasetBundle {
    SpectrumBatch unlabelled;                // labels stripped
    std::vector<std::string> hidden_truth;   // generator species per unlabelled row
    SpectrumBatch labelled;
};

// Unlabelled mixture over the profiles (uniform weights) plus exactly
// labelled_per_species labelled records per species. Record seeds derive from
// (seed, record index) so parallel and serial generation agree.
DatasetBundle generate_dataset(const std::vector<SpeciesProfile>& profiles,
                               std::size_t unlabelled_count,
                               std::size_t labelled_per_species, std::uint64_t seed,
                               const GeneratorConfig& config = {});

}  // namespace dbvae
