#include "dbvae/spectrum.hpp"

#include <cmath>
#include <string>

namespace dbvae {

void SpectrumBatch::push_back(const SpectrumRecord& record) {
    if (record.bins.size() != kSpectrumBins) {
        throw ShapeError("SpectrumBatch: record has " + std::to_string(record.bins.size()) +
                         " bins, expected " + std::to_string(kSpectrumBins));
    }
    Matrix next(ids.size() + 1, kSpectrumBins);
    for (std::size_t i = 0; i < bins.size(); ++i) next.values()[i] = bins.values()[i];
    for (std::size_t j = 0; j < kSpectrumBins; ++j) next(ids.size(), j) = record.bins[j];
    bins = std::move(next);
    ids.push_back(record.id);
    labels.push_back(record.label);
}

std::vector<double> preprocess(const std::vector<std::vector<double>>& band_psds) {
    if (band_psds.empty()) throw InputError("preprocess: no band spectra given");
    for (const auto& band : band_psds) {
        if (band.size() != kSpectrumBins) {
            throw ShapeError("preprocess: band has " + std::to_string(band.size()) +
                             " bins, expected " + std::to_string(kSpectrumBins));
        }
        for (double v : band) {
            if (!(v >= 0.0)) throw InputError("preprocess: negative or NaN PSD value");
        }
    }

    // Average power across bands, then log(1+s), then max-normalize.
    std::vector<double> out(kSpectrumBins, 0.0);
    const double inv_bands = 1.0 / static_cast<double>(band_psds.size());
    for (std::size_t j = 0; j < kSpectrumBins; ++j) {
        double avg = 0.0;
        for (const auto& band : band_psds) avg += band[j];
        out[j] = std::log1p(avg * inv_bands);
    }
    double max_v = 0.0;
    for (double v : out) max_v = std::max(max_v, v);
    if (max_v <= 0.0) {
        throw InputError("preprocess: all-zero spectrum cannot be normalized");
    }
    for (double& v : out) v /= max_v;
    return out;
}

void validate_spectrum_bins(const std::vector<double>& bins) {
    if (bins.size() != kSpectrumBins) {
        throw ShapeError("spectrum: expected " + std::to_string(kSpectrumBins) + " bins");
    }
    double max_v = 0.0;
    for (double v : bins) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InputError("spectrum: bin outside [0,1]");
        }
        max_v = std::max(max_v, v);
    }
    if (max_v != 1.0) throw InputError("spectrum: max bin must be exactly 1");
}

}  // namespace dbvae
