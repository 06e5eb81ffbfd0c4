#pragma once

#include <string>
#include <vector>

#include "dbvae/matrix.hpp"

namespace dbvae {

inline constexpr std::size_t kSpectrumBins = 193;

// One preprocessed wing-beat power spectrum: 193 bins in [0,1], max bin 1.
struct SpectrumRecord {
    std::string id;
    std::string label;  // empty = unlabelled
    std::vector<double> bins;
};

struct SpectrumBatch {
    Matrix bins;  // N × 193
    std::vector<std::string> ids;
    std::vector<std::string> labels;  // empty string = unlabelled

    std::size_t size() const { return ids.size(); }
    void push_back(const SpectrumRecord& record);
};

// Averages the band spectra, applies log(1+s) and normalizes by the maximum.
// Every input must have 193 non-negative bins; an all-zero spectrum cannot be
// normalized and raises an error.
std::vector<double> preprocess(const std::vector<std::vector<double>>& band_psds);

// Contract check for SpectrumRecord invariants (193 bins, range [0,1], max 1).
void validate_spectrum_bins(const std::vector<double>& bins);

}  // namespace dbvae
