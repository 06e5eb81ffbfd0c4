#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dbvae/matrix.hpp"
#include "dbvae/spectrum.hpp"

namespace dbvae {

// Canonical float formatting for all text outputs: 17 significant digits,
// enough to round-trip any double bit-exactly.
std::string format_double(double v);

// Writes content to path atomically (temp file + rename).
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Spectra CSV: header `id,label,f000,...,f192`, label empty when unlabelled.
void write_spectra_csv(const std::string& path, const SpectrumBatch& batch);
SpectrumBatch read_spectra_csv(const std::string& path);

// Two-column CSV `id,label`.
void write_labels_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<std::string>& labels);
std::vector<std::pair<std::string, std::string>> read_labels_csv(const std::string& path);

// Embedding CSV: `id,z1,z2`.
void write_embedding_csv(const std::string& path, const std::vector<std::string>& ids,
                         const Matrix& embedding);
std::pair<std::vector<std::string>, Matrix> read_embedding_csv(const std::string& path);

// Assignment CSV: `id,cluster`.
void write_assignments_csv(const std::string& path, const std::vector<std::string>& ids,
                           const std::vector<int>& assignments);

// Per-K silhouette table: `k,silhouette`.
void write_silhouette_csv(const std::string& path,
                          const std::vector<std::pair<std::size_t, double>>& table);

}  // namespace dbvae
