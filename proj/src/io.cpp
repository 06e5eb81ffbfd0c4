#include "dbvae/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dbvae {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<std::string> read_lines(const std::string& path) {
    const std::string content = read_file(path);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : content) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    return lines;
}

double parse_double(const std::string& s, const std::string& path) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("bad numeric field '" + s + "' in " + path);
    }
}

}  // namespace

void write_spectra_csv(const std::string& path, const SpectrumBatch& batch) {
    std::string out;
    out.reserve(batch.size() * kSpectrumBins * 20 + 2048);
    out += "id,label";
    for (std::size_t j = 0; j < kSpectrumBins; ++j) {
        char buf[8];
        std::snprintf(buf, sizeof buf, ",f%03zu", j);
        out += buf;
    }
    out += "\n";
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out += batch.ids[i];
        out += ',';
        out += batch.labels[i];
        for (std::size_t j = 0; j < kSpectrumBins; ++j) {
            out += ',';
            out += format_double(batch.bins(i, j));
        }
        out += '\n';
    }
    atomic_write_file(path, out);
}

SpectrumBatch read_spectra_csv(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw IoError("empty spectra file: " + path);
    const std::size_t expected_fields = 2 + kSpectrumBins;

    SpectrumBatch batch;
    const std::size_t n = lines.size() - 1;
    batch.bins = Matrix(n, kSpectrumBins);
    batch.ids.resize(n);
    batch.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<std::string> fields = split_csv_line(lines[i + 1]);
        if (fields.size() != expected_fields) {
            throw IoError("row " + std::to_string(i + 2) + " of " + path + " has " +
                          std::to_string(fields.size()) + " fields, expected " +
                          std::to_string(expected_fields));
        }
        batch.ids[i] = fields[0];
        batch.labels[i] = fields[1];
        for (std::size_t j = 0; j < kSpectrumBins; ++j) {
            batch.bins(i, j) = parse_double(fields[2 + j], path);
        }
    }
    return batch;
}

void write_labels_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<std::string>& labels) {
    if (ids.size() != labels.size()) throw ShapeError("write_labels_csv: length mismatch");
    std::string out = "id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i];
        out += ',';
        out += labels[i];
        out += '\n';
    }
    atomic_write_file(path, out);
}

std::vector<std::pair<std::string, std::string>> read_labels_csv(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw IoError("empty labels file: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::vector<std::string> fields = split_csv_line(lines[i]);
        if (fields.size() != 2) {
            throw IoError("row " + std::to_string(i + 1) + " of " + path +
                          " is not `id,label`");
        }
        out.emplace_back(fields[0], fields[1]);
    }
    return out;
}

void write_embedding_csv(const std::string& path, const std::vector<std::string>& ids,
                         const Matrix& embedding) {
    if (ids.size() != embedding.rows()) throw ShapeError("write_embedding_csv: length mismatch");
    std::string out = "id";
    for (std::size_t d = 0; d < embedding.cols(); ++d) {
        out += ",z" + std::to_string(d + 1);
    }
    out += '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i];
        for (std::size_t d = 0; d < embedding.cols(); ++d) {
            out += ',';
            out += format_double(embedding(i, d));
        }
        out += '\n';
    }
    atomic_write_file(path, out);
}

std::pair<std::vector<std::string>, Matrix> read_embedding_csv(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw IoError("empty embedding file: " + path);
    const std::size_t dims = split_csv_line(lines[0]).size() - 1;
    const std::size_t n = lines.size() - 1;
    std::vector<std::string> ids(n);
    Matrix emb(n, dims);
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<std::string> fields = split_csv_line(lines[i + 1]);
        if (fields.size() != dims + 1) {
            throw IoError("row " + std::to_string(i + 2) + " of " + path +
                          " has the wrong field count");
        }
        ids[i] = fields[0];
        for (std::size_t d = 0; d < dims; ++d) emb(i, d) = parse_double(fields[1 + d], path);
    }
    return {std::move(ids), std::move(emb)};
}

void write_assignments_csv(const std::string& path, const std::vector<std::string>& ids,
                           const std::vector<int>& assignments) {
    if (ids.size() != assignments.size()) {
        throw ShapeError("write_assignments_csv: length mismatch");
    }
    std::string out = "id,cluster\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i];
        out += ',';
        out += std::to_string(assignments[i]);
        out += '\n';
    }
    atomic_write_file(path, out);
}

void write_silhouette_csv(const std::string& path,
                          const std::vector<std::pair<std::size_t, double>>& table) {
    std::string out = "k,silhouette\n";
    for (const auto& [k, s] : table) {
        out += std::to_string(k);
        out += ',';
        out += format_double(s);
        out += '\n';
    }
    atomic_write_file(path, out);
}

}  // namespace dbvae
