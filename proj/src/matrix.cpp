#include "dbvae/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace dbvae {

namespace {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

ConstMap map_of(const Matrix& m) {
    return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                    static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void throw_shape(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw_shape("matmul", a, b);
    Matrix out(a.rows(), b.cols());
    MutMap(out.data(), out.rows(), out.cols()).noalias() = map_of(a) * map_of(b);
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw_shape("matmul_bt", a, b);
    Matrix out(a.rows(), b.rows());
    MutMap(out.data(), out.rows(), out.cols()).noalias() =
        map_of(a) * map_of(b).transpose();
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw_shape("matmul_at", a, b);
    Matrix out(a.cols(), b.cols());
    MutMap(out.data(), out.rows(), out.cols()).noalias() =
        map_of(a).transpose() * map_of(b);
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("add", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += b.values()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("sub", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] -= b.values()[i];
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("hadamard", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= b.values()[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

std::vector<double> column_sums(const Matrix& a) {
    std::vector<double> sums(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) sums[j] += a(i, j);
    return sums;
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
    }
}

}  // namespace dbvae
