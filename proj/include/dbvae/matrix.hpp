#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <vector>

#include "dbvae/errors.hpp"

namespace dbvae {

// Fixed 64-byte alignment for all matrix storage. SIMD kernels peel loops
// based on pointer alignment; pinning the alignment keeps reduction order,
// and therefore every result bit, independent of where the heap places a
// buffer.
template <typename T, std::size_t Alignment>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Alignment>;
    };
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
    }
    void deallocate(T* p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t(Alignment));
    }
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using AlignedVector = std::vector<double, AlignedAllocator<double, 64>>;

// Dense row-major matrix of doubles. Everything trains at 64-bit precision
// with fixed reduction order, so a run is bit-reproducible per seed.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const {
        return {values_.data() + r * cols_, cols_};
    }

    AlignedVector& values() { return values_; }
    const AlignedVector& values() const { return values_; }

    bool all_finite() const;

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    AlignedVector values_;
};

// a (m×k) · b (k×n)
Matrix matmul(const Matrix& a, const Matrix& b);
// a (m×k) · bᵀ where b is (n×k)
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// aᵀ · b where a is (k×m), b is (k×n)
Matrix matmul_at(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// Elementwise helpers; shapes must agree.
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

// Column sums as a length-cols vector.
std::vector<double> column_sums(const Matrix& a);

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what);

}  // namespace dbvae
