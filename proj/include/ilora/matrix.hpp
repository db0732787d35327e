#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ilora {

// Dense row-major matrix of doubles. The substrate for all model math.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    void fill(double v);
    bool all_finite() const;

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c, 0.0); }
    static Matrix identity(std::size_t n);
};

// out = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// out = a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// out = a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

void add_inplace(Matrix& a, const Matrix& b);
void axpy_inplace(Matrix& a, double s, const Matrix& b);  // a += s*b
void scale_inplace(Matrix& a, double s);

// accumulate a*b into out (shapes must already agree)
void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b);
void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b);
void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b);

double dot_flat(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

void require_finite(const Matrix& m, const char* where);

[[noreturn]] void throw_shape_error(const char* op, const Matrix& a, const Matrix& b);

}  // namespace ilora
