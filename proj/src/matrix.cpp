#include "ilora/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace ilora {

std::string Matrix::shape_str() const {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

void Matrix::fill(double v) {
    for (auto& x : data) x = v;
}

bool Matrix::all_finite() const {
    for (double x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

void throw_shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                a.shape_str() + " and " + b.shape_str());
}

void require_finite(const Matrix& m, const char* where) {
    if (!m.all_finite()) {
        throw std::runtime_error(std::string(where) + ": non-finite entries");
    }
}

// ikj loop order keeps the inner accesses contiguous in both b and out.
void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw_shape_error("matmul", a, b);
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = &out.data[i * m];
        const double* arow = &a.data[i * k];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[p * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw_shape_error("matmul", a, b);
    Matrix out(a.rows, b.cols, 0.0);
    matmul_acc(out, a, b);
    return out;
}

void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw_shape_error("matmul_nt", a, b);
    const std::size_t n = a.rows, k = a.cols, m = b.rows;
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = &a.data[i * k];
        double* orow = &out.data[i * m];
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = &b.data[j * k];
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw_shape_error("matmul_nt", a, b);
    Matrix out(a.rows, b.rows, 0.0);
    matmul_nt_acc(out, a, b);
    return out;
}

void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw_shape_error("matmul_tn", a, b);
    const std::size_t n = a.cols, k = a.rows, m = b.cols;
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = &a.data[p * n];
        const double* brow = &b.data[p * m];
        for (std::size_t i = 0; i < n; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = &out.data[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw_shape_error("matmul_tn", a, b);
    Matrix out(a.cols, b.cols, 0.0);
    matmul_tn_acc(out, a, b);
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape_error("add", a, b);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy_inplace(Matrix& a, double s, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape_error("axpy", a, b);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

void scale_inplace(Matrix& a, double s) {
    for (auto& x : a.data) x *= s;
}

double dot_flat(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape_error("dot", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double frobenius_norm(const Matrix& a) {
    return std::sqrt(dot_flat(a, a));
}

}  // namespace ilora
