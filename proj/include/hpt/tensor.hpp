#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hpt {

// Dense row-major 2-D tensor of doubles. All math in this project runs on
// these; sequences are short (<= 128 tokens) so there is no sparse path.
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
    size_t size() const { return data.size(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    bool all_finite() const;
};

// Throws std::invalid_argument naming `what` if t contains NaN/Inf.
void require_finite(const Tensor2& t, const std::string& what);
void require_finite(const std::vector<double>& v, const std::string& what);

// --- dense kernels -------------------------------------------------------
//
// The OpenMP kernels parallelize over output rows only; every output element
// is computed by exactly one thread with a fixed summation order, so results
// are bit-identical to the serial reference for any thread count.

Tensor2 matmul(const Tensor2& a, const Tensor2& b);     // a(m,k) * b(k,n)
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);  // a(m,k) * b(n,k)^T
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);  // a(k,m)^T * b(k,n)

Tensor2 add(const Tensor2& a, const Tensor2& b);
void add_inplace(Tensor2& a, const Tensor2& b);
void axpy_inplace(Tensor2& a, double alpha, const Tensor2& b);  // a += alpha * b
Tensor2 scale(const Tensor2& a, double s);
Tensor2 hadamard(const Tensor2& a, const Tensor2& b);

// Row-wise softmax, stabilized by row-max subtraction. Errors on non-finite
// input; every output row is nonnegative and sums to 1 within 1e-6.
Tensor2 softmax_rows(const Tensor2& x);

// Backward of y = softmax_rows(x): dx_i = y_i * (dy_i - sum_j dy_j y_j), per row.
Tensor2 softmax_rows_backward(const Tensor2& y, const Tensor2& dy);

// --- vector helpers ------------------------------------------------------

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm(const std::vector<double>& v);

// Cosine similarity, clamped to [-1, 1]. Errors on zero-norm input or
// mismatched lengths.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// v / ||v||; errors on zero norm.
std::vector<double> normalized(const std::vector<double>& v);

// Backward of u = v/||v||: dv = (du - u * (u . du)) / ||v||.
std::vector<double> normalize_backward(const std::vector<double>& v_raw,
                                       const std::vector<double>& du);

// Serial reference implementations of the parallel kernels above. Kept for
// the kernel-equivalence tests and the benchmark target.
namespace ref {
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
Tensor2 softmax_rows(const Tensor2& x);
}  // namespace ref

}  // namespace hpt
