#include "hpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hpt {

bool Tensor2::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor2& t, const std::string& what) {
    if (!t.all_finite()) throw std::invalid_argument(what + ": non-finite value");
}

void require_finite(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument(what + ": non-finite value");
}

static void check_mm(int ak, int bk, const char* name) {
    if (ak != bk) throw std::invalid_argument(std::string(name) + ": inner dimensions differ");
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    check_mm(a.cols, b.rows, "matmul");
    Tensor2 c(a.rows, b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    check_mm(a.cols, b.cols, "matmul_nt");
    Tensor2 c(a.rows, b.rows);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* bj = b.row(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
            ci[j] = acc;
        }
    }
    return c;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
    check_mm(a.rows, b.rows, "matmul_tn");
    Tensor2 c(a.cols, b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.cols; ++i) {
        double* ci = c.row(i);
        for (int k = 0; k < a.rows; ++k) {
            const double aki = a(k, i);
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

Tensor2 add(const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor2 c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

void add_inplace(Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy_inplace(Tensor2& a, double alpha, const Tensor2& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("axpy_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += alpha * b.data[i];
}

Tensor2 scale(const Tensor2& a, double s) {
    Tensor2 c = a;
    for (double& v : c.data) v *= s;
    return c;
}

Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
    Tensor2 c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Tensor2 softmax_rows(const Tensor2& x) {
    require_finite(x, "softmax_rows");
    Tensor2 y(x.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        double m = xi[0];
        for (int j = 1; j < x.cols; ++j) m = std::max(m, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            yi[j] = std::exp(xi[j] - m);
            sum += yi[j];
        }
        for (int j = 0; j < x.cols; ++j) yi[j] /= sum;
    }
    return y;
}

Tensor2 softmax_rows_backward(const Tensor2& y, const Tensor2& dy) {
    if (!y.same_shape(dy)) throw std::invalid_argument("softmax_rows_backward: shape mismatch");
    Tensor2 dx(y.rows, y.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < y.rows; ++i) {
        const double* yi = y.row(i);
        const double* di = dy.row(i);
        double* oi = dx.row(i);
        double s = 0.0;
        for (int j = 0; j < y.cols; ++j) s += di[j] * yi[j];
        for (int j = 0; j < y.cols; ++j) oi[j] = yi[j] * (di[j] - s);
    }
    return dx;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
    require_finite(a, "cosine_similarity");
    require_finite(b, "cosine_similarity");
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::vector<double> normalized(const std::vector<double>& v) {
    const double n = norm(v);
    if (n == 0.0) throw std::invalid_argument("normalized: zero-norm vector");
    std::vector<double> u(v.size());
    for (size_t i = 0; i < v.size(); ++i) u[i] = v[i] / n;
    return u;
}

std::vector<double> normalize_backward(const std::vector<double>& v_raw,
                                       const std::vector<double>& du) {
    const double n = norm(v_raw);
    if (n == 0.0) throw std::invalid_argument("normalize_backward: zero-norm vector");
    std::vector<double> u(v_raw.size());
    for (size_t i = 0; i < v_raw.size(); ++i) u[i] = v_raw[i] / n;
    const double proj = dot(u, du);
    std::vector<double> dv(v_raw.size());
    for (size_t i = 0; i < v_raw.size(); ++i) dv[i] = (du[i] - u[i] * proj) / n;
    return dv;
}

namespace ref {

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    check_mm(a.cols, b.rows, "ref::matmul");
    Tensor2 c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    check_mm(a.cols, b.cols, "ref::matmul_nt");
    Tensor2 c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
            c(i, j) = acc;
        }
    }
    return c;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
    check_mm(a.rows, b.rows, "ref::matmul_tn");
    Tensor2 c(a.cols, b.cols);
    for (int i = 0; i < a.cols; ++i) {
        for (int k = 0; k < a.rows; ++k) {
            const double aki = a(k, i);
            for (int j = 0; j < b.cols; ++j) c(i, j) += aki * b(k, j);
        }
    }
    return c;
}

Tensor2 softmax_rows(const Tensor2& x) {
    require_finite(x, "ref::softmax_rows");
    Tensor2 y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double m = x(i, 0);
        for (int j = 1; j < x.cols; ++j) m = std::max(m, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            y(i, j) = std::exp(x(i, j) - m);
            sum += y(i, j);
        }
        for (int j = 0; j < x.cols; ++j) y(i, j) /= sum;
    }
    return y;
}

}  // namespace ref
}  // namespace hpt
