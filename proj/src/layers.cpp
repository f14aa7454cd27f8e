#include "hpt/layers.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hpt {

const char* to_string(AttnModMode m) {
    switch (m) {
        case AttnModMode::none: return "none";
        case AttnModMode::additive: return "additive";
        case AttnModMode::multiplicative: return "multiplicative";
        case AttnModMode::multiplicative_selective: return "multiplicative_selective";
    }
    return "?";
}

AttnModMode attn_mod_mode_from_string(const std::string& s) {
    if (s == "none") return AttnModMode::none;
    if (s == "additive") return AttnModMode::additive;
    if (s == "multiplicative") return AttnModMode::multiplicative;
    if (s == "multiplicative_selective") return AttnModMode::multiplicative_selective;
    throw std::invalid_argument("unknown attention modification mode: " + s);
}

Tensor2 linear_forward(const LinearWeights& wts, const Tensor2& x, LinearCache* cache) {
    if (x.cols != wts.w.rows) throw std::invalid_argument("linear_forward: dim mismatch");
    Tensor2 y = matmul(x, wts.w);
    for (int i = 0; i < y.rows; ++i) {
        double* yi = y.row(i);
        for (int j = 0; j < y.cols; ++j) yi[j] += wts.b[j];
    }
    if (cache) cache->x = x;
    return y;
}

Tensor2 linear_backward(const LinearWeights& wts, const LinearCache& cache, const Tensor2& dy,
                        Tensor2* dw, std::vector<double>* db) {
    Tensor2 dx = matmul_nt(dy, wts.w);  // dY (S,out) * W^T (out,in)
    if (dw) add_inplace(*dw, matmul_tn(cache.x, dy));
    if (db) {
        for (int i = 0; i < dy.rows; ++i) {
            const double* di = dy.row(i);
            for (int j = 0; j < dy.cols; ++j) (*db)[j] += di[j];
        }
    }
    return dx;
}

Tensor2 layernorm_forward(const LayerNormWeights& wts, const Tensor2& x, LayerNormCache* cache) {
    const int d = x.cols;
    if (static_cast<int>(wts.gamma.size()) != d) throw std::invalid_argument("layernorm: dim mismatch");
    Tensor2 y(x.rows, d);
    Tensor2 xhat(x.rows, d);
    std::vector<double> inv_std(x.rows);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + wts.eps);
        inv_std[i] = istd;
        double* hi = xhat.row(i);
        double* yi = y.row(i);
        for (int j = 0; j < d; ++j) {
            hi[j] = (xi[j] - mean) * istd;
            yi[j] = hi[j] * wts.gamma[j] + wts.beta[j];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor2 layernorm_backward(const LayerNormWeights& wts, const LayerNormCache& cache,
                           const Tensor2& dy) {
    const int d = dy.cols;
    Tensor2 dx(dy.rows, d);
    for (int i = 0; i < dy.rows; ++i) {
        const double* di = dy.row(i);
        const double* hi = cache.xhat.row(i);
        double* oi = dx.row(i);
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dh = di[j] * wts.gamma[j];
            mean_dh += dh;
            mean_dh_h += dh * hi[j];
        }
        mean_dh /= d;
        mean_dh_h /= d;
        for (int j = 0; j < d; ++j) {
            const double dh = di[j] * wts.gamma[j];
            oi[j] = cache.inv_std[i] * (dh - mean_dh - hi[j] * mean_dh_h);
        }
    }
    return dx;
}

static double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

static double gelu_grad_scalar(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Tensor2 gelu_forward(const Tensor2& x, Tensor2* cache_x) {
    Tensor2 y(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu_scalar(x.data[i]);
    if (cache_x) *cache_x = x;
    return y;
}

Tensor2 gelu_backward(const Tensor2& cache_x, const Tensor2& dy) {
    Tensor2 dx(dy.rows, dy.cols);
    for (size_t i = 0; i < dy.data.size(); ++i)
        dx.data[i] = dy.data[i] * gelu_grad_scalar(cache_x.data[i]);
    return dx;
}

static void check_mod(const Tensor2& logits, const AttentionModMatrix* mod) {
    if (!mod || mod->mode == AttnModMode::none) return;
    if (mod->values.rows != logits.rows || mod->values.cols != logits.cols)
        throw std::invalid_argument("attention: modification matrix does not match seq_len");
    if (mod->mode == AttnModMode::multiplicative ||
        mod->mode == AttnModMode::multiplicative_selective) {
        for (double v : mod->values.data)
            if (!(v > 0.0))
                throw std::invalid_argument("attention: multiplicative entries must be positive");
    }
}

Tensor2 attention_core_forward(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                               const AttentionModMatrix* mod, AttentionCoreCache* cache) {
    if (q.cols != k.cols || k.rows != v.rows)
        throw std::invalid_argument("attention: shape mismatch");
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Tensor2 logits = matmul_nt(q, k);
    check_mod(logits, mod);
    Tensor2 pre(logits.rows, logits.cols);
    const AttnModMode mode = mod ? mod->mode : AttnModMode::none;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        double t = logits.data[i];
        if (mode == AttnModMode::additive) t += mod->values.data[i];
        else if (mode != AttnModMode::none) t *= mod->values.data[i];
        pre.data[i] = t * inv_scale;
    }
    Tensor2 probs = softmax_rows(pre);
    Tensor2 out = matmul(probs, v);
    if (cache) {
        cache->logits = std::move(logits);
        cache->probs = std::move(probs);
    }
    return out;
}

AttentionCoreGrads attention_core_backward(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                                           const AttentionModMatrix* mod,
                                           const AttentionCoreCache& cache, const Tensor2& dout,
                                           Tensor2* dmod) {
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
    const AttnModMode mode = mod ? mod->mode : AttnModMode::none;

    Tensor2 dprobs = matmul_nt(dout, v);           // dA = dOut V^T
    Tensor2 dv = matmul_tn(cache.probs, dout);     // dV = A^T dOut
    Tensor2 dpre = softmax_rows_backward(cache.probs, dprobs);

    Tensor2 dlogits(dpre.rows, dpre.cols);
    for (size_t i = 0; i < dpre.data.size(); ++i) {
        const double g = dpre.data[i] * inv_scale;
        if (mode == AttnModMode::additive) {
            dlogits.data[i] = g;
            if (dmod) dmod->data[i] += g;
        } else if (mode == AttnModMode::none) {
            dlogits.data[i] = g;
        } else {
            dlogits.data[i] = g * mod->values.data[i];
            if (dmod) dmod->data[i] += g * cache.logits.data[i];
        }
    }
    AttentionCoreGrads grads;
    grads.dq = matmul(dlogits, k);     // dQ = dL K
    grads.dk = matmul_tn(dlogits, q);  // dK = dL^T Q
    grads.dv = std::move(dv);
    return grads;
}

Tensor2 modified_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                           const AttentionModMatrix& mod) {
    require_finite(q, "modified_attention");
    require_finite(k, "modified_attention");
    require_finite(v, "modified_attention");
    return attention_core_forward(q, k, v, &mod, nullptr);
}

static Tensor2 head_slice(const Tensor2& x, int head, int dk) {
    Tensor2 s(x.rows, dk);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i) + head * dk;
        double* si = s.row(i);
        for (int j = 0; j < dk; ++j) si[j] = xi[j];
    }
    return s;
}

static void head_unslice(Tensor2& x, const Tensor2& s, int head, int dk) {
    for (int i = 0; i < x.rows; ++i) {
        double* xi = x.row(i) + head * dk;
        const double* si = s.row(i);
        for (int j = 0; j < dk; ++j) xi[j] += si[j];
    }
}

Tensor2 multihead_forward(const AttentionWeights& wts, const Tensor2& x,
                          const AttentionModMatrix* mod, MultiHeadCache* cache) {
    const int d = x.cols;
    const int heads = wts.num_heads;
    if (d % heads != 0) throw std::invalid_argument("multihead: model dim not divisible by heads");
    const int dk = d / heads;

    MultiHeadCache local;
    MultiHeadCache& c = cache ? *cache : local;
    c.per_head.assign(heads, {});

    c.q = linear_forward(wts.wq, x, &c.q_in);
    c.k = linear_forward(wts.wk, x, &c.k_in);
    c.v = linear_forward(wts.wv, x, &c.v_in);

    Tensor2 concat(x.rows, d);
    for (int h = 0; h < heads; ++h) {
        Tensor2 qh = head_slice(c.q, h, dk);
        Tensor2 kh = head_slice(c.k, h, dk);
        Tensor2 vh = head_slice(c.v, h, dk);
        Tensor2 oh = attention_core_forward(qh, kh, vh, mod, cache ? &c.per_head[h] : nullptr);
        head_unslice(concat, oh, h, dk);
    }
    c.concat = concat;
    return linear_forward(wts.wo, concat, &c.o_in);
}

Tensor2 multihead_backward(const AttentionWeights& wts, const MultiHeadCache& cache,
                           const AttentionModMatrix* mod, const Tensor2& dy,
                           AttentionWeightGrads* wgrads, Tensor2* dmod) {
    const int d = cache.q.cols;
    const int heads = wts.num_heads;
    const int dk = d / heads;

    Tensor2 dconcat = linear_backward(wts.wo, cache.o_in, dy, wgrads ? &wgrads->dwo : nullptr,
                                      wgrads ? &wgrads->dbo : nullptr);

    Tensor2 dq(cache.q.rows, d), dk_full(cache.q.rows, d), dv_full(cache.q.rows, d);
    for (int h = 0; h < heads; ++h) {
        Tensor2 qh = head_slice(cache.q, h, dk);
        Tensor2 kh = head_slice(cache.k, h, dk);
        Tensor2 vh = head_slice(cache.v, h, dk);
        Tensor2 doh = head_slice(dconcat, h, dk);
        AttentionCoreGrads g =
            attention_core_backward(qh, kh, vh, mod, cache.per_head[h], doh, dmod);
        head_unslice(dq, g.dq, h, dk);
        head_unslice(dk_full, g.dk, h, dk);
        head_unslice(dv_full, g.dv, h, dk);
    }

    Tensor2 dx = linear_backward(wts.wq, cache.q_in, dq, wgrads ? &wgrads->dwq : nullptr,
                                 wgrads ? &wgrads->dbq : nullptr);
    add_inplace(dx, linear_backward(wts.wk, cache.k_in, dk_full, wgrads ? &wgrads->dwk : nullptr,
                                    wgrads ? &wgrads->dbk : nullptr));
    add_inplace(dx, linear_backward(wts.wv, cache.v_in, dv_full, wgrads ? &wgrads->dwv : nullptr,
                                    wgrads ? &wgrads->dbv : nullptr));
    return dx;
}

}  // namespace hpt
