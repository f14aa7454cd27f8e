#pragma once

#include <optional>
#include <vector>

#include "hpt/attn_mod.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Hand-derived forward/backward pairs for the small, fixed layer set the
// encoders need. Each forward returns a cache; the matching backward
// consumes it. Weight gradients are written only when a grad sink is passed,
// so frozen weights never accumulate anything.

// ---- affine: y = x W + b, row-major activations (S x in) ----------------

struct LinearWeights {
    Tensor2 w;              // in x out
    std::vector<double> b;  // out
};

struct LinearCache {
    Tensor2 x;
};

Tensor2 linear_forward(const LinearWeights& wts, const Tensor2& x, LinearCache* cache);
// Returns dX. If grad sinks are non-null, accumulates dW += X^T dY, db += colsum(dY).
Tensor2 linear_backward(const LinearWeights& wts, const LinearCache& cache, const Tensor2& dy,
                        Tensor2* dw, std::vector<double>* db);

// ---- layer norm over the last dimension, per row -------------------------

struct LayerNormWeights {
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-5;
};

struct LayerNormCache {
    Tensor2 xhat;
    std::vector<double> inv_std;
};

Tensor2 layernorm_forward(const LayerNormWeights& wts, const Tensor2& x, LayerNormCache* cache);
// Input gradient only; gamma/beta belong to the frozen encoders.
Tensor2 layernorm_backward(const LayerNormWeights& wts, const LayerNormCache& cache,
                           const Tensor2& dy);

// ---- GELU (exact erf form; smooth, so finite differences stay clean) -----

Tensor2 gelu_forward(const Tensor2& x, Tensor2* cache_x);
Tensor2 gelu_backward(const Tensor2& cache_x, const Tensor2& dy);

// ---- single-matrix attention core ----------------------------------------
//
// additive:       softmax((Q K^T + M) / sqrt(d_k)) V
// multiplicative: softmax((Q K^T .* M) / sqrt(d_k)) V   (entries must be > 0)
// selective:      same formula; the builder fills M with {1+beta, 1}
// none:           softmax(Q K^T / sqrt(d_k)) V

struct AttentionCoreCache {
    Tensor2 logits;  // Q K^T
    Tensor2 probs;   // softmax output
};

Tensor2 attention_core_forward(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                               const AttentionModMatrix* mod, AttentionCoreCache* cache);

struct AttentionCoreGrads {
    Tensor2 dq, dk, dv;
};

// dM (gradient w.r.t. the modification values) is accumulated into dmod when
// non-null; only additive mode routes it anywhere (the lambda scalars).
AttentionCoreGrads attention_core_backward(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                                           const AttentionModMatrix* mod,
                                           const AttentionCoreCache& cache, const Tensor2& dout,
                                           Tensor2* dmod);

// Public single-call form of the OP (validates shapes and M entries).
Tensor2 modified_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                           const AttentionModMatrix& mod);

// ---- multi-head self-attention with shared per-layer M -------------------

struct AttentionWeights {
    LinearWeights wq, wk, wv, wo;
    int num_heads = 1;
};

struct MultiHeadCache {
    LinearCache q_in, k_in, v_in, o_in;
    Tensor2 q, k, v;                            // S x d
    std::vector<AttentionCoreCache> per_head;   // logits/probs per head
    Tensor2 concat;                             // S x d before the output proj
};

Tensor2 multihead_forward(const AttentionWeights& wts, const Tensor2& x,
                          const AttentionModMatrix* mod, MultiHeadCache* cache);

struct AttentionWeightGrads {
    Tensor2 dwq, dwk, dwv, dwo;
    std::vector<double> dbq, dbk, dbv, dbo;
};

// dX; accumulates into wgrads when non-null and into dmod when non-null
// (summed over heads, since M is shared across heads). `mod` must be the
// matrix that was passed to the matching forward call.
Tensor2 multihead_backward(const AttentionWeights& wts, const MultiHeadCache& cache,
                           const AttentionModMatrix* mod, const Tensor2& dy,
                           AttentionWeightGrads* wgrads, Tensor2* dmod);

}  // namespace hpt
