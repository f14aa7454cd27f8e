#pragma once

#include <cstdint>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

enum class AttnModMode { none, additive, multiplicative, multiplicative_selective };

// Which relation produced a matrix entry; used by the selective builder and
// for routing gradients back into the per-layer lambda scalars.
enum class PairKind : uint8_t { none = 0, e2e = 1, e2a = 2, related = 3 };

// Per-layer attention modification matrix M aligned to a token sequence.
// Additive mode: entries outside the low block are 0. Multiplicative modes:
// entries outside the low block are 1 and all entries strictly positive.
struct AttentionModMatrix {
    AttnModMode mode = AttnModMode::none;
    Tensor2 values;
    std::vector<PairKind> kinds;  // values.rows * values.cols entries, row-major

    AttentionModMatrix() = default;
    AttentionModMatrix(AttnModMode m, int seq_len, double fill)
        : mode(m),
          values(seq_len, seq_len, fill),
          kinds(static_cast<size_t>(seq_len) * seq_len, PairKind::none) {}

    PairKind kind_at(int i, int j) const { return kinds[static_cast<size_t>(i) * values.cols + j]; }
    void set_kind(int i, int j, PairKind k) { kinds[static_cast<size_t>(i) * values.cols + j] = k; }
};

const char* to_string(AttnModMode m);
AttnModMode attn_mod_mode_from_string(const std::string& s);

}  // namespace hpt
