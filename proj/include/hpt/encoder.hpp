#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpt/attn_mod.hpp"
#include "hpt/layers.hpp"
#include "hpt/param.hpp"
#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

struct EncoderConfig {
    int num_layers = 3;
    int model_dim = 32;
    int num_heads = 4;
    int head_dim = 8;
    int max_seq_len = 96;
    int vocab_size = 512;
    int mlp_hidden = 64;
    uint64_t seed = 1;

    void validate() const;  // model_dim == num_heads * head_dim, positive counts
};

// Lowercasing word tokenizer: text splits on non-alphanumerics, each word
// splits into chunks of at most 4 characters, each chunk hashes to an id in
// [1, vocab_size). Id 0 is the end-of-text token.
struct Tokenizer {
    int vocab_size = 512;
    static constexpr int eot_id = 0;

    std::vector<std::string> split_words(const std::string& text) const;
    std::vector<int> word_token_ids(const std::string& word) const;
};

// Offsets of the [class | global | high | low] blocks. Blocks are contiguous
// and in this order; the low block ends with the end-of-text token.
struct SegmentLayout {
    int class_off = 0, class_len = 0;
    int global_off = 0, global_len = 0;
    int high_off = 0, high_len = 0;
    int low_off = 0, low_len = 0;

    int seq_len() const { return class_len + global_len + high_len + low_len; }
    int eot_pos() const { return low_off + low_len - 1; }
    bool in_low(int i) const { return i >= low_off && i < low_off + low_len; }
};

struct WordSpan {
    std::string word;
    int begin = 0;  // token index in full-sequence coordinates
    int end = 0;    // one past the last token
};

struct TokenSequence {
    std::vector<int> token_ids;  // layout.seq_len() entries; prompt slots hold eot_id
    std::vector<WordSpan> word_spans;
    SegmentLayout layout;
};

// [class | global placeholders | high placeholders | description + EOT].
// Errors if the result exceeds cfg.max_seq_len.
TokenSequence build_sequence(const Tokenizer& tok, const EncoderConfig& cfg,
                             const std::string& class_name, int n_g, int n_h,
                             const std::string& description);

// Description-only sequence (all prompt blocks empty); the frozen-encoder view.
TokenSequence build_plain_sequence(const Tokenizer& tok, const EncoderConfig& cfg,
                                   const std::string& text);

// Last-token hidden state per layer input: h[0] is the embedding-layer
// output, h[l] the output of layer l, for l = 0..N-1. Exactly N entries.
struct LayerStates {
    std::vector<std::vector<double>> h;
};

// All learnable state: per-layer global prompts, the high-prompt generator f,
// the adapter phi (identity at init), per-layer additive scalars, and the
// visual prompts. lam tensors are 1 x num_layers.
struct PromptBundle {
    std::vector<Parameter> global_prompts;  // num_layers entries, n_g x d
    Parameter gen_w, gen_b;                 // f: d -> d affine
    Parameter adapter_w, adapter_b;         // phi: d -> d affine, identity init
    Parameter lam_e2e, lam_e2a;             // 1 x num_layers
    std::vector<Parameter> visual_prompts;  // num_layers entries, n_v x d
    int n_g = 0;
    int n_h = 0;

    ParamRefs parameters();       // every parameter above
    ParamRefs text_parameters();  // without the visual prompts
    ParamRefs lambda_parameters();
};

PromptBundle make_prompt_bundle(const EncoderConfig& cfg, int n_g, int n_h, int n_visual,
                                uint64_t seed);

struct LayerWeights {
    LayerNormWeights ln1, ln2;
    AttentionWeights attn;
    LinearWeights mlp1, mlp2;
};

struct BlockCache {
    Tensor2 x_in;
    LayerNormCache ln1;
    MultiHeadCache attn;
    LayerNormCache ln2;
    LinearCache mlp1_in, mlp2_in;
    Tensor2 gelu_in;
};

// Pre-LN transformer block: x + attn(ln1(x), M), then + mlp(ln2(.)).
Tensor2 block_forward(const LayerWeights& wts, const Tensor2& x, const AttentionModMatrix* mod,
                      BlockCache* cache);
// Input gradient; dmod accumulated when non-null. Block weights are frozen.
Tensor2 block_backward(const LayerWeights& wts, const BlockCache& cache,
                       const AttentionModMatrix* mod, const Tensor2& dout, Tensor2* dmod);

struct FrozenResult {
    LayerStates states;
    std::vector<double> z;  // projected final embedding (unnormalized)
};

// Frozen text backbone with seeded weights standing in for a pre-trained
// model. Deterministic; nothing here ever receives gradients.
struct TextEncoder {
    EncoderConfig cfg;
    Tensor2 token_embedding;  // vocab x d
    Tensor2 pos_embedding;    // max_seq_len x d
    std::vector<LayerWeights> layers;
    LayerNormWeights ln_final;
    Tensor2 text_proj;  // d x d

    explicit TextEncoder(const EncoderConfig& cfg);

    FrozenResult encode_frozen(const TokenSequence& seq) const;
};

struct HierCache {
    std::vector<BlockCache> blocks;
    LayerNormCache ln_f;
    Tensor2 x_final;               // output of the last layer
    std::vector<double> eot_post;  // ln_final output at the EOT position
    TokenSequence seq;             // layout used for routing in backward
};

// The layer recurrence: class and low blocks flow through, global and high
// blocks are replaced at every layer input by that layer's fresh prompts
// (their layer outputs are discarded). Returns the projected embedding of the
// low block's final token. mods is empty (plain attention) or one per layer.
std::vector<double> hierarchical_forward(const TextEncoder& enc, const TokenSequence& seq,
                                         const PromptBundle& bundle,
                                         const std::vector<Tensor2>& p_h,
                                         const std::vector<AttentionModMatrix>& mods,
                                         HierCache* cache);

struct HierGrads {
    std::vector<Tensor2> d_ph;   // per layer, n_h x d
    std::vector<Tensor2> d_mod;  // per layer, seq x seq (empty when mods were empty)
};

// Accumulates into bundle.global_prompts[l].grad and, for additive mods, into
// bundle.lam_*.grad via each matrix's pair kinds. Returns gradients for the
// injected high prompts and the raw matrices.
HierGrads hierarchical_backward(const TextEncoder& enc, const HierCache& cache,
                                PromptBundle& bundle,
                                const std::vector<AttentionModMatrix>& mods,
                                const std::vector<double>& dz);

// Per-layer high prompts: row i of layer l is f(states[i].h[l]).
// Errors if the states disagree on layer count or dimension.
std::vector<Tensor2> generate_high_prompts(const std::vector<LayerStates>& states,
                                           const PromptBundle& bundle);
// Routes per-layer prompt gradients into gen_w / gen_b.
void high_prompts_backward(const std::vector<LayerStates>& states,
                           const std::vector<Tensor2>& d_ph, PromptBundle& bundle);

std::vector<double> apply_adapter(const std::vector<double>& z, const PromptBundle& bundle);
// Returns dz; accumulates into adapter_w / adapter_b.
std::vector<double> adapter_backward(const std::vector<double>& z,
                                     const std::vector<double>& dout, PromptBundle& bundle);

// Deep-prompted toy visual encoder over externally produced feature tokens.
// No positional table: features are an unordered token set, pooled by mean.
struct VisualEncoder {
    EncoderConfig cfg;
    std::vector<LayerWeights> layers;
    LayerNormWeights ln_final;
    Tensor2 proj;  // d x d

    explicit VisualEncoder(const EncoderConfig& cfg);
};

struct VisualCache {
    std::vector<BlockCache> blocks;
    LayerNormCache ln_f;
    Tensor2 ln_f_out;
    int n_prompt = 0;
    int n_feat = 0;
};

// prompts == nullptr runs the frozen path (no prompt positions at all).
// Otherwise layout is [prompts | feature tokens] with per-layer replacement.
// The embedding is proj applied to the mean over feature positions.
std::vector<double> visual_forward(const VisualEncoder& enc, const Tensor2& feature_tokens,
                                   const std::vector<Parameter>* prompts, VisualCache* cache);
// Accumulates into prompts[l].grad; feature-token gradients are discarded.
void visual_backward(const VisualEncoder& enc, const VisualCache& cache,
                     const std::vector<double>& dz, std::vector<Parameter>* prompts);

struct WordScore {
    std::string word;
    double score = 0.0;
};

struct AttnDump {
    std::vector<WordScore> words;  // per-word sums over spans, sorted descending
    std::vector<double> row;       // head-averaged softmax row of the EOT query
};

// Attention of the low block's final token at the given layer, aggregated to
// word granularity over the description spans. top_k <= 0 keeps all words.
AttnDump dump_attention_scores(const TextEncoder& enc, const TokenSequence& seq,
                               const PromptBundle& bundle, const std::vector<Tensor2>& p_h,
                               const std::vector<AttentionModMatrix>& mods, int layer, int top_k);

}  // namespace hpt
