#include "hpt/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace hpt {

void EncoderConfig::validate() const {
    if (num_layers <= 0 || model_dim <= 0 || num_heads <= 0 || head_dim <= 0 ||
        max_seq_len <= 0 || vocab_size <= 1 || mlp_hidden <= 0)
        throw std::invalid_argument("EncoderConfig: counts must be positive");
    if (model_dim != num_heads * head_dim)
        throw std::invalid_argument("EncoderConfig: model_dim != num_heads * head_dim");
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) const {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::vector<int> Tokenizer::word_token_ids(const std::string& word) const {
    std::string low;
    low.reserve(word.size());
    for (char ch : word) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    std::vector<int> ids;
    for (size_t off = 0; off < low.size(); off += 4) {
        const std::string chunk = low.substr(off, 4);
        ids.push_back(1 + static_cast<int>(fnv1a64(chunk) % static_cast<uint64_t>(vocab_size - 1)));
    }
    return ids;
}

TokenSequence build_sequence(const Tokenizer& tok, const EncoderConfig& cfg,
                             const std::string& class_name, int n_g, int n_h,
                             const std::string& description) {
    if (tok.vocab_size > cfg.vocab_size)
        throw std::invalid_argument("build_sequence: tokenizer vocabulary exceeds encoder's");
    TokenSequence seq;
    SegmentLayout& lay = seq.layout;

    std::vector<int> class_ids;
    for (const std::string& w : tok.split_words(class_name))
        for (int id : tok.word_token_ids(w)) class_ids.push_back(id);

    lay.class_off = 0;
    lay.class_len = static_cast<int>(class_ids.size());
    lay.global_off = lay.class_off + lay.class_len;
    lay.global_len = n_g;
    lay.high_off = lay.global_off + lay.global_len;
    lay.high_len = n_h;
    lay.low_off = lay.high_off + lay.high_len;

    seq.token_ids.assign(class_ids.begin(), class_ids.end());
    seq.token_ids.resize(static_cast<size_t>(lay.low_off), Tokenizer::eot_id);

    for (const std::string& w : tok.split_words(description)) {
        WordSpan span;
        span.word = w;
        span.begin = static_cast<int>(seq.token_ids.size());
        for (int id : tok.word_token_ids(w)) seq.token_ids.push_back(id);
        span.end = static_cast<int>(seq.token_ids.size());
        seq.word_spans.push_back(std::move(span));
    }
    seq.token_ids.push_back(Tokenizer::eot_id);
    lay.low_len = static_cast<int>(seq.token_ids.size()) - lay.low_off;

    if (lay.seq_len() > cfg.max_seq_len)
        throw std::invalid_argument("build_sequence: sequence of length " +
                                    std::to_string(lay.seq_len()) + " exceeds max_seq_len " +
                                    std::to_string(cfg.max_seq_len));
    return seq;
}

TokenSequence build_plain_sequence(const Tokenizer& tok, const EncoderConfig& cfg,
                                   const std::string& text) {
    return build_sequence(tok, cfg, "", 0, 0, text);
}

// ---- bundle ---------------------------------------------------------------

ParamRefs PromptBundle::parameters() {
    ParamRefs out = text_parameters();
    for (Parameter& p : visual_prompts) out.push_back(&p);
    return out;
}

ParamRefs PromptBundle::text_parameters() {
    ParamRefs out;
    for (Parameter& p : global_prompts) out.push_back(&p);
    out.push_back(&gen_w);
    out.push_back(&gen_b);
    out.push_back(&adapter_w);
    out.push_back(&adapter_b);
    return out;
}

ParamRefs PromptBundle::lambda_parameters() { return {&lam_e2e, &lam_e2a}; }

PromptBundle make_prompt_bundle(const EncoderConfig& cfg, int n_g, int n_h, int n_visual,
                                uint64_t seed) {
    cfg.validate();
    const int d = cfg.model_dim;
    PromptBundle b;
    b.n_g = n_g;
    b.n_h = n_h;
    // Prompt rows replace residual-stream rows, so they are drawn at the
    // token-embedding scale; rows much smaller than that leave layer norm
    // nearly singular.
    const double s_p = 1.0 / std::sqrt(static_cast<double>(d));
    Rng root(seed);
    for (int l = 0; l < cfg.num_layers; ++l) {
        Rng r = root.fork(1000 + static_cast<uint64_t>(l));
        b.global_prompts.emplace_back("p_g." + std::to_string(l),
                                      random_gaussian(r, n_g, d, s_p));
    }
    Rng rg = root.fork(2);
    b.gen_w = Parameter("f.w", random_gaussian(rg, d, d, s_p));
    b.gen_b = Parameter("f.b", Tensor2(1, d));
    Tensor2 eye(d, d);
    for (int i = 0; i < d; ++i) eye(i, i) = 1.0;
    b.adapter_w = Parameter("phi.w", eye);
    b.adapter_b = Parameter("phi.b", Tensor2(1, d));
    b.lam_e2e = Parameter("lam_e2e", Tensor2(1, cfg.num_layers));
    b.lam_e2a = Parameter("lam_e2a", Tensor2(1, cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; ++l) {
        Rng r = root.fork(3000 + static_cast<uint64_t>(l));
        b.visual_prompts.emplace_back("p_v." + std::to_string(l),
                                      random_gaussian(r, n_visual, d, s_p));
    }
    return b;
}

// ---- frozen weights -------------------------------------------------------

static LayerWeights make_layer(Rng& rng, const EncoderConfig& cfg) {
    const int d = cfg.model_dim;
    const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_h = 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden));
    LayerWeights lw;
    lw.ln1.gamma.assign(d, 1.0);
    lw.ln1.beta.assign(d, 0.0);
    lw.ln2.gamma.assign(d, 1.0);
    lw.ln2.beta.assign(d, 0.0);
    lw.attn.num_heads = cfg.num_heads;
    for (LinearWeights* w : {&lw.attn.wq, &lw.attn.wk, &lw.attn.wv, &lw.attn.wo}) {
        w->w = random_gaussian(rng, d, d, s_d);
        w->b.assign(d, 0.0);
    }
    lw.mlp1.w = random_gaussian(rng, d, cfg.mlp_hidden, s_d);
    lw.mlp1.b.assign(cfg.mlp_hidden, 0.0);
    lw.mlp2.w = random_gaussian(rng, cfg.mlp_hidden, d, s_h);
    lw.mlp2.b.assign(d, 0.0);
    return lw;
}

TextEncoder::TextEncoder(const EncoderConfig& c) : cfg(c) {
    cfg.validate();
    const int d = cfg.model_dim;
    Rng root(cfg.seed);
    Rng re = root.fork(11);
    token_embedding = random_gaussian(re, cfg.vocab_size, d, 1.0 / std::sqrt(d));
    Rng rp = root.fork(12);
    pos_embedding = random_gaussian(rp, cfg.max_seq_len, d, 0.01);
    for (int l = 0; l < cfg.num_layers; ++l) {
        Rng rl = root.fork(100 + static_cast<uint64_t>(l));
        layers.push_back(make_layer(rl, cfg));
    }
    ln_final.gamma.assign(d, 1.0);
    ln_final.beta.assign(d, 0.0);
    Rng rj = root.fork(13);
    text_proj = random_gaussian(rj, d, d, 1.0 / std::sqrt(d));
}

VisualEncoder::VisualEncoder(const EncoderConfig& c) : cfg(c) {
    cfg.validate();
    const int d = cfg.model_dim;
    // The visual tower reuses the text tower's frozen draws. A real dual
    // encoder arrives pre-trained with its two spaces aligned; sharing the
    // stack is the desk-scale stand-in for that alignment, and it is what
    // gives prompt tuning a zero-shot signal to start from.
    Rng root(cfg.seed);
    for (int l = 0; l < cfg.num_layers; ++l) {
        Rng rl = root.fork(100 + static_cast<uint64_t>(l));
        layers.push_back(make_layer(rl, cfg));
    }
    ln_final.gamma.assign(d, 1.0);
    ln_final.beta.assign(d, 0.0);
    Rng rj = root.fork(13);
    proj = random_gaussian(rj, d, d, 1.0 / std::sqrt(d));
}

// ---- block ----------------------------------------------------------------

Tensor2 block_forward(const LayerWeights& wts, const Tensor2& x, const AttentionModMatrix* mod,
                      BlockCache* cache) {
    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    c.x_in = x;

    Tensor2 a = layernorm_forward(wts.ln1, x, &c.ln1);
    Tensor2 attn = multihead_forward(wts.attn, a, mod, cache ? &c.attn : nullptr);
    Tensor2 y = add(x, attn);

    Tensor2 b = layernorm_forward(wts.ln2, y, &c.ln2);
    Tensor2 h1 = linear_forward(wts.mlp1, b, &c.mlp1_in);
    Tensor2 g = gelu_forward(h1, &c.gelu_in);
    Tensor2 m = linear_forward(wts.mlp2, g, &c.mlp2_in);
    return add(y, m);
}

Tensor2 block_backward(const LayerWeights& wts, const BlockCache& cache,
                       const AttentionModMatrix* mod, const Tensor2& dout, Tensor2* dmod) {
    Tensor2 dy = dout;
    Tensor2 dg = linear_backward(wts.mlp2, cache.mlp2_in, dout, nullptr, nullptr);
    Tensor2 dh1 = gelu_backward(cache.gelu_in, dg);
    Tensor2 db = linear_backward(wts.mlp1, cache.mlp1_in, dh1, nullptr, nullptr);
    add_inplace(dy, layernorm_backward(wts.ln2, cache.ln2, db));

    Tensor2 dx = dy;
    Tensor2 da = multihead_backward(wts.attn, cache.attn, mod, dy, nullptr, dmod);
    add_inplace(dx, layernorm_backward(wts.ln1, cache.ln1, da));
    return dx;
}

// ---- forward passes -------------------------------------------------------

static Tensor2 embed_sequence(const TextEncoder& enc, const TokenSequence& seq) {
    const SegmentLayout& lay = seq.layout;
    const int S = lay.seq_len();
    const int d = enc.cfg.model_dim;
    if (S > enc.cfg.max_seq_len) throw std::invalid_argument("encode: sequence exceeds max_seq_len");
    if (static_cast<int>(seq.token_ids.size()) != S)
        throw std::invalid_argument("encode: token count does not match layout");
    Tensor2 x(S, d);
    for (int i = 0; i < S; ++i) {
        const bool is_prompt = (i >= lay.global_off && i < lay.global_off + lay.global_len) ||
                               (i >= lay.high_off && i < lay.high_off + lay.high_len);
        if (is_prompt) continue;  // replaced at the first layer input
        const int id = seq.token_ids[i];
        if (id < 0 || id >= enc.cfg.vocab_size)
            throw std::invalid_argument("encode: token id out of range");
        const double* te = enc.token_embedding.row(id);
        const double* pe = enc.pos_embedding.row(i);
        double* xi = x.row(i);
        for (int j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
    }
    return x;
}

static std::vector<double> project_row(const Tensor2& proj, const double* row) {
    std::vector<double> z(proj.cols, 0.0);
    for (int t = 0; t < proj.rows; ++t) {
        const double r = row[t];
        const double* pr = proj.row(t);
        for (int j = 0; j < proj.cols; ++j) z[j] += r * pr[j];
    }
    return z;
}

FrozenResult TextEncoder::encode_frozen(const TokenSequence& seq) const {
    if (seq.layout.global_len != 0 || seq.layout.high_len != 0)
        throw std::invalid_argument("encode_frozen: sequence must not carry prompt blocks");
    Tensor2 x = embed_sequence(*this, seq);
    const int eot = seq.layout.eot_pos();

    FrozenResult out;
    out.states.h.reserve(cfg.num_layers);
    std::vector<double> h0(x.row(eot), x.row(eot) + cfg.model_dim);
    out.states.h.push_back(std::move(h0));
    for (int l = 0; l < cfg.num_layers; ++l) {
        x = block_forward(layers[l], x, nullptr, nullptr);
        if (l + 1 < cfg.num_layers)
            out.states.h.emplace_back(x.row(eot), x.row(eot) + cfg.model_dim);
    }
    Tensor2 a = layernorm_forward(ln_final, x, nullptr);
    out.z = project_row(text_proj, a.row(eot));
    return out;
}

static void check_hier_args(const TextEncoder& enc, const TokenSequence& seq,
                            const PromptBundle& bundle, const std::vector<Tensor2>& p_h,
                            const std::vector<AttentionModMatrix>& mods) {
    const SegmentLayout& lay = seq.layout;
    const int N = enc.cfg.num_layers;
    const int d = enc.cfg.model_dim;
    if (lay.global_len > 0) {
        if (static_cast<int>(bundle.global_prompts.size()) != N)
            throw std::invalid_argument("hierarchical: bundle global prompts must cover all layers");
        for (const Parameter& p : bundle.global_prompts)
            if (p.value.rows != lay.global_len || p.value.cols != d)
                throw std::invalid_argument("hierarchical: global prompt shape mismatch");
    }
    if (lay.high_len > 0) {
        if (static_cast<int>(p_h.size()) != N)
            throw std::invalid_argument("hierarchical: high prompts must cover all layers");
        for (const Tensor2& t : p_h)
            if (t.rows != lay.high_len || t.cols != d)
                throw std::invalid_argument("hierarchical: high prompt shape mismatch");
    }
    if (!mods.empty()) {
        if (static_cast<int>(mods.size()) != N)
            throw std::invalid_argument("hierarchical: need one modification matrix per layer");
        for (const AttentionModMatrix& m : mods)
            if (m.mode != AttnModMode::none &&
                (m.values.rows != lay.seq_len() || m.values.cols != lay.seq_len()))
                throw std::invalid_argument("hierarchical: modification matrix size mismatch");
    }
}

static void replace_rows(Tensor2& x, int off, const Tensor2& rows) {
    for (int i = 0; i < rows.rows; ++i) {
        const double* src = rows.row(i);
        double* dst = x.row(off + i);
        for (int j = 0; j < rows.cols; ++j) dst[j] = src[j];
    }
}

std::vector<double> hierarchical_forward(const TextEncoder& enc, const TokenSequence& seq,
                                         const PromptBundle& bundle,
                                         const std::vector<Tensor2>& p_h,
                                         const std::vector<AttentionModMatrix>& mods,
                                         HierCache* cache) {
    check_hier_args(enc, seq, bundle, p_h, mods);
    const SegmentLayout& lay = seq.layout;
    const int N = enc.cfg.num_layers;

    Tensor2 x = embed_sequence(enc, seq);
    if (cache) {
        cache->blocks.assign(N, {});
        cache->seq = seq;
    }
    for (int l = 0; l < N; ++l) {
        if (lay.global_len > 0) replace_rows(x, lay.global_off, bundle.global_prompts[l].value);
        if (lay.high_len > 0) replace_rows(x, lay.high_off, p_h[l]);
        const AttentionModMatrix* mod = mods.empty() ? nullptr : &mods[l];
        x = block_forward(enc.layers[l], x, mod, cache ? &cache->blocks[l] : nullptr);
    }
    Tensor2 a = layernorm_forward(enc.ln_final, x, cache ? &cache->ln_f : nullptr);
    const int eot = lay.eot_pos();
    std::vector<double> z = project_row(enc.text_proj, a.row(eot));
    if (cache) {
        cache->x_final = std::move(x);
        cache->eot_post.assign(a.row(eot), a.row(eot) + enc.cfg.model_dim);
    }
    return z;
}

HierGrads hierarchical_backward(const TextEncoder& enc, const HierCache& cache,
                                PromptBundle& bundle,
                                const std::vector<AttentionModMatrix>& mods,
                                const std::vector<double>& dz) {
    const SegmentLayout& lay = cache.seq.layout;
    const int N = enc.cfg.num_layers;
    const int d = enc.cfg.model_dim;
    const int S = lay.seq_len();
    const int eot = lay.eot_pos();

    HierGrads grads;
    grads.d_ph.assign(lay.high_len > 0 ? N : 0, Tensor2(lay.high_len, d));
    grads.d_mod.assign(mods.empty() ? 0 : N, Tensor2(S, S));

    // z_j = sum_t a[eot][t] proj[t][j]
    Tensor2 da(S, d);
    for (int t = 0; t < d; ++t) {
        double acc = 0.0;
        const double* pr = enc.text_proj.row(t);
        for (int j = 0; j < d; ++j) acc += dz[j] * pr[j];
        da(eot, t) = acc;
    }
    Tensor2 dx = layernorm_backward(enc.ln_final, cache.ln_f, da);

    for (int l = N - 1; l >= 0; --l) {
        const AttentionModMatrix* mod = mods.empty() ? nullptr : &mods[l];
        Tensor2* dmod = mods.empty() ? nullptr : &grads.d_mod[l];
        dx = block_backward(enc.layers[l], cache.blocks[l], mod, dx, dmod);
        if (lay.global_len > 0) {
            Tensor2& g = bundle.global_prompts[l].grad;
            for (int i = 0; i < lay.global_len; ++i) {
                double* gi = g.row(i);
                double* xi = dx.row(lay.global_off + i);
                for (int j = 0; j < d; ++j) {
                    gi[j] += xi[j];
                    xi[j] = 0.0;
                }
            }
        }
        if (lay.high_len > 0) {
            Tensor2& g = grads.d_ph[l];
            for (int i = 0; i < lay.high_len; ++i) {
                double* gi = g.row(i);
                double* xi = dx.row(lay.high_off + i);
                for (int j = 0; j < d; ++j) {
                    gi[j] += xi[j];
                    xi[j] = 0.0;
                }
            }
        }
    }

    // additive matrices carry the per-layer scalars; route by pair kind
    for (size_t l = 0; l < grads.d_mod.size(); ++l) {
        if (mods[l].mode != AttnModMode::additive) continue;
        double de2e = 0.0, de2a = 0.0;
        const Tensor2& dm = grads.d_mod[l];
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j) {
                const PairKind k = mods[l].kind_at(i, j);
                if (k == PairKind::e2e) de2e += dm(i, j);
                else if (k == PairKind::e2a) de2a += dm(i, j);
            }
        bundle.lam_e2e.grad(0, static_cast<int>(l)) += de2e;
        bundle.lam_e2a.grad(0, static_cast<int>(l)) += de2a;
    }
    return grads;
}

// ---- high prompts, adapter ------------------------------------------------

std::vector<Tensor2> generate_high_prompts(const std::vector<LayerStates>& states,
                                           const PromptBundle& bundle) {
    const int d = bundle.gen_w.value.rows;
    if (states.empty()) throw std::invalid_argument("generate_high_prompts: no descriptions");
    const size_t N = states.front().h.size();
    for (const LayerStates& s : states) {
        if (s.h.size() != N)
            throw std::invalid_argument("generate_high_prompts: layer count mismatch");
        for (const std::vector<double>& v : s.h)
            if (static_cast<int>(v.size()) != d)
                throw std::invalid_argument("generate_high_prompts: state dim mismatch");
    }
    const int n_h = static_cast<int>(states.size());
    std::vector<Tensor2> out;
    out.reserve(N);
    for (size_t l = 0; l < N; ++l) {
        Tensor2 p(n_h, d);
        for (int i = 0; i < n_h; ++i) {
            const std::vector<double>& h = states[i].h[l];
            double* pi = p.row(i);
            for (int j = 0; j < d; ++j) {
                double acc = bundle.gen_b.value(0, j);
                for (int t = 0; t < d; ++t) acc += h[t] * bundle.gen_w.value(t, j);
                pi[j] = acc;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

void high_prompts_backward(const std::vector<LayerStates>& states,
                           const std::vector<Tensor2>& d_ph, PromptBundle& bundle) {
    const int d = bundle.gen_w.value.rows;
    if (d_ph.size() != states.front().h.size())
        throw std::invalid_argument("high_prompts_backward: layer count mismatch");
    for (size_t l = 0; l < d_ph.size(); ++l) {
        for (int i = 0; i < d_ph[l].rows; ++i) {
            const std::vector<double>& h = states[i].h[l];
            const double* dp = d_ph[l].row(i);
            for (int t = 0; t < d; ++t) {
                double* gw = bundle.gen_w.grad.row(t);
                const double ht = h[t];
                for (int j = 0; j < d; ++j) gw[j] += ht * dp[j];
            }
            double* gb = bundle.gen_b.grad.row(0);
            for (int j = 0; j < d; ++j) gb[j] += dp[j];
        }
    }
}

std::vector<double> apply_adapter(const std::vector<double>& z, const PromptBundle& bundle) {
    const int d = bundle.adapter_w.value.rows;
    if (static_cast<int>(z.size()) != d)
        throw std::invalid_argument("apply_adapter: dim mismatch");
    std::vector<double> out(d, 0.0);
    for (int j = 0; j < d; ++j) out[j] = bundle.adapter_b.value(0, j);
    for (int t = 0; t < d; ++t) {
        const double zt = z[t];
        const double* wr = bundle.adapter_w.value.row(t);
        for (int j = 0; j < d; ++j) out[j] += zt * wr[j];
    }
    return out;
}

std::vector<double> adapter_backward(const std::vector<double>& z,
                                     const std::vector<double>& dout, PromptBundle& bundle) {
    const int d = bundle.adapter_w.value.rows;
    std::vector<double> dz(d, 0.0);
    for (int t = 0; t < d; ++t) {
        const double* wr = bundle.adapter_w.value.row(t);
        double* gw = bundle.adapter_w.grad.row(t);
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            acc += dout[j] * wr[j];
            gw[j] += z[t] * dout[j];
        }
        dz[t] = acc;
    }
    double* gb = bundle.adapter_b.grad.row(0);
    for (int j = 0; j < d; ++j) gb[j] += dout[j];
    return dz;
}

// ---- visual ---------------------------------------------------------------

std::vector<double> visual_forward(const VisualEncoder& enc, const Tensor2& feature_tokens,
                                   const std::vector<Parameter>* prompts, VisualCache* cache) {
    const int d = enc.cfg.model_dim;
    const int N = enc.cfg.num_layers;
    if (feature_tokens.cols != d)
        throw std::invalid_argument("visual_forward: feature dim mismatch");
    int n_prompt = 0;
    if (prompts) {
        if (static_cast<int>(prompts->size()) != N)
            throw std::invalid_argument("visual_forward: need prompts for every layer");
        n_prompt = (*prompts)[0].value.rows;
        for (const Parameter& p : *prompts)
            if (p.value.rows != n_prompt || p.value.cols != d)
                throw std::invalid_argument("visual_forward: prompt shape mismatch");
    }
    const int n_feat = feature_tokens.rows;
    const int S = n_prompt + n_feat;
    if (S > enc.cfg.max_seq_len)
        throw std::invalid_argument("visual_forward: sequence exceeds max_seq_len");

    Tensor2 x(S, d);
    for (int i = 0; i < n_feat; ++i) {
        const double* src = feature_tokens.row(i);
        double* dst = x.row(n_prompt + i);
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (cache) {
        cache->blocks.assign(N, {});
        cache->n_prompt = n_prompt;
        cache->n_feat = n_feat;
    }
    for (int l = 0; l < N; ++l) {
        if (n_prompt > 0) replace_rows(x, 0, (*prompts)[l].value);
        x = block_forward(enc.layers[l], x, nullptr, cache ? &cache->blocks[l] : nullptr);
    }
    Tensor2 a = layernorm_forward(enc.ln_final, x, cache ? &cache->ln_f : nullptr);
    std::vector<double> pooled(d, 0.0);
    for (int i = 0; i < n_feat; ++i) {
        const double* ai = a.row(n_prompt + i);
        for (int j = 0; j < d; ++j) pooled[j] += ai[j];
    }
    for (double& v : pooled) v /= n_feat;
    if (cache) cache->ln_f_out = std::move(a);
    return project_row(enc.proj, pooled.data());
}

void visual_backward(const VisualEncoder& enc, const VisualCache& cache,
                     const std::vector<double>& dz, std::vector<Parameter>* prompts) {
    const int d = enc.cfg.model_dim;
    const int N = enc.cfg.num_layers;
    const int S = cache.n_prompt + cache.n_feat;

    std::vector<double> dpooled(d, 0.0);
    for (int t = 0; t < d; ++t) {
        const double* pr = enc.proj.row(t);
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += dz[j] * pr[j];
        dpooled[t] = acc;
    }
    Tensor2 da(S, d);
    for (int i = 0; i < cache.n_feat; ++i) {
        double* r = da.row(cache.n_prompt + i);
        for (int j = 0; j < d; ++j) r[j] = dpooled[j] / cache.n_feat;
    }
    Tensor2 dx = layernorm_backward(enc.ln_final, cache.ln_f, da);
    for (int l = N - 1; l >= 0; --l) {
        dx = block_backward(enc.layers[l], cache.blocks[l], nullptr, dx, nullptr);
        if (cache.n_prompt > 0 && prompts) {
            Tensor2& g = (*prompts)[l].grad;
            for (int i = 0; i < cache.n_prompt; ++i) {
                double* gi = g.row(i);
                double* xi = dx.row(i);
                for (int j = 0; j < d; ++j) {
                    gi[j] += xi[j];
                    xi[j] = 0.0;
                }
            }
        }
    }
}

// ---- attention dump ---------------------------------------------------------

AttnDump dump_attention_scores(const TextEncoder& enc, const TokenSequence& seq,
                               const PromptBundle& bundle, const std::vector<Tensor2>& p_h,
                               const std::vector<AttentionModMatrix>& mods, int layer,
                               int top_k) {
    if (layer < 0 || layer >= enc.cfg.num_layers)
        throw std::invalid_argument("dump_attention_scores: layer out of range");
    HierCache cache;
    hierarchical_forward(enc, seq, bundle, p_h, mods, &cache);

    const int S = seq.layout.seq_len();
    const int eot = seq.layout.eot_pos();
    const auto& heads = cache.blocks[layer].attn.per_head;
    AttnDump dump;
    dump.row.assign(S, 0.0);
    for (const AttentionCoreCache& h : heads)
        for (int j = 0; j < S; ++j) dump.row[j] += h.probs(eot, j);
    for (double& v : dump.row) v /= static_cast<double>(heads.size());

    for (const WordSpan& span : seq.word_spans) {
        WordScore ws;
        ws.word = span.word;
        for (int j = span.begin; j < span.end; ++j) ws.score += dump.row[j];
        dump.words.push_back(std::move(ws));
    }
    std::sort(dump.words.begin(), dump.words.end(), [](const WordScore& a, const WordScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.word < b.word;
    });
    if (top_k > 0 && static_cast<int>(dump.words.size()) > top_k) dump.words.resize(top_k);
    return dump;
}

}  // namespace hpt
