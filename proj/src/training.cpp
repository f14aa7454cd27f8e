#include "hpt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace hpt {

const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::hpt: return "hpt";
        case TrainMode::hptpp: return "hpt++";
    }
    throw std::logic_error("bad TrainMode");
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "hpt") return TrainMode::hpt;
    if (s == "hpt++" || s == "hptpp") return TrainMode::hptpp;
    throw std::invalid_argument("unknown train mode: " + s);
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be at least 1");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be nonnegative");
    if (n_g < 0) throw std::invalid_argument("config: n_g must be nonnegative");
    if (n_h < 1) throw std::invalid_argument("config: n_h must be at least 1");
    if (n_visual < 0) throw std::invalid_argument("config: n_visual must be nonnegative");
    if (beta < 0.0) throw std::invalid_argument("config: beta must be nonnegative");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be nonnegative");
    if (!(logit_scale > 0.0)) throw std::invalid_argument("config: logit_scale must be positive");
    if (mode == TrainMode::hpt && reweight_strategy != AttnModMode::additive &&
        reweight_strategy != AttnModMode::none)
        throw std::invalid_argument("config: hpt mode supports only additive or none");
}

// ---- config text ------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double_value(const std::string& key, const std::string& text) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != text.size())
        throw std::invalid_argument("config: bad number for " + key + ": " + text);
    return v;
}

int parse_int_value(const std::string& key, const std::string& text) {
    size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != text.size() || v < INT32_MIN || v > INT32_MAX)
        throw std::invalid_argument("config: bad integer for " + key + ": " + text);
    return static_cast<int>(v);
}

uint64_t parse_u64_value(const std::string& key, const std::string& text) {
    size_t pos = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(text, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != text.size())
        throw std::invalid_argument("config: bad integer for " + key + ": " + text);
    return v;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
        std::string val = eq == std::string::npos ? "" : trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        if (!seen.insert(key).second)
            throw std::invalid_argument("config: repeated key " + key);
        if (key == "lr") cfg.lr = parse_double_value(key, val);
        else if (key == "batch_size") cfg.batch_size = parse_int_value(key, val);
        else if (key == "epochs") cfg.epochs = parse_int_value(key, val);
        else if (key == "n_g") cfg.n_g = parse_int_value(key, val);
        else if (key == "n_h") cfg.n_h = parse_int_value(key, val);
        else if (key == "n_visual") cfg.n_visual = parse_int_value(key, val);
        else if (key == "beta") cfg.beta = parse_double_value(key, val);
        else if (key == "lambda") cfg.lambda = parse_double_value(key, val);
        else if (key == "logit_scale") cfg.logit_scale = parse_double_value(key, val);
        else if (key == "seed") cfg.seed = parse_u64_value(key, val);
        else if (key == "mode") cfg.mode = train_mode_from_string(val);
        else if (key == "reweight_strategy") cfg.reweight_strategy = attn_mod_mode_from_string(val);
        else throw std::invalid_argument("config: unknown key " + key);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_train_config(buf.str());
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "lr = " << format_double(cfg.lr) << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "n_g = " << cfg.n_g << "\n";
    out << "n_h = " << cfg.n_h << "\n";
    out << "n_visual = " << cfg.n_visual << "\n";
    out << "beta = " << format_double(cfg.beta) << "\n";
    out << "lambda = " << format_double(cfg.lambda) << "\n";
    out << "logit_scale = " << format_double(cfg.logit_scale) << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "mode = " << to_string(cfg.mode) << "\n";
    out << "reweight_strategy = " << to_string(cfg.reweight_strategy) << "\n";
    return out.str();
}

// ---- losses -----------------------------------------------------------------

namespace {

void require_unit_rows(const Tensor2& t, const char* what) {
    for (int r = 0; r < t.rows; ++r) {
        double sq = 0.0;
        for (int c = 0; c < t.cols; ++c) sq += t(r, c) * t(r, c);
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
            throw std::invalid_argument(std::string("asymmetric_loss: ") + what + " row " +
                                        std::to_string(r) + " is not unit length");
    }
}

}  // namespace

LossBreakdown asymmetric_loss(const Tensor2& frozen_img, const Tensor2& prompted_img,
                              const Tensor2& frozen_txt, const Tensor2& prompted_txt,
                              const std::vector<int>& labels, double s, Tensor2* d_prompted_img,
                              Tensor2* d_prompted_txt) {
    const int B = frozen_img.rows;
    const int d = frozen_img.cols;
    const int K = frozen_txt.rows;
    if (B < 1 || K < 2) throw std::invalid_argument("asymmetric_loss: need a batch and 2+ classes");
    if (prompted_img.rows != B || prompted_img.cols != d || frozen_txt.cols != d ||
        prompted_txt.rows != K || prompted_txt.cols != d)
        throw std::invalid_argument("asymmetric_loss: shape mismatch");
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("asymmetric_loss: labels size mismatch");
    for (int y : labels)
        if (y < 0 || y >= K) throw std::invalid_argument("asymmetric_loss: label out of range");
    if (!(s > 0.0)) throw std::invalid_argument("asymmetric_loss: scale must be positive");
    require_unit_rows(frozen_img, "frozen image");
    require_unit_rows(prompted_img, "prompted image");
    require_unit_rows(frozen_txt, "frozen text");
    require_unit_rows(prompted_txt, "prompted text");

    Tensor2 p1 = softmax_rows(scale(matmul_nt(frozen_img, prompted_txt), s));
    Tensor2 p2 = softmax_rows(scale(matmul_nt(prompted_img, frozen_txt), s));

    LossBreakdown out;
    for (int b = 0; b < B; ++b) {
        const int y = labels[b];
        out.ce1 -= std::log(p1(b, y));
        out.ce2 -= std::log(p2(b, y));
        out.ce_avg -= std::log(0.5 * (p1(b, y) + p2(b, y)));
    }
    out.ce1 /= B;
    out.ce2 /= B;
    out.ce_avg /= B;
    out.l_asy = out.ce1 + out.ce2 + out.ce_avg;
    out.total = out.l_asy;

    if (d_prompted_img == nullptr && d_prompted_txt == nullptr) return out;

    Tensor2 dp1(B, K), dp2(B, K);
    for (int b = 0; b < B; ++b) {
        const int y = labels[b];
        const double g = -0.5 / (0.5 * (p1(b, y) + p2(b, y)) * B);
        dp1(b, y) = g;
        dp2(b, y) = g;
    }
    Tensor2 da1 = softmax_rows_backward(p1, dp1);
    Tensor2 da2 = softmax_rows_backward(p2, dp2);
    for (int b = 0; b < B; ++b) {
        const int y = labels[b];
        for (int k = 0; k < K; ++k) {
            da1(b, k) += (p1(b, k) - (k == y ? 1.0 : 0.0)) / B;
            da2(b, k) += (p2(b, k) - (k == y ? 1.0 : 0.0)) / B;
        }
    }
    if (d_prompted_txt) *d_prompted_txt = scale(matmul_tn(da1, frozen_img), s);
    if (d_prompted_img) *d_prompted_img = scale(matmul(da2, frozen_txt), s);
    return out;
}

double consistency_loss(const std::vector<double>& adapted, const std::vector<double>& target,
                        std::vector<double>* d_adapted) {
    if (adapted.size() != target.size() || adapted.empty())
        throw std::invalid_argument("consistency_loss: length mismatch");
    const double na = norm(adapted);
    const double nt = norm(target);
    if (na <= 0.0 || nt <= 0.0) throw std::invalid_argument("consistency_loss: zero-norm input");
    double c = dot(adapted, target) / (na * nt);
    c = std::clamp(c, -1.0, 1.0);
    if (d_adapted) {
        d_adapted->resize(adapted.size());
        for (size_t i = 0; i < adapted.size(); ++i)
            (*d_adapted)[i] = -(target[i] / nt - c * adapted[i] / na) / na;
    }
    return 1.0 - c;
}

// ---- per-class text state -----------------------------------------------------

DescriptionDraw sample_description(Rng& rng, const ClassKnowledge& ck, int n_h) {
    if (n_h < 1) throw std::invalid_argument("sample_description: n_h must be at least 1");
    if (static_cast<int>(ck.overall.size()) < n_h ||
        static_cast<int>(ck.relations.size()) < n_h)
        throw std::invalid_argument("sample_description: class " + ck.name + " has fewer than " +
                                    std::to_string(n_h) + " descriptions");
    DescriptionDraw draw;
    draw.index = rng.index(n_h);
    draw.description = &ck.overall[draw.index];
    draw.graph = &ck.relations[draw.index];
    return draw;
}

ClassTextModel build_class_text_model(const TextEncoder& enc, const Tokenizer& tok,
                                      const ClassKnowledge& ck, const TrainConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(ck.overall.size()) < cfg.n_h ||
        static_cast<int>(ck.relations.size()) < cfg.n_h)
        throw std::invalid_argument("class " + ck.name + ": need " + std::to_string(cfg.n_h) +
                                    " descriptions, have " + std::to_string(ck.overall.size()));
    const int high_len = cfg.use_high ? cfg.n_h : 0;
    ClassTextModel m;
    m.name = ck.name;
    std::vector<double> mean(enc.cfg.model_dim, 0.0);
    for (int i = 0; i < cfg.n_h; ++i) {
        const std::string& desc = ck.overall[i];
        m.graphs.push_back(ck.relations[i]);
        TokenSequence seq = build_sequence(tok, enc.cfg, ck.class_token, cfg.n_g, high_len,
                                           cfg.use_low ? desc : "");
        m.alignments.push_back(align_words(seq, m.graphs.back()));
        m.seqs.push_back(std::move(seq));
        FrozenResult fr = enc.encode_frozen(build_plain_sequence(tok, enc.cfg, desc));
        m.states.push_back(std::move(fr.states));
        std::vector<double> zn = normalized(fr.z);
        for (size_t j = 0; j < zn.size(); ++j) mean[j] += zn[j];
        m.frozen_desc.push_back(std::move(zn));
    }
    for (double& v : mean) v /= cfg.n_h;
    m.frozen_mean = normalized(mean);
    return m;
}

std::vector<AttentionModMatrix> build_layer_mods(const TrainConfig& cfg,
                                                 const PromptBundle& bundle,
                                                 const RelationGraph& graph,
                                                 const TokenAlignment& alignment,
                                                 const SegmentLayout& layout, int num_layers) {
    if (cfg.reweight_strategy == AttnModMode::none || !cfg.use_low) return {};
    std::vector<AttentionModMatrix> mods;
    mods.reserve(num_layers);
    for (int l = 0; l < num_layers; ++l) {
        switch (cfg.reweight_strategy) {
            case AttnModMode::additive: {
                const bool live = cfg.mode == TrainMode::hpt;
                const double le = live ? bundle.lam_e2e.value(0, l) : cfg.beta;
                const double la = live ? bundle.lam_e2a.value(0, l) : cfg.beta;
                mods.push_back(build_additive_matrix(graph, alignment, le, la, layout));
                break;
            }
            case AttnModMode::multiplicative:
                mods.push_back(build_reweight_matrix(graph, alignment, cfg.beta, layout));
                break;
            case AttnModMode::multiplicative_selective:
                mods.push_back(build_selective_matrix(graph, alignment, cfg.beta, layout));
                break;
            default:
                throw std::logic_error("build_layer_mods: bad strategy");
        }
    }
    return mods;
}

std::vector<double> class_text_forward(const TextEncoder& enc, const ClassTextModel& model,
                                       int desc_index, const TrainConfig& cfg,
                                       const PromptBundle& bundle,
                                       std::vector<AttentionModMatrix>* mods_out,
                                       HierCache* cache) {
    if (desc_index < 0 || desc_index >= model.n_desc())
        throw std::out_of_range("class_text_forward: description index " +
                                std::to_string(desc_index));
    const TokenSequence& seq = model.seqs[desc_index];
    std::vector<Tensor2> p_h;
    if (cfg.use_high) p_h = generate_high_prompts(model.states, bundle);
    std::vector<AttentionModMatrix> mods =
        build_layer_mods(cfg, bundle, model.graphs[desc_index], model.alignments[desc_index],
                         seq.layout, enc.cfg.num_layers);
    std::vector<double> z = hierarchical_forward(enc, seq, bundle, p_h, mods, cache);
    if (mods_out) *mods_out = std::move(mods);
    return z;
}

std::vector<double> category_embedding_inference(const TextEncoder& enc,
                                                 const ClassTextModel& model,
                                                 const TrainConfig& cfg,
                                                 const PromptBundle& bundle) {
    if (model.n_desc() == 0)
        throw std::invalid_argument("category embedding: class " + model.name +
                                    " has no descriptions");
    std::vector<double> mean(enc.cfg.model_dim, 0.0);
    for (int i = 0; i < model.n_desc(); ++i) {
        std::vector<double> zn =
            normalized(class_text_forward(enc, model, i, cfg, bundle, nullptr, nullptr));
        for (size_t j = 0; j < zn.size(); ++j) mean[j] += zn[j];
    }
    for (double& v : mean) v /= model.n_desc();
    return normalized(mean);
}

// ---- train loop ---------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const EncoderConfig& enc_cfg,
                  const DescriptionCorpus& corpus, const SyntheticDataset& dataset,
                  const SplitSpec& split) {
    cfg.validate();
    enc_cfg.validate();
    if (corpus.n_h < cfg.n_h)
        throw std::invalid_argument("train: corpus has " + std::to_string(corpus.n_h) +
                                    " descriptions per class, config wants " +
                                    std::to_string(cfg.n_h));
    if (split.base_classes.size() < 2)
        throw std::invalid_argument("train: need at least 2 base classes");
    if (split.train_indices.empty() && cfg.epochs > 0)
        throw std::invalid_argument("train: empty training split");

    const TextEncoder text_enc(enc_cfg);
    const VisualEncoder vis_enc(enc_cfg);
    const Tokenizer tok{enc_cfg.vocab_size};
    const int d = enc_cfg.model_dim;
    const int K = static_cast<int>(split.base_classes.size());

    std::vector<const ClassKnowledge*> cks;
    std::vector<ClassTextModel> models;
    std::map<int, int> cand_pos;
    for (int k = 0; k < K; ++k) {
        const int c = split.base_classes[k];
        if (c < 0 || c >= dataset.spec.num_classes())
            throw std::invalid_argument("train: base class index out of range");
        const std::string& name = dataset.spec.class_names[c];
        const ClassKnowledge* ck = corpus.find_class(name);
        if (!ck) throw std::invalid_argument("train: corpus is missing class " + name);
        cks.push_back(ck);
        models.push_back(build_class_text_model(text_enc, tok, *ck, cfg));
        cand_pos[c] = k;
    }

    Tensor2 frozen_txt(K, d);
    for (int k = 0; k < K; ++k)
        std::copy(models[k].frozen_mean.begin(), models[k].frozen_mean.end(), frozen_txt.row(k));

    std::map<int, std::vector<double>> frozen_img;
    for (int idx : split.train_indices) {
        if (idx < 0 || idx >= static_cast<int>(dataset.samples.size()))
            throw std::invalid_argument("train: training index out of range");
        const Sample& s = dataset.samples[idx];
        if (cand_pos.find(s.label) == cand_pos.end())
            throw std::invalid_argument("train: training sample with non-base label");
        frozen_img[idx] = normalized(visual_forward(vis_enc, s.tokens, nullptr, nullptr));
    }

    TrainResult result;
    result.encoder_cfg = enc_cfg;
    result.config = cfg;
    result.bundle =
        make_prompt_bundle(enc_cfg, cfg.n_g, cfg.use_high ? cfg.n_h : 0, cfg.n_visual, cfg.seed);
    PromptBundle& bundle = result.bundle;

    const bool lambda_live =
        cfg.mode == TrainMode::hpt && cfg.reweight_strategy == AttnModMode::additive;
    ParamRefs optimized = bundle.parameters();
    if (lambda_live)
        for (Parameter* p : bundle.lambda_parameters()) optimized.push_back(p);
    ParamRefs all_params = bundle.parameters();
    for (Parameter* p : bundle.lambda_parameters()) all_params.push_back(p);

    Rng rng = Rng(cfg.seed).fork(0x74726e);
    std::vector<int> order = split.train_indices;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[rng.index(i + 1)]);

        for (size_t start = 0; start < order.size() && !result.diverged;
             start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop =
                std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const int B = static_cast<int>(stop - start);
            ++step;
            zero_grads(all_params);

            std::vector<DescriptionDraw> draws;
            draws.reserve(K);
            for (int k = 0; k < K; ++k) draws.push_back(sample_description(rng, *cks[k], cfg.n_h));

            Tensor2 prompted_txt(K, d);
            std::vector<std::vector<double>> z_txt(K);
            std::vector<std::vector<AttentionModMatrix>> mods(K);
            std::vector<HierCache> caches(K);
            for (int k = 0; k < K; ++k) {
                z_txt[k] = class_text_forward(text_enc, models[k], draws[k].index, cfg, bundle,
                                              &mods[k], &caches[k]);
                const std::vector<double> zn = normalized(z_txt[k]);
                std::copy(zn.begin(), zn.end(), prompted_txt.row(k));
            }

            Tensor2 batch_frozen(B, d), prompted_img(B, d);
            std::vector<std::vector<double>> z_img(B);
            std::vector<VisualCache> vcaches(B);
            std::vector<int> labels(B);
            for (int b = 0; b < B; ++b) {
                const int idx = order[start + b];
                const Sample& s = dataset.samples[idx];
                labels[b] = cand_pos.at(s.label);
                const std::vector<double>& fz = frozen_img.at(idx);
                std::copy(fz.begin(), fz.end(), batch_frozen.row(b));
                z_img[b] = visual_forward(vis_enc, s.tokens, &bundle.visual_prompts, &vcaches[b]);
                const std::vector<double> zn = normalized(z_img[b]);
                std::copy(zn.begin(), zn.end(), prompted_img.row(b));
            }

            Tensor2 d_pi, d_pt;
            LossBreakdown loss = asymmetric_loss(batch_frozen, prompted_img, frozen_txt,
                                                 prompted_txt, labels, cfg.logit_scale, &d_pi,
                                                 &d_pt);

            std::vector<std::vector<double>> dz_extra(K);
            for (int k = 0; k < K; ++k) {
                const std::vector<double> adapted = apply_adapter(z_txt[k], bundle);
                std::vector<double> d_adapted;
                const double lck =
                    consistency_loss(adapted, models[k].frozen_desc[draws[k].index],
                                     cfg.lambda > 0.0 ? &d_adapted : nullptr);
                loss.l_c += lck / K;
                if (cfg.lambda > 0.0) {
                    for (double& v : d_adapted) v *= cfg.lambda / K;
                    dz_extra[k] = adapter_backward(z_txt[k], d_adapted, bundle);
                }
            }
            loss.total = total_loss(loss.l_asy, loss.l_c, cfg.lambda);
            result.trace.push_back({step, loss});
            if (!std::isfinite(loss.total)) {
                result.diverged = true;
                break;
            }

            for (int k = 0; k < K; ++k) {
                std::vector<double> d_zn(d_pt.row(k), d_pt.row(k) + d);
                std::vector<double> dz = normalize_backward(z_txt[k], d_zn);
                if (!dz_extra[k].empty())
                    for (int j = 0; j < d; ++j) dz[j] += dz_extra[k][j];
                HierGrads hg = hierarchical_backward(text_enc, caches[k], bundle, mods[k], dz);
                if (!hg.d_ph.empty()) high_prompts_backward(models[k].states, hg.d_ph, bundle);
            }
            for (int b = 0; b < B; ++b) {
                std::vector<double> d_zn(d_pi.row(b), d_pi.row(b) + d);
                std::vector<double> dz = normalize_backward(z_img[b], d_zn);
                visual_backward(vis_enc, vcaches[b], dz, &bundle.visual_prompts);
            }

            sgd_step(optimized, cfg.lr);
        }
    }
    return result;
}

// ---- gradient suite -------------------------------------------------------------

bool GradSuiteReport::passed() const {
    if (entries.empty()) return false;
    for (const GradSuiteEntry& e : entries)
        if (!(e.max_rel_err < tolerance)) return false;
    return true;
}

GradSuiteReport run_training_grad_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteReport report;

    EncoderConfig ec;
    ec.num_layers = 2;
    ec.model_dim = 8;
    ec.num_heads = 2;
    ec.head_dim = 4;
    ec.max_seq_len = 64;
    ec.vocab_size = 64;
    ec.mlp_hidden = 16;
    ec.seed = 5;

    DatasetSpec spec;
    spec.name = "gradworld";
    spec.class_names = {"fox", "wolf", "crow", "deer"};
    spec.class_traits = {{"pine", "rock", "rust", "gray"},
                         {"rock", "reed", "gray", "jet"},
                         {"reed", "moss", "jet", "tan"},
                         {"moss", "fern", "tan", "damp"}};
    spec.tokens_per_sample = 4;
    spec.samples_per_class = 6;
    spec.noise = 0.3;
    spec.seed = 17;

    const TextEncoder text_enc(ec);
    const VisualEncoder vis_enc(ec);
    const Tokenizer tok{ec.vocab_size};
    const SyntheticDataset ds = make_dataset(spec, text_enc, tok);
    const SplitSpec split = make_splits(ds, 11, 3);

    SynthesizerClient synth(synth_profiles(spec));
    const DescriptionCorpus corpus =
        generate_corpus(dataset_template(spec, 2), spec.class_names, synth, text_enc, tok);

    const int d = ec.model_dim;

    auto run_regime = [&](const TrainConfig& cfg, const std::string& regime, bool check_lambda) {
        PromptBundle bundle = make_prompt_bundle(ec, cfg.n_g, cfg.n_h, cfg.n_visual, 33);
        for (int l = 0; l < ec.num_layers; ++l) {
            bundle.lam_e2e.value(0, l) = 0.3 - 0.1 * l;
            bundle.lam_e2a.value(0, l) = -0.2 + 0.05 * l;
        }

        std::vector<ClassTextModel> models;
        std::map<int, int> pos;
        const int K = static_cast<int>(split.base_classes.size());
        for (int k = 0; k < K; ++k) {
            const int c = split.base_classes[k];
            models.push_back(build_class_text_model(
                text_enc, tok, *corpus.find_class(ds.spec.class_names[c]), cfg));
            pos[c] = k;
        }

        const std::vector<int> batch(split.train_indices.begin(), split.train_indices.begin() + 4);
        const int B = static_cast<int>(batch.size());
        std::vector<int> labels(B);
        Tensor2 batch_frozen(B, d);
        for (int b = 0; b < B; ++b) {
            const Sample& s = ds.samples[batch[b]];
            labels[b] = pos.at(s.label);
            const std::vector<double> fz =
                normalized(visual_forward(vis_enc, s.tokens, nullptr, nullptr));
            std::copy(fz.begin(), fz.end(), batch_frozen.row(b));
        }
        Tensor2 frozen_txt(K, d);
        for (int k = 0; k < K; ++k)
            std::copy(models[k].frozen_mean.begin(), models[k].frozen_mean.end(),
                      frozen_txt.row(k));
        std::vector<int> desc_idx(K);
        for (int k = 0; k < K; ++k) desc_idx[k] = k % cfg.n_h;

        const auto loss_fn = [&]() -> double {
            Tensor2 prompted_txt(K, d), prompted_img(B, d);
            double l_c = 0.0;
            for (int k = 0; k < K; ++k) {
                const std::vector<double> z =
                    class_text_forward(text_enc, models[k], desc_idx[k], cfg, bundle, nullptr,
                                       nullptr);
                const std::vector<double> zn = normalized(z);
                std::copy(zn.begin(), zn.end(), prompted_txt.row(k));
                l_c += consistency_loss(apply_adapter(z, bundle),
                                        models[k].frozen_desc[desc_idx[k]], nullptr) /
                       K;
            }
            for (int b = 0; b < B; ++b) {
                const std::vector<double> zn = normalized(visual_forward(
                    vis_enc, ds.samples[batch[b]].tokens, &bundle.visual_prompts, nullptr));
                std::copy(zn.begin(), zn.end(), prompted_img.row(b));
            }
            const LossBreakdown lb = asymmetric_loss(batch_frozen, prompted_img, frozen_txt,
                                                     prompted_txt, labels, cfg.logit_scale,
                                                     nullptr, nullptr);
            return total_loss(lb.l_asy, l_c, cfg.lambda);
        };

        ParamRefs all = bundle.parameters();
        for (Parameter* p : bundle.lambda_parameters()) all.push_back(p);
        zero_grads(all);
        {
            Tensor2 prompted_txt(K, d), prompted_img(B, d);
            std::vector<std::vector<double>> z_txt(K), z_img(B), dz_extra(K);
            std::vector<std::vector<AttentionModMatrix>> mods(K);
            std::vector<HierCache> caches(K);
            std::vector<VisualCache> vcaches(B);
            for (int k = 0; k < K; ++k) {
                z_txt[k] = class_text_forward(text_enc, models[k], desc_idx[k], cfg, bundle,
                                              &mods[k], &caches[k]);
                const std::vector<double> zn = normalized(z_txt[k]);
                std::copy(zn.begin(), zn.end(), prompted_txt.row(k));
            }
            for (int b = 0; b < B; ++b) {
                z_img[b] = visual_forward(vis_enc, ds.samples[batch[b]].tokens,
                                          &bundle.visual_prompts, &vcaches[b]);
                const std::vector<double> zn = normalized(z_img[b]);
                std::copy(zn.begin(), zn.end(), prompted_img.row(b));
            }
            Tensor2 d_pi, d_pt;
            asymmetric_loss(batch_frozen, prompted_img, frozen_txt, prompted_txt, labels,
                            cfg.logit_scale, &d_pi, &d_pt);
            for (int k = 0; k < K; ++k) {
                std::vector<double> d_adapted;
                consistency_loss(apply_adapter(z_txt[k], bundle),
                                 models[k].frozen_desc[desc_idx[k]], &d_adapted);
                for (double& v : d_adapted) v *= cfg.lambda / K;
                dz_extra[k] = adapter_backward(z_txt[k], d_adapted, bundle);
            }
            for (int k = 0; k < K; ++k) {
                std::vector<double> d_zn(d_pt.row(k), d_pt.row(k) + d);
                std::vector<double> dz = normalize_backward(z_txt[k], d_zn);
                for (int j = 0; j < d; ++j) dz[j] += dz_extra[k][j];
                HierGrads hg = hierarchical_backward(text_enc, caches[k], bundle, mods[k], dz);
                if (!hg.d_ph.empty()) high_prompts_backward(models[k].states, hg.d_ph, bundle);
            }
            for (int b = 0; b < B; ++b) {
                std::vector<double> d_zn(d_pi.row(b), d_pi.row(b) + d);
                visual_backward(vis_enc, vcaches[b], normalize_backward(z_img[b], d_zn),
                                &bundle.visual_prompts);
            }
        }

        const auto add_group = [&](const std::string& group, const ParamRefs& refs) {
            const GradCheckReport r = check_gradients(loss_fn, refs, report.step_size);
            int count = 0;
            for (const Parameter* p : refs) count += static_cast<int>(p->value.size());
            report.entries.push_back({regime, group, r.max_rel_err, count});
        };
        ParamRefs globals;
        for (Parameter& p : bundle.global_prompts) globals.push_back(&p);
        add_group("global_prompts", globals);
        add_group("generator", {&bundle.gen_w, &bundle.gen_b});
        add_group("adapter", {&bundle.adapter_w, &bundle.adapter_b});
        if (check_lambda) add_group("lambda", bundle.lambda_parameters());
        ParamRefs visual;
        for (Parameter& p : bundle.visual_prompts) visual.push_back(&p);
        add_group("visual_prompts", visual);
    };

    // A soft logit scale keeps third derivatives small, so the finite
    // difference at the pinned step size measures gradient correctness
    // instead of curvature. The gradient code does not branch on the scale.
    TrainConfig hpt_cfg;
    hpt_cfg.mode = TrainMode::hpt;
    hpt_cfg.reweight_strategy = AttnModMode::additive;
    hpt_cfg.n_g = 2;
    hpt_cfg.n_h = 2;
    hpt_cfg.n_visual = 2;
    hpt_cfg.lambda = 0.7;
    hpt_cfg.logit_scale = 4.0;
    run_regime(hpt_cfg, "hpt-additive", true);

    TrainConfig pp_cfg;
    pp_cfg.n_g = 2;
    pp_cfg.n_h = 2;
    pp_cfg.n_visual = 2;
    pp_cfg.logit_scale = 4.0;
    run_regime(pp_cfg, "hptpp-multiplicative", false);

    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace hpt
