#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpt/attn_mod.hpp"
#include "hpt/dataset.hpp"
#include "hpt/encoder.hpp"
#include "hpt/knowledge.hpp"
#include "hpt/param.hpp"
#include "hpt/relgraph.hpp"
#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// `hpt` runs additive modification with learnable per-layer scalars; `hptpp`
// runs a beta-derived modification with the scalars held fixed.
enum class TrainMode { hpt, hptpp };

const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    double lr = 0.0025;
    int batch_size = 8;
    int epochs = 10;
    int n_g = 2;
    int n_h = 5;
    int n_visual = 2;
    double beta = 0.2;
    double lambda = 1.0;
    double logit_scale = 10.0;
    uint64_t seed = 1;
    TrainMode mode = TrainMode::hptpp;
    AttnModMode reweight_strategy = AttnModMode::multiplicative;

    // Ablation toggles. Not config-file keys: flipped programmatically by the
    // ablation suites only.
    bool use_high = true;
    bool use_low = true;

    void validate() const;
};

// Flat "key = value" text, one pair per line, '#' comments. Unknown or
// repeated keys are errors; the parsed config is validated before returning.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_text(const TrainConfig& cfg);

struct LossBreakdown {
    double ce1 = 0.0;     // frozen image vs prompted text
    double ce2 = 0.0;     // prompted image vs frozen text
    double ce_avg = 0.0;  // averaged-probability path
    double l_asy = 0.0;
    double l_c = 0.0;
    double total = 0.0;
};

// Three-term cross entropy over cosine logits scaled by s. All four inputs
// must have unit rows. Optional outputs receive d l_asy / d row for the two
// prompted inputs (same shapes, batch mean included).
LossBreakdown asymmetric_loss(const Tensor2& frozen_img, const Tensor2& prompted_img,
                              const Tensor2& frozen_txt, const Tensor2& prompted_txt,
                              const std::vector<int>& labels, double s,
                              Tensor2* d_prompted_img = nullptr,
                              Tensor2* d_prompted_txt = nullptr);

// 1 - cos(adapted, target), in [0, 2]. d_adapted, when non-null, receives the
// gradient with respect to the raw adapted vector.
double consistency_loss(const std::vector<double>& adapted, const std::vector<double>& target,
                        std::vector<double>* d_adapted = nullptr);

inline double total_loss(double l_asy, double l_c, double lambda) {
    return l_asy + lambda * l_c;
}

struct DescriptionDraw {
    int index = 0;
    const std::string* description = nullptr;
    const RelationGraph* graph = nullptr;
};

// Uniform draw over the first n_h descriptions of a class.
DescriptionDraw sample_description(Rng& rng, const ClassKnowledge& ck, int n_h);

// Frozen per-class state shared by the train loop and evaluation: hierarchical
// sequences, alignments, per-description layer states for the high-prompt
// generator, and frozen text embeddings. Holds copies, safe to outlive the
// corpus it came from.
struct ClassTextModel {
    std::string name;
    std::vector<TokenSequence> seqs;                 // one per description used
    std::vector<RelationGraph> graphs;
    std::vector<TokenAlignment> alignments;
    std::vector<LayerStates> states;
    std::vector<std::vector<double>> frozen_desc;    // normalized, per description
    std::vector<double> frozen_mean;                 // normalized mean of the above

    int n_desc() const { return static_cast<int>(seqs.size()); }
};

ClassTextModel build_class_text_model(const TextEncoder& enc, const Tokenizer& tok,
                                      const ClassKnowledge& ck, const TrainConfig& cfg);

// Per-layer modification matrices for one description. Empty when the config
// runs plain attention (strategy none, or the low block disabled). Additive
// scalars come from the bundle in hpt mode and from beta in hptpp mode.
std::vector<AttentionModMatrix> build_layer_mods(const TrainConfig& cfg,
                                                 const PromptBundle& bundle,
                                                 const RelationGraph& graph,
                                                 const TokenAlignment& alignment,
                                                 const SegmentLayout& layout, int num_layers);

// Prompted text embedding (unnormalized) for one description of one class.
// mods_out / cache are optional; both are required later for a backward pass.
std::vector<double> class_text_forward(const TextEncoder& enc, const ClassTextModel& model,
                                       int desc_index, const TrainConfig& cfg,
                                       const PromptBundle& bundle,
                                       std::vector<AttentionModMatrix>* mods_out,
                                       HierCache* cache);

// Inference-time category embedding: renormalized mean over the normalized
// prompted embeddings of every description of the class.
std::vector<double> category_embedding_inference(const TextEncoder& enc,
                                                 const ClassTextModel& model,
                                                 const TrainConfig& cfg,
                                                 const PromptBundle& bundle);

struct TraceEntry {
    int step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    EncoderConfig encoder_cfg;
    TrainConfig config;
    PromptBundle bundle;
    std::vector<TraceEntry> trace;
    bool diverged = false;
};

// Few-shot training over the split's base classes. The corpus must cover every
// base class and carry at least cfg.n_h descriptions per class. Deterministic
// for a fixed (config, corpus, dataset, split).
TrainResult train(const TrainConfig& cfg, const EncoderConfig& enc_cfg,
                  const DescriptionCorpus& corpus, const SyntheticDataset& dataset,
                  const SplitSpec& split);

struct GradSuiteEntry {
    std::string regime;
    std::string group;
    double max_rel_err = 0.0;
    int params_checked = 0;
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    double step_size = 1e-4;
    double tolerance = 1e-4;
    double seconds = 0.0;

    bool passed() const;
};

// Central finite differences of the full training-step loss against the
// analytic gradients, on a tiny world, for every learnable group: global
// prompts, the generator, the adapter, the additive scalars, and the visual
// prompts. The scalars are checked in hpt mode, the rest in both modes.
GradSuiteReport run_training_grad_suite();

}  // namespace hpt
