#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpt/dataset.hpp"
#include "hpt/knowledge.hpp"
#include "hpt/tensor.hpp"
#include "hpt/training.hpp"

namespace hpt {

// 2bn / (b + n). Homogeneous, so fractions and percentages both work.
// Errors on nonpositive input.
double harmonic_mean(double b, double n);

struct MetricRow {
    std::string name;
    int correct = 0;
    int total = 0;
    double accuracy = 0.0;
};

struct MetricsReport {
    std::string protocol;  // base2new, crossdata, domaingen
    std::string dataset;   // source dataset
    TrainConfig config;    // effective training config echo
    std::vector<MetricRow> rows;
    double harmonic = 0.0;
    bool harmonic_valid = false;

    const MetricRow* find_row(const std::string& name) const;
};

// Prompted and frozen text embeddings for every dataset class, in class
// order, unit rows. Errors when the corpus misses a class, naming it.
struct CandidateEmbeddings {
    Tensor2 prompted;  // C x d
    Tensor2 frozen;    // C x d
};

CandidateEmbeddings build_candidates(const TrainResult& result, const DescriptionCorpus& corpus,
                                     const SyntheticDataset& dataset);

// Inference probability over candidate classes: softmax over the frozen-image
// / prompted-text scores and over the prompted-image / frozen-text scores,
// averaged. Sums to 1.
std::vector<double> overall_probability(const VisualEncoder& enc, const Sample& sample,
                                        const PromptBundle& bundle,
                                        const CandidateEmbeddings& candidates, double s);

// Base-to-new protocol: each test sample is classified by argmax of the
// overall probability over every dataset class. Rows: base, new, overall.
// The harmonic mean is filled only when both split accuracies are positive.
MetricsReport evaluate(const TrainResult& result, const DescriptionCorpus& corpus,
                       const SyntheticDataset& dataset, const SplitSpec& split);

struct EvalTarget {
    std::string name;
    const DescriptionCorpus* corpus = nullptr;
    const SyntheticDataset* dataset = nullptr;
    const SplitSpec* split = nullptr;
};

// Zero-shot transfer with no parameter updates: one row per target (test-split
// accuracy among that target's own classes) plus an average row carrying the
// unweighted mean accuracy and summed counts.
MetricsReport cross_dataset_eval(const TrainResult& result, const std::string& source_name,
                                 const std::vector<EvalTarget>& targets);

// Source-split accuracy plus one row per shifted variant, evaluated on the
// same test indices with the same class embeddings. Variants inherit the
// source class set; the corpus must cover it.
MetricsReport domain_gen_eval(const TrainResult& result, const DescriptionCorpus& corpus,
                              const SyntheticDataset& source, const SplitSpec& split,
                              const std::vector<DomainShift>& variants, uint64_t shift_seed);

std::vector<DomainShift> default_domain_shifts();

struct AblationRow {
    std::string label;
    TrainConfig config;
    double base_acc = 0.0;
    double new_acc = 0.0;
    double harmonic = 0.0;
    bool harmonic_valid = false;
};

struct AblationReport {
    std::string suite;
    std::string dataset;
    uint64_t seed = 0;
    std::vector<AblationRow> rows;
};

const std::vector<std::string>& ablation_suites();

// Trains and evaluates one configuration per row, every run from
// base_cfg.seed. prompt_levels: G, G+H, G+L, G+H+L. n_h_sweep: 1, 3, 5.
// strategy_sweep: the three reweight strategies crossed with beta in
// {0, 0.1, 0.2, 0.5, 1}. hptpp_components: additive hpt at lambda 0 and 1,
// then multiplicative hpt++ at lambda 0 and 1.
AblationReport run_ablation(const std::string& suite, const TrainConfig& base_cfg,
                            const EncoderConfig& enc_cfg, const DescriptionCorpus& corpus,
                            const SyntheticDataset& dataset, const SplitSpec& split);

std::string report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);
std::string report_to_json(const AblationReport& report);
std::string report_to_table(const AblationReport& report);

}  // namespace hpt
