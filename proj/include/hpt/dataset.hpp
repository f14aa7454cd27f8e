#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hpt/encoder.hpp"
#include "hpt/knowledge.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Perturbation applied to feature tokens for domain-shift variants.
struct DomainShift {
    std::string name = "source";
    double extra_noise = 0.0;
    int drop_channels = 0;
};

struct DatasetSpec {
    std::string name;
    std::vector<std::string> class_names;
    // per class, ordered [entity, entity, attribute, attribute]; single-token words
    std::vector<std::vector<std::string>> class_traits;
    int tokens_per_sample = 8;
    int samples_per_class = 24;
    double signal = 1.0;
    double noise = 0.1;
    uint64_t seed = 99;

    void validate() const;
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

DatasetSpec toy8();
DatasetSpec toy6();
DatasetSpec toy8_zero_signal();
DatasetSpec spec_by_name(const std::string& name);

struct Sample {
    Tensor2 tokens;
    int label = 0;
};

struct SyntheticDataset {
    DatasetSpec spec;
    std::vector<Sample> samples;  // class-major: samples[c * per_class + k]
};

// Feature tokens cycle through the frozen embeddings of the class's trait
// words, scaled by signal, plus gaussian noise. Image features and class
// descriptions therefore draw on the same token-embedding table.
SyntheticDataset make_dataset(const DatasetSpec& spec, const TextEncoder& frozen_text,
                              const Tokenizer& tok);

SyntheticDataset apply_domain_shift(const SyntheticDataset& source, const DomainShift& shift,
                                    uint64_t seed);

struct SplitSpec {
    std::vector<int> base_classes;
    std::vector<int> new_classes;
    int shots_per_class = 16;
    std::vector<int> train_indices;  // base-class shots
    std::vector<int> test_indices;   // everything else
};

SplitSpec make_splits(const SyntheticDataset& dataset, uint64_t seed, int shots_per_class = 16);

// Wiring into the knowledge pipeline: one synthesizer profile per class and
// the question set used to elicit descriptions.
std::map<std::string, SynthesizerClient::Profile> synth_profiles(const DatasetSpec& spec);
DatasetTemplate dataset_template(const DatasetSpec& spec, int n_h);

}  // namespace hpt
