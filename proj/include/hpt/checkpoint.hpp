#pragma once

#include <string>
#include <vector>

#include "hpt/encoder.hpp"
#include "hpt/training.hpp"

namespace hpt {

// Everything needed to reproduce and evaluate a training run: configs, the
// dataset and corpus identity, and the learned parameter tensors. Gradients
// are never stored; a loaded bundle has zero grads.
struct Checkpoint {
    int version = 1;
    EncoderConfig encoder_cfg;
    TrainConfig train_cfg;
    std::string dataset_name;
    std::string corpus_path;
    PromptBundle bundle;
};

Checkpoint make_checkpoint(const TrainResult& result, const std::string& dataset_name,
                           const std::string& corpus_path);

// JSON round trip is bit-exact on every double and stable byte-for-byte:
// serialize(parse(text)) == text for any text this writer produced.
std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Loss trace as JSON lines, one {"step", "l_asy", "l_c", "total"} per step.
void save_loss_trace(const std::string& path, const std::vector<TraceEntry>& trace);
std::vector<TraceEntry> load_loss_trace(const std::string& path);

}  // namespace hpt
