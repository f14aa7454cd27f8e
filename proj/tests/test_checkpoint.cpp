#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hpt/checkpoint.hpp"
#include "hpt/dataset.hpp"
#include "hpt/knowledge.hpp"
#include "hpt/training.hpp"

using namespace hpt;

namespace {

EncoderConfig tiny_encoder_cfg() {
    EncoderConfig ec;
    ec.num_layers = 2;
    ec.model_dim = 8;
    ec.num_heads = 2;
    ec.head_dim = 4;
    ec.max_seq_len = 64;
    ec.vocab_size = 64;
    ec.mlp_hidden = 16;
    ec.seed = 5;
    return ec;
}

TrainResult tiny_result() {
    EncoderConfig ec = tiny_encoder_cfg();
    DatasetSpec spec;
    spec.name = "tinyworld";
    spec.class_names = {"fox", "wolf", "crow", "deer"};
    spec.class_traits = {{"pine", "rock", "rust", "gray"},
                         {"rock", "reed", "gray", "jet"},
                         {"reed", "moss", "jet", "tan"},
                         {"moss", "fern", "tan", "damp"}};
    spec.tokens_per_sample = 4;
    spec.samples_per_class = 6;
    spec.noise = 0.3;
    spec.seed = 17;
    TextEncoder text(ec);
    Tokenizer tok{ec.vocab_size};
    SyntheticDataset ds = make_dataset(spec, text, tok);
    SplitSpec split = make_splits(ds, 11, 3);
    SynthesizerClient synth(synth_profiles(spec));
    DescriptionCorpus corpus =
        generate_corpus(dataset_template(spec, 2), spec.class_names, synth, text, tok);

    TrainConfig cfg;
    cfg.n_g = 2;
    cfg.n_h = 2;
    cfg.n_visual = 2;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.lr = 0.02;
    cfg.seed = 5;
    return train(cfg, ec, corpus, ds, split);
}

bool same_tensor(const Tensor2& a, const Tensor2& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

bool same_bundle(const PromptBundle& a, const PromptBundle& b) {
    if (a.n_g != b.n_g || a.n_h != b.n_h) return false;
    if (a.global_prompts.size() != b.global_prompts.size() ||
        a.visual_prompts.size() != b.visual_prompts.size())
        return false;
    for (size_t l = 0; l < a.global_prompts.size(); ++l)
        if (!same_tensor(a.global_prompts[l].value, b.global_prompts[l].value)) return false;
    for (size_t l = 0; l < a.visual_prompts.size(); ++l)
        if (!same_tensor(a.visual_prompts[l].value, b.visual_prompts[l].value)) return false;
    return same_tensor(a.gen_w.value, b.gen_w.value) &&
           same_tensor(a.gen_b.value, b.gen_b.value) &&
           same_tensor(a.adapter_w.value, b.adapter_w.value) &&
           same_tensor(a.adapter_b.value, b.adapter_b.value) &&
           same_tensor(a.lam_e2e.value, b.lam_e2e.value) &&
           same_tensor(a.lam_e2a.value, b.lam_e2a.value);
}

}  // namespace

TEST_CASE("checkpoint json round trip is bit exact and byte stable") {
    TrainResult r = tiny_result();
    // awkward doubles on purpose
    r.bundle.gen_w.value(0, 0) = 0.1 + 0.2;
    r.bundle.gen_w.value(0, 1) = 5e-324;
    r.bundle.gen_w.value(0, 2) = -0.0;
    r.bundle.gen_w.value(0, 3) = 1.0 / 3.0;
    Checkpoint c = make_checkpoint(r, "tinyworld", "corpus_tinyworld.json");
    CHECK(c.version == 1);
    CHECK(c.train_cfg.epochs == 2);
    CHECK(same_bundle(c.bundle, r.bundle));

    const std::string text = checkpoint_to_json(c);
    Checkpoint back = checkpoint_from_json(text);
    CHECK(back.version == 1);
    CHECK(back.dataset_name == "tinyworld");
    CHECK(back.corpus_path == "corpus_tinyworld.json");
    CHECK(back.encoder_cfg.num_layers == c.encoder_cfg.num_layers);
    CHECK(back.encoder_cfg.model_dim == c.encoder_cfg.model_dim);
    CHECK(back.encoder_cfg.seed == c.encoder_cfg.seed);
    CHECK(back.train_cfg.lr == c.train_cfg.lr);
    CHECK(back.train_cfg.beta == c.train_cfg.beta);
    CHECK(back.train_cfg.lambda == c.train_cfg.lambda);
    CHECK(back.train_cfg.seed == c.train_cfg.seed);
    CHECK(back.train_cfg.mode == c.train_cfg.mode);
    CHECK(back.train_cfg.reweight_strategy == c.train_cfg.reweight_strategy);
    CHECK(back.train_cfg.use_high == true);
    CHECK(back.train_cfg.use_low == true);
    CHECK(same_bundle(back.bundle, c.bundle));
    CHECK(std::signbit(back.bundle.gen_w.value(0, 2)));

    CHECK(checkpoint_to_json(back) == text);
}

TEST_CASE("checkpoint file round trip zeroes gradients") {
    TrainResult r = tiny_result();
    Checkpoint c = make_checkpoint(r, "tinyworld", "x.json");
    c.bundle.gen_w.grad.fill(7.0);
    c.bundle.visual_prompts[0].grad.fill(-2.0);

    const std::string path = "/tmp/hpt_test_checkpoint.json";
    save_checkpoint(path, c);
    Checkpoint back = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(same_bundle(back.bundle, c.bundle));
    for (double g : back.bundle.gen_w.grad.data) CHECK(g == 0.0);
    for (double g : back.bundle.visual_prompts[0].grad.data) CHECK(g == 0.0);
    CHECK_THROWS_AS(load_checkpoint("/tmp/no_such_checkpoint.json"), std::runtime_error);
}

TEST_CASE("checkpoint preserves ablation toggles") {
    TrainResult r = tiny_result();
    r.config.use_high = false;
    r.config.use_low = false;
    r.bundle.n_h = 0;
    Checkpoint c = make_checkpoint(r, "tinyworld", "x.json");
    Checkpoint back = checkpoint_from_json(checkpoint_to_json(c));
    CHECK(back.train_cfg.use_high == false);
    CHECK(back.train_cfg.use_low == false);
    CHECK(back.bundle.n_h == 0);
}

TEST_CASE("checkpoint rejects malformed input") {
    TrainResult r = tiny_result();
    Checkpoint c = make_checkpoint(r, "tinyworld", "x.json");
    const std::string good = checkpoint_to_json(c);

    CHECK_THROWS_AS(checkpoint_from_json("not json"), std::runtime_error);
    CHECK_THROWS_AS(checkpoint_from_json("{}"), std::runtime_error);

    SUBCASE("wrong version") {
        std::string bad = good;
        bad.replace(bad.find("\"version\": 1"), 12, "\"version\": 2");
        CHECK_THROWS_WITH_AS(checkpoint_from_json(bad), "checkpoint: unsupported version 2",
                             std::runtime_error);
    }

    SUBCASE("renamed parameter") {
        std::string bad = good;
        bad.replace(bad.find("\"p_g.0\""), 7, "\"p_q.0\"");
        CHECK_THROWS_AS(checkpoint_from_json(bad), std::runtime_error);
    }

    SUBCASE("truncated parameter list") {
        std::string bad = good;
        const size_t cut = bad.rfind("\"lam_e2a\"");
        const size_t open = bad.rfind('{', cut);
        const size_t close = bad.find('}', cut);
        bad.erase(open, close - open + 1);
        // drop the now-dangling comma on the previous entry
        const size_t comma = bad.rfind(',', open);
        bad.erase(comma, 1);
        CHECK_THROWS_AS(checkpoint_from_json(bad), std::runtime_error);
    }

    SUBCASE("data length mismatch") {
        std::string bad = good;
        const size_t pos = bad.find("\"rows\": 2");
        REQUIRE(pos != std::string::npos);
        bad.replace(pos, 9, "\"rows\": 3");
        CHECK_THROWS_AS(checkpoint_from_json(bad), std::runtime_error);
    }

    SUBCASE("non-finite parameter fails on save") {
        Checkpoint broken = c;
        broken.bundle.gen_w.value(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(checkpoint_to_json(broken), std::invalid_argument);
    }
}

TEST_CASE("loss trace round trip") {
    std::vector<TraceEntry> trace;
    for (int i = 0; i < 5; ++i) {
        TraceEntry e;
        e.step = i + 1;
        e.loss.l_asy = 3.0 / (i + 1);
        e.loss.l_c = 0.1 * i;
        e.loss.total = e.loss.l_asy + e.loss.l_c;
        trace.push_back(e);
    }

    const std::string path = "/tmp/hpt_test_trace.jsonl";
    save_loss_trace(path, trace);

    {
        std::ifstream in(path);
        std::string first;
        std::getline(in, first);
        CHECK(first.find("\"step\":1") != std::string::npos);
        CHECK(first.find("\"l_asy\":") != std::string::npos);
        CHECK(first.find("\"l_c\":") != std::string::npos);
        CHECK(first.find("\"total\":") != std::string::npos);
        int lines = 1;
        std::string rest;
        while (std::getline(in, rest))
            if (!rest.empty()) ++lines;
        CHECK(lines == 5);
    }

    std::vector<TraceEntry> back = load_loss_trace(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == trace.size());
    for (size_t i = 0; i < trace.size(); ++i) {
        CHECK(back[i].step == trace[i].step);
        CHECK(back[i].loss.l_asy == trace[i].loss.l_asy);
        CHECK(back[i].loss.l_c == trace[i].loss.l_c);
        CHECK(back[i].loss.total == trace[i].loss.total);
    }
}

TEST_CASE("loss trace carries non-finite losses as null") {
    std::vector<TraceEntry> trace(1);
    trace[0].step = 3;
    trace[0].loss.l_asy = std::numeric_limits<double>::infinity();
    trace[0].loss.l_c = 0.5;
    trace[0].loss.total = std::numeric_limits<double>::infinity();

    const std::string path = "/tmp/hpt_test_trace_inf.jsonl";
    save_loss_trace(path, trace);
    {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        CHECK(line.find("\"total\":null") != std::string::npos);
    }
    std::vector<TraceEntry> back = load_loss_trace(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == 1);
    CHECK(back[0].step == 3);
    CHECK(std::isnan(back[0].loss.total));
    CHECK(std::isnan(back[0].loss.l_asy));
    CHECK(back[0].loss.l_c == 0.5);
}

TEST_CASE("loss trace rejects malformed lines") {
    const std::string path = "/tmp/hpt_test_trace_bad.jsonl";
    {
        std::ofstream out(path);
        out << "{\"step\":1,\"l_asy\":0.5,\"l_c\":0.1,\"total\":0.6}\n";
        out << "{\"step\":2,\"l_asy\":0.4}\n";
    }
    CHECK_THROWS_AS(load_loss_trace(path), std::runtime_error);
    std::remove(path.c_str());

    save_loss_trace("/tmp/hpt_test_trace_empty.jsonl", {});
    CHECK(load_loss_trace("/tmp/hpt_test_trace_empty.jsonl").empty());
    std::remove("/tmp/hpt_test_trace_empty.jsonl");
}
