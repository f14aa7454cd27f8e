#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "hpt/dataset.hpp"
#include "hpt/knowledge.hpp"

using namespace hpt;

namespace {

EncoderConfig tiny_cfg() {
    EncoderConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.max_seq_len = 64;
    cfg.vocab_size = 64;
    cfg.mlp_hidden = 16;
    cfg.seed = 7;
    return cfg;
}

bool same_tokens(const SyntheticDataset& a, const SyntheticDataset& b) {
    if (a.samples.size() != b.samples.size()) return false;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i].label != b.samples[i].label) return false;
        if (a.samples[i].tokens.data != b.samples[i].tokens.data) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("toy specs have single-token traits and neighbor overlap") {
    for (const DatasetSpec& spec : {toy8(), toy6(), toy8_zero_signal()}) {
        spec.validate();
        Tokenizer tok;
        std::set<std::string> names(spec.class_names.begin(), spec.class_names.end());
        CHECK(names.size() == spec.class_names.size());
        for (const auto& traits : spec.class_traits) {
            CHECK(traits.size() == 4);
            for (const std::string& w : traits) {
                CHECK(w.size() <= 4);
                CHECK(tok.word_token_ids(w).size() == 1);
            }
        }
    }

    const DatasetSpec spec = toy8();
    CHECK(spec.num_classes() == 8);
    auto shared = [&](size_t i, size_t k) {
        int n = 0;
        for (const std::string& w : spec.class_traits[i])
            for (const std::string& v : spec.class_traits[k]) n += (w == v);
        return n;
    };
    for (size_t i = 0; i < 8; ++i) {
        for (size_t k = i + 1; k < 8; ++k) CHECK(shared(i, k) <= 1);
        CHECK(shared(i, (i + 1) % 8) == 0);
        CHECK(shared(i, (i + 2) % 8) == 1);  // one entity
        CHECK(shared(i, (i + 3) % 8) == 1);  // one attribute
    }

    CHECK(toy8_zero_signal().signal == 0.0);
    CHECK(spec_by_name("toy6").name == "toy6");
    CHECK_THROWS_AS(spec_by_name("imagenet"), std::invalid_argument);
}

TEST_CASE("make_dataset is deterministic and carries the embedding signal") {
    const EncoderConfig cfg = tiny_cfg();
    TextEncoder enc(cfg);
    Tokenizer tok{cfg.vocab_size};

    DatasetSpec spec = toy8();
    spec.samples_per_class = 3;
    const SyntheticDataset a = make_dataset(spec, enc, tok);
    const SyntheticDataset b = make_dataset(spec, enc, tok);
    CHECK(same_tokens(a, b));
    REQUIRE(a.samples.size() == 24);
    for (size_t i = 0; i < a.samples.size(); ++i)
        CHECK(a.samples[i].label == static_cast<int>(i) / 3);

    DatasetSpec other = spec;
    other.seed = spec.seed + 1;
    CHECK(!same_tokens(a, make_dataset(other, enc, tok)));

    // with the noise off, tokens are exactly the trait-word embedding rows
    DatasetSpec clean = spec;
    clean.noise = 0.0;
    const SyntheticDataset pure = make_dataset(clean, enc, tok);
    for (int c = 0; c < 8; ++c) {
        const Sample& sample = pure.samples[static_cast<size_t>(c * 3)];
        for (int t = 0; t < spec.tokens_per_sample; ++t) {
            const std::string& word =
                spec.class_traits[static_cast<size_t>(c)][static_cast<size_t>(t) % 4];
            const int id = tok.word_token_ids(word)[0];
            for (int j = 0; j < cfg.model_dim; ++j)
                CHECK(sample.tokens(t, j) == enc.token_embedding(id, j));
        }
    }

    DatasetSpec zero = toy8_zero_signal();
    zero.samples_per_class = 3;
    const SyntheticDataset blank = make_dataset(zero, enc, tok);
    CHECK(same_tokens(blank, make_dataset(zero, enc, tok)));
    CHECK(!same_tokens(blank, a));
}

TEST_CASE("apply_domain_shift perturbs deterministically") {
    const EncoderConfig cfg = tiny_cfg();
    TextEncoder enc(cfg);
    Tokenizer tok{cfg.vocab_size};
    DatasetSpec spec = toy8();
    spec.samples_per_class = 2;
    const SyntheticDataset src = make_dataset(spec, enc, tok);

    CHECK(same_tokens(apply_domain_shift(src, DomainShift{}, 5), src));

    DomainShift noisy;
    noisy.extra_noise = 0.5;
    const SyntheticDataset n1 = apply_domain_shift(src, noisy, 5);
    CHECK(same_tokens(n1, apply_domain_shift(src, noisy, 5)));
    CHECK(!same_tokens(n1, src));
    CHECK(!same_tokens(n1, apply_domain_shift(src, noisy, 6)));

    DomainShift dropped;
    dropped.drop_channels = 3;
    const SyntheticDataset d1 = apply_domain_shift(src, dropped, 5);
    for (size_t i = 0; i < d1.samples.size(); ++i)
        for (int t = 0; t < d1.samples[i].tokens.rows; ++t)
            for (int j = 0; j < d1.samples[i].tokens.cols; ++j) {
                if (j < 3)
                    CHECK(d1.samples[i].tokens(t, j) == 0.0);
                else
                    CHECK(d1.samples[i].tokens(t, j) == src.samples[i].tokens(t, j));
            }

    DomainShift bad;
    bad.drop_channels = cfg.model_dim + 1;
    CHECK_THROWS_AS(apply_domain_shift(src, bad, 5), std::invalid_argument);
}

TEST_CASE("make_splits halves classes and samples shots reproducibly") {
    const EncoderConfig cfg = tiny_cfg();
    TextEncoder enc(cfg);
    Tokenizer tok{cfg.vocab_size};
    DatasetSpec spec = toy8();
    spec.samples_per_class = 24;
    const SyntheticDataset ds = make_dataset(spec, enc, tok);

    const SplitSpec split = make_splits(ds, 31, 16);
    CHECK(split.base_classes == std::vector<int>{0, 1, 2, 3});
    CHECK(split.new_classes == std::vector<int>{4, 5, 6, 7});
    CHECK(split.train_indices.size() == 64);
    CHECK(split.test_indices.size() == 128);

    std::set<int> train(split.train_indices.begin(), split.train_indices.end());
    CHECK(train.size() == 64);
    std::vector<int> per_class(8, 0);
    for (int idx : split.train_indices) {
        const int label = ds.samples[static_cast<size_t>(idx)].label;
        ++per_class[static_cast<size_t>(label)];
        CHECK(label <= 3);
        CHECK(train.count(idx) == 1);
    }
    for (int c = 0; c < 4; ++c) CHECK(per_class[static_cast<size_t>(c)] == 16);
    for (int idx : split.test_indices) CHECK(train.count(idx) == 0);
    CHECK(split.train_indices.size() + split.test_indices.size() == ds.samples.size());

    const SplitSpec again = make_splits(ds, 31, 16);
    CHECK(again.train_indices == split.train_indices);
    CHECK(again.test_indices == split.test_indices);
    CHECK(make_splits(ds, 32, 16).train_indices != split.train_indices);

    CHECK_THROWS_AS(make_splits(ds, 31, 25), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(ds, 31, 0), std::invalid_argument);

    // odd class count: base gets the extra class
    DatasetSpec nine = toy8();
    nine.class_names.push_back("ibex");
    nine.class_traits.push_back({"pine", "fern", "jet", "gold"});
    nine.samples_per_class = 20;
    const SplitSpec odd = make_splits(make_dataset(nine, enc, tok), 31, 16);
    CHECK(odd.base_classes.size() == 5);
    CHECK(odd.new_classes.size() == 4);
}

TEST_CASE("synth_profiles split traits into entities and attributes") {
    const auto profiles = synth_profiles(toy8());
    REQUIRE(profiles.count("fox") == 1);
    CHECK(profiles.at("fox").entities == std::vector<std::string>{"pine", "reed"});
    CHECK(profiles.at("fox").attributes == std::vector<std::string>{"rust", "tan"});
    CHECK(profiles.at("hare").entities == std::vector<std::string>{"kelp", "rock"});
    CHECK(profiles.size() == 8);
}

TEST_CASE("dataset_template slices the question set") {
    const DatasetTemplate five = dataset_template(toy8(), 5);
    five.validate();
    CHECK(five.dataset_name == "toy8");
    CHECK(five.question_templates.size() == 5);
    for (const std::string& q : five.question_templates)
        CHECK(q.find("[CLASS]") != std::string::npos);

    CHECK(dataset_template(toy8(), 1).question_templates.size() == 1);
    CHECK(dataset_template(toy6(), 3).class_token_pattern == "a small [X]");
    CHECK_THROWS_AS(dataset_template(toy8(), 6), std::invalid_argument);
    CHECK_THROWS_AS(dataset_template(toy8(), 0), std::invalid_argument);
}

TEST_CASE("toy corpus generated from dataset wiring validates cleanly") {
    const EncoderConfig cfg = tiny_cfg();
    TextEncoder enc(cfg);
    Tokenizer tok{cfg.vocab_size};
    const DatasetSpec spec = toy8();
    SynthesizerClient synth(synth_profiles(spec));
    const DescriptionCorpus corpus =
        generate_corpus(dataset_template(spec, 2), spec.class_names, synth, enc, tok);

    CHECK(corpus.dataset == "toy8");
    CHECK(corpus.classes.size() == 8);
    for (const ClassKnowledge& ck : corpus.classes) CHECK(ck.closest.size() == 1);

    const ValidationReport report = validate_corpus(corpus, tok, cfg);
    CHECK(report.ok());
    CHECK(report.worst_miss_ratio == 0.0);
}
