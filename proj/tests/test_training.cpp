#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "hpt/dataset.hpp"
#include "hpt/knowledge.hpp"
#include "hpt/training.hpp"

using namespace hpt;

namespace {

struct World {
    EncoderConfig ec;
    DatasetSpec spec;
    TextEncoder text;
    VisualEncoder vis;
    Tokenizer tok;
    SyntheticDataset ds;
    SplitSpec split;
    DescriptionCorpus corpus;
};

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

DatasetSpec tiny_spec() {
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
    return spec;
}

World make_world() {
    EncoderConfig ec = tiny_encoder_cfg();
    DatasetSpec spec = tiny_spec();
    TextEncoder text(ec);
    VisualEncoder vis(ec);
    Tokenizer tok{ec.vocab_size};
    SyntheticDataset ds = make_dataset(spec, text, tok);
    SplitSpec split = make_splits(ds, 11, 3);
    SynthesizerClient synth(synth_profiles(spec));
    DescriptionCorpus corpus =
        generate_corpus(dataset_template(spec, 3), spec.class_names, synth, text, tok);
    return World{ec,  spec, std::move(text), std::move(vis), tok, std::move(ds),
                 std::move(split), std::move(corpus)};
}

TrainConfig tiny_train_cfg() {
    TrainConfig cfg;
    cfg.n_g = 2;
    cfg.n_h = 2;
    cfg.n_visual = 2;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.lr = 0.02;
    cfg.seed = 5;
    return cfg;
}

bool same_tensor(const Tensor2& a, const Tensor2& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

bool same_bundle(PromptBundle& a, PromptBundle& b) {
    ParamRefs pa = a.parameters(), pb = b.parameters();
    for (Parameter* p : a.lambda_parameters()) pa.push_back(p);
    for (Parameter* p : b.lambda_parameters()) pb.push_back(p);
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (!same_tensor(pa[i]->value, pb[i]->value)) return false;
    return true;
}

std::vector<double> unit_row(std::vector<double> v) { return normalized(v); }

void set_row(Tensor2& t, int r, const std::vector<double>& v) {
    for (int c = 0; c < t.cols; ++c) t(r, c) = v[c];
}

}  // namespace

TEST_CASE("train mode strings") {
    CHECK(std::string(to_string(TrainMode::hpt)) == "hpt");
    CHECK(std::string(to_string(TrainMode::hptpp)) == "hpt++");
    CHECK(train_mode_from_string("hpt") == TrainMode::hpt);
    CHECK(train_mode_from_string("hpt++") == TrainMode::hptpp);
    CHECK(train_mode_from_string("hptpp") == TrainMode::hptpp);
    CHECK_THROWS_AS(train_mode_from_string("hpt+"), std::invalid_argument);
    CHECK_THROWS_AS(train_mode_from_string(""), std::invalid_argument);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    auto broken = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr = 0.0; }).validate(), std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr = -0.1; }).validate(), std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.batch_size = 0; }).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.epochs = -1; }).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.n_g = -1; }).validate(), std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.n_h = 0; }).validate(), std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.n_visual = -1; }).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.beta = -0.01; }).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lambda = -1.0; }).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(broken([](TrainConfig& c) { c.logit_scale = 0.0; }).validate(),
                    std::invalid_argument);

    TrainConfig hpt_cfg;
    hpt_cfg.mode = TrainMode::hpt;
    hpt_cfg.reweight_strategy = AttnModMode::additive;
    CHECK_NOTHROW(hpt_cfg.validate());
    hpt_cfg.reweight_strategy = AttnModMode::none;
    CHECK_NOTHROW(hpt_cfg.validate());
    hpt_cfg.reweight_strategy = AttnModMode::multiplicative;
    CHECK_THROWS_AS(hpt_cfg.validate(), std::invalid_argument);
    hpt_cfg.reweight_strategy = AttnModMode::multiplicative_selective;
    CHECK_THROWS_AS(hpt_cfg.validate(), std::invalid_argument);
}

TEST_CASE("config text round trip") {
    TrainConfig cfg;
    cfg.lr = 0.00128;
    cfg.batch_size = 3;
    cfg.epochs = 7;
    cfg.n_g = 1;
    cfg.n_h = 4;
    cfg.n_visual = 5;
    cfg.beta = 0.35;
    cfg.lambda = 0.25;
    cfg.logit_scale = 17.5;
    cfg.seed = 987654321012345ULL;
    cfg.mode = TrainMode::hpt;
    cfg.reweight_strategy = AttnModMode::additive;

    TrainConfig back = parse_train_config(train_config_to_text(cfg));
    CHECK(back.lr == cfg.lr);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.n_g == cfg.n_g);
    CHECK(back.n_h == cfg.n_h);
    CHECK(back.n_visual == cfg.n_visual);
    CHECK(back.beta == cfg.beta);
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.logit_scale == cfg.logit_scale);
    CHECK(back.seed == cfg.seed);
    CHECK(back.mode == cfg.mode);
    CHECK(back.reweight_strategy == cfg.reweight_strategy);

    TrainConfig defaults = parse_train_config("");
    CHECK(defaults.lr == TrainConfig{}.lr);
    CHECK(defaults.mode == TrainMode::hptpp);
    CHECK(defaults.reweight_strategy == AttnModMode::multiplicative);
    CHECK(defaults.n_visual == 2);
}

TEST_CASE("config parsing details") {
    TrainConfig cfg = parse_train_config(
        "# full line comment\n"
        "\n"
        "  lr =  0.01   # trailing comment\n"
        "mode = hpt++\n"
        "reweight_strategy = multiplicative_selective\n"
        "seed=42\n");
    CHECK(cfg.lr == 0.01);
    CHECK(cfg.mode == TrainMode::hptpp);
    CHECK(cfg.reweight_strategy == AttnModMode::multiplicative_selective);
    CHECK(cfg.seed == 42);

    CHECK_THROWS_WITH_AS(parse_train_config("momentum = 0.9\n"), "config: unknown key momentum",
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_train_config("lr = 0.1\nlr = 0.2\n"), "config: repeated key lr",
                         std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("lr\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("lr =\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("lr = fast\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("batch_size = 2.5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("mode = turbo\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("reweight_strategy = soft\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("lr = -0.5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_train_config("mode = hpt\n"), std::invalid_argument);
    CHECK_NOTHROW(parse_train_config("mode = hpt\nreweight_strategy = additive\n"));
}

TEST_CASE("config file loading") {
    const std::string path = "/tmp/hpt_test_config.txt";
    {
        std::ofstream out(path);
        out << "lr = 0.004\nepochs = 3\n";
    }
    TrainConfig cfg = load_train_config(path);
    CHECK(cfg.lr == 0.004);
    CHECK(cfg.epochs == 3);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_train_config("/tmp/does_not_exist_hpt.cfg"), std::runtime_error);
}

TEST_CASE("asymmetric loss hand-computed case") {
    const int d = 2;
    Tensor2 fi(1, d), pi(1, d), ft(2, d), pt(2, d);
    set_row(fi, 0, {1.0, 0.0});
    set_row(pi, 0, {0.0, 1.0});
    set_row(ft, 0, {1.0, 0.0});
    set_row(ft, 1, {0.0, 1.0});
    set_row(pt, 0, {1.0, 0.0});
    set_row(pt, 1, {0.0, 1.0});
    const double s = 2.0;

    LossBreakdown lb = asymmetric_loss(fi, pi, ft, pt, {0}, s);

    const double e2 = std::exp(2.0);
    const double p1y = e2 / (e2 + 1.0);
    const double p2y = 1.0 / (1.0 + e2);
    CHECK(lb.ce1 == doctest::Approx(-std::log(p1y)).epsilon(1e-12));
    CHECK(lb.ce2 == doctest::Approx(-std::log(p2y)).epsilon(1e-12));
    CHECK(lb.ce_avg == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(lb.l_asy == doctest::Approx(lb.ce1 + lb.ce2 + lb.ce_avg).epsilon(1e-12));
    CHECK(lb.l_c == 0.0);
    CHECK(lb.total == lb.l_asy);
}

TEST_CASE("asymmetric loss uniform and batched cases") {
    const int d = 4;
    Rng rng(3);
    // orthogonal unit rows give all-zero logits, so each path is uniform over K
    Tensor2 fi(2, d), pi(2, d), ft(2, d), pt(2, d);
    set_row(fi, 0, {1, 0, 0, 0});
    set_row(fi, 1, {0, 1, 0, 0});
    set_row(pi, 0, {1, 0, 0, 0});
    set_row(pi, 1, {0, 1, 0, 0});
    set_row(ft, 0, {0, 0, 1, 0});
    set_row(ft, 1, {0, 0, 0, 1});
    set_row(pt, 0, {0, 0, 1, 0});
    set_row(pt, 1, {0, 0, 0, 1});
    LossBreakdown lb = asymmetric_loss(fi, pi, ft, pt, {0, 1}, 20.0);
    CHECK(lb.ce1 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(lb.ce2 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(lb.ce_avg == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // batch mean: duplicating a sample leaves the loss unchanged
    Tensor2 fi1(1, d), pi1(1, d);
    set_row(fi1, 0, unit_row({0.3, -0.2, 0.8, 0.1}));
    set_row(pi1, 0, unit_row({-0.5, 0.4, 0.2, 0.7}));
    Tensor2 ftr(3, d), ptr(3, d);
    Rng r2(9);
    for (int k = 0; k < 3; ++k) {
        std::vector<double> a(d), b(d);
        for (int j = 0; j < d; ++j) {
            a[j] = r2.normal();
            b[j] = r2.normal();
        }
        set_row(ftr, k, unit_row(a));
        set_row(ptr, k, unit_row(b));
    }
    LossBreakdown one = asymmetric_loss(fi1, pi1, ftr, ptr, {2}, 20.0);
    Tensor2 fi2(2, d), pi2(2, d);
    for (int j = 0; j < d; ++j) {
        fi2(0, j) = fi2(1, j) = fi1(0, j);
        pi2(0, j) = pi2(1, j) = pi1(0, j);
    }
    LossBreakdown two = asymmetric_loss(fi2, pi2, ftr, ptr, {2, 2}, 20.0);
    CHECK(two.l_asy == doctest::Approx(one.l_asy).epsilon(1e-12));
}

TEST_CASE("asymmetric loss input validation") {
    Tensor2 fi(1, 2), pi(1, 2), ft(2, 2), pt(2, 2);
    set_row(fi, 0, {1, 0});
    set_row(pi, 0, {0, 1});
    set_row(ft, 0, {1, 0});
    set_row(ft, 1, {0, 1});
    set_row(pt, 0, {1, 0});
    set_row(pt, 1, {0, 1});
    CHECK_THROWS_AS(asymmetric_loss(fi, pi, ft, pt, {2}, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(asymmetric_loss(fi, pi, ft, pt, {-1}, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(asymmetric_loss(fi, pi, ft, pt, {0, 1}, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(asymmetric_loss(fi, pi, ft, pt, {0}, 0.0), std::invalid_argument);

    Tensor2 bad = fi;
    bad(0, 0) = 2.0;
    CHECK_THROWS_AS(asymmetric_loss(bad, pi, ft, pt, {0}, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(asymmetric_loss(fi, bad, ft, pt, {0}, 20.0), std::invalid_argument);

    Tensor2 one_class(1, 2);
    set_row(one_class, 0, {1, 0});
    CHECK_THROWS_AS(asymmetric_loss(fi, pi, one_class, one_class, {0}, 20.0),
                    std::invalid_argument);
}

TEST_CASE("asymmetric loss saturates to infinity instead of throwing") {
    const int d = 4;
    Tensor2 fi(1, d), pi(1, d), ft(2, d), pt(2, d);
    set_row(fi, 0, {1, 0, 0, 0});
    set_row(pt, 0, {-1, 0, 0, 0});
    set_row(pt, 1, {1, 0, 0, 0});
    set_row(pi, 0, {0, 0, 1, 0});
    set_row(ft, 0, {0, 0, 1, 0});
    set_row(ft, 1, {0, 0, 0, 1});
    LossBreakdown lb = asymmetric_loss(fi, pi, ft, pt, {0}, 800.0);
    CHECK(std::isinf(lb.ce1));
    CHECK(std::isinf(lb.total));
    CHECK(std::isfinite(lb.ce2));
}

TEST_CASE("asymmetric loss gradients match finite differences through normalization") {
    const int B = 3, K = 4, d = 6;
    Rng rng(21);
    Tensor2 fi(B, d), ft(K, d);
    Tensor2 raw_pi(B, d), raw_pt(K, d);
    for (int b = 0; b < B; ++b) {
        std::vector<double> a(d);
        for (int j = 0; j < d; ++j) {
            a[j] = rng.normal();
            raw_pi(b, j) = rng.normal();
        }
        set_row(fi, b, unit_row(a));
    }
    for (int k = 0; k < K; ++k) {
        std::vector<double> a(d);
        for (int j = 0; j < d; ++j) {
            a[j] = rng.normal();
            raw_pt(k, j) = rng.normal();
        }
        set_row(ft, k, unit_row(a));
    }
    const std::vector<int> labels = {1, 3, 0};
    const double s = 7.0;

    auto forward = [&]() {
        Tensor2 pi(B, d), pt(K, d);
        for (int b = 0; b < B; ++b) {
            std::vector<double> row(raw_pi.row(b), raw_pi.row(b) + d);
            set_row(pi, b, normalized(row));
        }
        for (int k = 0; k < K; ++k) {
            std::vector<double> row(raw_pt.row(k), raw_pt.row(k) + d);
            set_row(pt, k, normalized(row));
        }
        return asymmetric_loss(fi, pi, ft, pt, labels, s).l_asy;
    };

    // analytic gradients on the raw tensors
    Tensor2 pi(B, d), pt(K, d);
    for (int b = 0; b < B; ++b) {
        std::vector<double> row(raw_pi.row(b), raw_pi.row(b) + d);
        set_row(pi, b, normalized(row));
    }
    for (int k = 0; k < K; ++k) {
        std::vector<double> row(raw_pt.row(k), raw_pt.row(k) + d);
        set_row(pt, k, normalized(row));
    }
    Tensor2 d_pi, d_pt;
    asymmetric_loss(fi, pi, ft, pt, labels, s, &d_pi, &d_pt);
    CHECK(d_pi.rows == B);
    CHECK(d_pi.cols == d);
    CHECK(d_pt.rows == K);
    CHECK(d_pt.cols == d);

    const double h = 1e-5;
    double max_rel = 0.0;
    auto check_entry = [&](Tensor2& raw, const std::vector<double>& d_unit_rows, int r, int c,
                           const std::vector<double>& raw_row) {
        std::vector<double> d_raw = normalize_backward(raw_row, d_unit_rows);
        const double save = raw(r, c);
        raw(r, c) = save + h;
        const double up = forward();
        raw(r, c) = save - h;
        const double dn = forward();
        raw(r, c) = save;
        const double fd = (up - dn) / (2.0 * h);
        const double rel =
            std::abs(fd - d_raw[c]) / std::max({1.0, std::abs(fd), std::abs(d_raw[c])});
        max_rel = std::max(max_rel, rel);
    };
    for (int b = 0; b < B; ++b) {
        std::vector<double> raw_row(raw_pi.row(b), raw_pi.row(b) + d);
        std::vector<double> d_row(d_pi.row(b), d_pi.row(b) + d);
        for (int c = 0; c < d; ++c) check_entry(raw_pi, d_row, b, c, raw_row);
    }
    for (int k = 0; k < K; ++k) {
        std::vector<double> raw_row(raw_pt.row(k), raw_pt.row(k) + d);
        std::vector<double> d_row(d_pt.row(k), d_pt.row(k) + d);
        for (int c = 0; c < d; ++c) check_entry(raw_pt, d_row, k, c, raw_row);
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("consistency loss endpoints and range") {
    std::vector<double> a = {0.6, 0.8, 0.0};
    CHECK(consistency_loss(a, a) == doctest::Approx(0.0).epsilon(1e-15));
    std::vector<double> na = {-0.6, -0.8, 0.0};
    CHECK(consistency_loss(a, na) == doctest::Approx(2.0).epsilon(1e-15));
    std::vector<double> orth = {-0.8, 0.6, 0.0};
    CHECK(consistency_loss(a, orth) == doctest::Approx(1.0).epsilon(1e-15));

    // scale of either argument is irrelevant
    std::vector<double> t = {0.1, -0.4, 0.9};
    std::vector<double> t3 = {0.3, -1.2, 2.7};
    CHECK(consistency_loss(a, t) == doctest::Approx(consistency_loss(a, t3)).epsilon(1e-12));

    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> u(5), v(5);
        for (int j = 0; j < 5; ++j) {
            u[j] = rng.normal();
            v[j] = rng.normal();
        }
        const double l = consistency_loss(u, v);
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
    }

    CHECK_THROWS_AS(consistency_loss({1.0, 0.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(consistency_loss({0.0, 0.0}, {1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(consistency_loss({1.0, 0.0}, {0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(consistency_loss({}, {}), std::invalid_argument);
}

TEST_CASE("consistency loss gradient matches finite differences") {
    Rng rng(13);
    const int d = 8;
    std::vector<double> a(d), t(d);
    for (int j = 0; j < d; ++j) {
        a[j] = rng.normal();
        t[j] = rng.normal();
    }
    std::vector<double> grad;
    consistency_loss(a, t, &grad);
    REQUIRE(grad.size() == static_cast<size_t>(d));

    const double h = 1e-6;
    double max_rel = 0.0;
    for (int j = 0; j < d; ++j) {
        const double save = a[j];
        a[j] = save + h;
        const double up = consistency_loss(a, t);
        a[j] = save - h;
        const double dn = consistency_loss(a, t);
        a[j] = save;
        const double fd = (up - dn) / (2.0 * h);
        const double rel =
            std::abs(fd - grad[j]) / std::max({1.0, std::abs(fd), std::abs(grad[j])});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("description sampling") {
    ClassKnowledge ck;
    ck.name = "fox";
    for (int i = 0; i < 5; ++i) {
        ck.overall.push_back("description " + std::to_string(i));
        ck.relations.emplace_back();
    }

    Rng rng(4);
    std::set<int> seen;
    for (int trial = 0; trial < 1000; ++trial) {
        DescriptionDraw d = sample_description(rng, ck, 5);
        REQUIRE(d.index >= 0);
        REQUIRE(d.index < 5);
        CHECK(d.description == &ck.overall[d.index]);
        CHECK(d.graph == &ck.relations[d.index]);
        seen.insert(d.index);
    }
    CHECK(seen.size() == 5);

    // restricted to the first n_h descriptions
    Rng rng2(4);
    for (int trial = 0; trial < 100; ++trial) CHECK(sample_description(rng2, ck, 2).index < 2);

    Rng ra(9), rb(9);
    for (int trial = 0; trial < 50; ++trial)
        CHECK(sample_description(ra, ck, 5).index == sample_description(rb, ck, 5).index);

    Rng rng3(1);
    CHECK_THROWS_AS(sample_description(rng3, ck, 6), std::invalid_argument);
    CHECK_THROWS_AS(sample_description(rng3, ck, 0), std::invalid_argument);
}

TEST_CASE("class text model construction") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    const ClassKnowledge* ck = w.corpus.find_class("fox");
    REQUIRE(ck != nullptr);

    ClassTextModel m = build_class_text_model(w.text, w.tok, *ck, cfg);
    CHECK(m.name == "fox");
    CHECK(m.n_desc() == cfg.n_h);
    CHECK(m.graphs.size() == 2);
    CHECK(m.alignments.size() == 2);
    CHECK(m.states.size() == 2);
    CHECK(m.frozen_desc.size() == 2);

    // layout: class token "a wild fox" is three words of one chunk each
    const SegmentLayout& lay = m.seqs[0].layout;
    CHECK(lay.class_len == 3);
    CHECK(lay.global_len == cfg.n_g);
    CHECK(lay.high_len == cfg.n_h);
    CHECK(lay.low_len > 1);

    for (int i = 0; i < m.n_desc(); ++i) {
        CHECK(norm(m.frozen_desc[i]) == doctest::Approx(1.0).epsilon(1e-12));
        FrozenResult fr = w.text.encode_frozen(build_plain_sequence(w.tok, w.ec, ck->overall[i]));
        CHECK(m.frozen_desc[i] == normalized(fr.z));
        CHECK(m.states[i].h.size() == static_cast<size_t>(w.ec.num_layers));
    }
    std::vector<double> mean(w.ec.model_dim, 0.0);
    for (const auto& fd : m.frozen_desc)
        for (size_t j = 0; j < fd.size(); ++j) mean[j] += fd[j] / m.n_desc();
    CHECK(m.frozen_mean == normalized(mean));

    SUBCASE("high and low toggles shrink the sequence") {
        TrainConfig no_high = cfg;
        no_high.use_high = false;
        ClassTextModel mh = build_class_text_model(w.text, w.tok, *ck, no_high);
        CHECK(mh.seqs[0].layout.high_len == 0);
        CHECK(mh.seqs[0].layout.low_len == lay.low_len);

        TrainConfig no_low = cfg;
        no_low.use_low = false;
        ClassTextModel ml = build_class_text_model(w.text, w.tok, *ck, no_low);
        CHECK(ml.seqs[0].layout.low_len == 1);
        CHECK(ml.seqs[0].layout.high_len == cfg.n_h);
        CHECK(ml.seqs[0].word_spans.empty());
    }

    SUBCASE("requesting more descriptions than the corpus has fails") {
        TrainConfig big = cfg;
        big.n_h = 4;
        CHECK_THROWS_AS(build_class_text_model(w.text, w.tok, *ck, big), std::invalid_argument);
    }
}

TEST_CASE("layer mod construction per strategy") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    const ClassKnowledge* ck = w.corpus.find_class("fox");
    ClassTextModel m = build_class_text_model(w.text, w.tok, *ck, cfg);
    PromptBundle bundle = make_prompt_bundle(w.ec, cfg.n_g, cfg.n_h, cfg.n_visual, 33);
    bundle.lam_e2e.value(0, 0) = 0.5;
    bundle.lam_e2e.value(0, 1) = -0.25;
    bundle.lam_e2a.value(0, 0) = 0.125;
    bundle.lam_e2a.value(0, 1) = 0.75;

    const RelationGraph& g = m.graphs[0];
    const TokenAlignment& al = m.alignments[0];
    const SegmentLayout& lay = m.seqs[0].layout;
    REQUIRE(!g.e2e_pairs.empty());
    const TokenAlignment::Span* sa = al.find(g.e2e_pairs[0].first);
    const TokenAlignment::Span* sb = al.find(g.e2e_pairs[0].second);
    REQUIRE(sa != nullptr);
    REQUIRE(sb != nullptr);
    const int i = sa->begin, j = sb->begin;

    SUBCASE("none strategy or disabled low block yields no mods") {
        TrainConfig none_cfg = cfg;
        none_cfg.reweight_strategy = AttnModMode::none;
        CHECK(build_layer_mods(none_cfg, bundle, g, al, lay, w.ec.num_layers).empty());
        TrainConfig no_low = cfg;
        no_low.use_low = false;
        CHECK(build_layer_mods(no_low, bundle, g, al, lay, w.ec.num_layers).empty());
    }

    SUBCASE("additive scalars come from the bundle in hpt mode") {
        TrainConfig hc = cfg;
        hc.mode = TrainMode::hpt;
        hc.reweight_strategy = AttnModMode::additive;
        auto mods = build_layer_mods(hc, bundle, g, al, lay, w.ec.num_layers);
        REQUIRE(mods.size() == 2);
        CHECK(mods[0].mode == AttnModMode::additive);
        CHECK(mods[0].values(i, j) == 0.5);
        CHECK(mods[1].values(i, j) == -0.25);
        CHECK(mods[0].values(j, i) == 0.5);
    }

    SUBCASE("additive scalars come from beta in hpt++ mode") {
        TrainConfig pc = cfg;
        pc.reweight_strategy = AttnModMode::additive;
        pc.beta = 0.4;
        auto mods = build_layer_mods(pc, bundle, g, al, lay, w.ec.num_layers);
        REQUIRE(mods.size() == 2);
        CHECK(mods[0].values(i, j) == 0.4);
        CHECK(mods[1].values(i, j) == 0.4);
    }

    SUBCASE("multiplicative strategies match the relation graph builders") {
        auto mods = build_layer_mods(cfg, bundle, g, al, lay, w.ec.num_layers);
        REQUIRE(mods.size() == 2);
        AttentionModMatrix want = build_reweight_matrix(g, al, cfg.beta, lay);
        CHECK(mods[0].mode == AttnModMode::multiplicative);
        CHECK(mods[0].values.data == want.values.data);
        CHECK(mods[1].values.data == want.values.data);

        TrainConfig sel = cfg;
        sel.reweight_strategy = AttnModMode::multiplicative_selective;
        auto smods = build_layer_mods(sel, bundle, g, al, lay, w.ec.num_layers);
        AttentionModMatrix swant = build_selective_matrix(g, al, cfg.beta, lay);
        CHECK(smods[0].mode == AttnModMode::multiplicative_selective);
        CHECK(smods[0].values.data == swant.values.data);
    }
}

TEST_CASE("class text forward composes the public pieces") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    const ClassKnowledge* ck = w.corpus.find_class("wolf");
    ClassTextModel m = build_class_text_model(w.text, w.tok, *ck, cfg);
    PromptBundle bundle = make_prompt_bundle(w.ec, cfg.n_g, cfg.n_h, cfg.n_visual, 33);

    std::vector<Tensor2> p_h = generate_high_prompts(m.states, bundle);
    auto mods_manual =
        build_layer_mods(cfg, bundle, m.graphs[1], m.alignments[1], m.seqs[1].layout,
                         w.ec.num_layers);
    std::vector<double> want = hierarchical_forward(w.text, m.seqs[1], bundle, p_h, mods_manual,
                                                    nullptr);

    std::vector<AttentionModMatrix> mods_out;
    HierCache cache;
    std::vector<double> got = class_text_forward(w.text, m, 1, cfg, bundle, &mods_out, &cache);
    CHECK(got == want);
    CHECK(mods_out.size() == 2);
    CHECK(cache.blocks.size() == 2);

    CHECK_THROWS_AS(class_text_forward(w.text, m, 2, cfg, bundle, nullptr, nullptr),
                    std::out_of_range);
    CHECK_THROWS_AS(class_text_forward(w.text, m, -1, cfg, bundle, nullptr, nullptr),
                    std::out_of_range);

    SUBCASE("zero-strength strategies all reproduce plain attention bitwise") {
        TrainConfig z = cfg;
        z.beta = 0.0;
        z.reweight_strategy = AttnModMode::none;
        std::vector<double> plain = class_text_forward(w.text, m, 0, z, bundle, nullptr, nullptr);
        z.reweight_strategy = AttnModMode::additive;
        CHECK(class_text_forward(w.text, m, 0, z, bundle, nullptr, nullptr) == plain);
        z.reweight_strategy = AttnModMode::multiplicative;
        CHECK(class_text_forward(w.text, m, 0, z, bundle, nullptr, nullptr) == plain);
        z.reweight_strategy = AttnModMode::multiplicative_selective;
        CHECK(class_text_forward(w.text, m, 0, z, bundle, nullptr, nullptr) == plain);
    }
}

TEST_CASE("category embedding is the renormalized mean over descriptions") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    const ClassKnowledge* ck = w.corpus.find_class("crow");
    ClassTextModel m = build_class_text_model(w.text, w.tok, *ck, cfg);
    PromptBundle bundle = make_prompt_bundle(w.ec, cfg.n_g, cfg.n_h, cfg.n_visual, 33);

    std::vector<double> got = category_embedding_inference(w.text, m, cfg, bundle);
    CHECK(norm(got) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> mean(w.ec.model_dim, 0.0);
    for (int i = 0; i < m.n_desc(); ++i) {
        std::vector<double> zn =
            normalized(class_text_forward(w.text, m, i, cfg, bundle, nullptr, nullptr));
        for (int j = 0; j < w.ec.model_dim; ++j) mean[j] += zn[j] / m.n_desc();
    }
    CHECK(got == normalized(mean));
}

TEST_CASE("training runs, learns, and is deterministic") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    cfg.epochs = 6;

    TrainResult r = train(cfg, w.ec, w.corpus, w.ds, w.split);
    CHECK_FALSE(r.diverged);
    // 6 train samples, batch 4 -> 2 steps per epoch
    REQUIRE(r.trace.size() == 12);
    for (size_t i = 0; i < r.trace.size(); ++i) {
        CHECK(r.trace[i].step == static_cast<int>(i) + 1);
        CHECK(std::isfinite(r.trace[i].loss.total));
        CHECK(r.trace[i].loss.l_c >= 0.0);
        CHECK(r.trace[i].loss.l_c <= 2.0);
        CHECK(r.trace[i].loss.total ==
              doctest::Approx(r.trace[i].loss.l_asy + cfg.lambda * r.trace[i].loss.l_c)
                  .epsilon(1e-12));
    }

    double first = 0.0, last = 0.0;
    for (int i = 0; i < 3; ++i) {
        first += r.trace[i].loss.total / 3.0;
        last += r.trace[r.trace.size() - 1 - i].loss.total / 3.0;
    }
    CHECK_MESSAGE(last < first, "expected the loss to fall, first=", first, " last=", last);

    TrainResult r2 = train(cfg, w.ec, w.corpus, w.ds, w.split);
    CHECK(same_bundle(r.bundle, r2.bundle));
    REQUIRE(r2.trace.size() == r.trace.size());
    for (size_t i = 0; i < r.trace.size(); ++i)
        CHECK(r.trace[i].loss.total == r2.trace[i].loss.total);

    SUBCASE("the result echoes its inputs") {
        CHECK(r.config.epochs == 6);
        CHECK(r.encoder_cfg.model_dim == w.ec.model_dim);
        CHECK(r.bundle.n_g == cfg.n_g);
        CHECK(r.bundle.n_h == cfg.n_h);
        CHECK(r.bundle.global_prompts.size() == static_cast<size_t>(w.ec.num_layers));
        CHECK(r.bundle.visual_prompts.size() == static_cast<size_t>(w.ec.num_layers));
    }
}

TEST_CASE("zero epochs returns the untouched initial bundle") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    cfg.epochs = 0;
    TrainResult r = train(cfg, w.ec, w.corpus, w.ds, w.split);
    CHECK(r.trace.empty());
    CHECK_FALSE(r.diverged);
    PromptBundle fresh = make_prompt_bundle(w.ec, cfg.n_g, cfg.n_h, cfg.n_visual, cfg.seed);
    CHECK(same_bundle(r.bundle, fresh));
}

TEST_CASE("lambda scalars train only in hpt mode") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();
    cfg.mode = TrainMode::hpt;
    cfg.reweight_strategy = AttnModMode::additive;
    TrainResult r = train(cfg, w.ec, w.corpus, w.ds, w.split);
    double moved = 0.0;
    for (int l = 0; l < w.ec.num_layers; ++l)
        moved += std::abs(r.bundle.lam_e2e.value(0, l)) + std::abs(r.bundle.lam_e2a.value(0, l));
    CHECK(moved > 0.0);

    TrainConfig pp = tiny_train_cfg();
    pp.reweight_strategy = AttnModMode::additive;
    TrainResult rp = train(pp, w.ec, w.corpus, w.ds, w.split);
    for (int l = 0; l < w.ec.num_layers; ++l) {
        CHECK(rp.bundle.lam_e2e.value(0, l) == 0.0);
        CHECK(rp.bundle.lam_e2a.value(0, l) == 0.0);
    }
}

TEST_CASE("zero-beta training trajectories agree across strategies bitwise") {
    World w = make_world();
    TrainConfig base = tiny_train_cfg();
    base.beta = 0.0;

    std::vector<AttnModMode> strategies = {AttnModMode::none, AttnModMode::additive,
                                           AttnModMode::multiplicative,
                                           AttnModMode::multiplicative_selective};
    std::vector<TrainResult> results;
    for (AttnModMode s : strategies) {
        TrainConfig cfg = base;
        cfg.reweight_strategy = s;
        results.push_back(train(cfg, w.ec, w.corpus, w.ds, w.split));
    }
    for (size_t i = 1; i < results.size(); ++i) {
        CHECK(same_bundle(results[0].bundle, results[i].bundle));
        REQUIRE(results[i].trace.size() == results[0].trace.size());
        for (size_t t = 0; t < results[0].trace.size(); ++t)
            CHECK(results[0].trace[t].loss.total == results[i].trace[t].loss.total);
    }
}

TEST_CASE("training input validation") {
    World w = make_world();
    TrainConfig cfg = tiny_train_cfg();

    SUBCASE("corpus with too few descriptions per class") {
        TrainConfig big = cfg;
        big.n_h = 4;
        CHECK_THROWS_AS(train(big, w.ec, w.corpus, w.ds, w.split), std::invalid_argument);
    }

    SUBCASE("corpus missing a base class names it") {
        DescriptionCorpus partial = w.corpus;
        const std::string victim = w.ds.spec.class_names[w.split.base_classes[0]];
        partial.classes.erase(partial.classes.begin());
        REQUIRE(partial.find_class(victim) == nullptr);
        try {
            train(cfg, w.ec, partial, w.ds, w.split);
            FAIL("expected an exception");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find(victim) != std::string::npos);
        }
    }

    SUBCASE("degenerate splits are rejected") {
        SplitSpec s = w.split;
        s.base_classes = {0};
        CHECK_THROWS_AS(train(cfg, w.ec, w.corpus, w.ds, s), std::invalid_argument);
        s = w.split;
        s.train_indices.clear();
        CHECK_THROWS_AS(train(cfg, w.ec, w.corpus, w.ds, s), std::invalid_argument);
        s = w.split;
        s.train_indices[0] = 10000;
        CHECK_THROWS_AS(train(cfg, w.ec, w.corpus, w.ds, s), std::invalid_argument);
    }
}

TEST_CASE("training gradient suite passes") {
    GradSuiteReport report = run_training_grad_suite();
    REQUIRE(report.entries.size() == 9);

    std::set<std::string> hpt_groups, pp_groups;
    for (const GradSuiteEntry& e : report.entries) {
        CHECK(e.params_checked > 0);
        CHECK_MESSAGE(e.max_rel_err < report.tolerance, e.regime, "/", e.group,
                      " rel err ", e.max_rel_err);
        if (e.regime == "hpt-additive") hpt_groups.insert(e.group);
        if (e.regime == "hptpp-multiplicative") pp_groups.insert(e.group);
    }
    CHECK(hpt_groups ==
          std::set<std::string>{"global_prompts", "generator", "adapter", "lambda",
                                "visual_prompts"});
    CHECK(pp_groups ==
          std::set<std::string>{"global_prompts", "generator", "adapter", "visual_prompts"});
    CHECK(report.passed());
    CHECK(report.seconds < 60.0);
    CHECK(report.step_size == 1e-4);
}
