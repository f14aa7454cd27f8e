#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "hpt/relgraph.hpp"
#include "hpt/rng.hpp"

using namespace hpt;

namespace {

EncoderConfig cfg96() {
    EncoderConfig cfg;
    cfg.max_seq_len = 96;
    cfg.vocab_size = 512;
    return cfg;
}

TokenSequence seq_for(const std::string& text) {
    Tokenizer tok;
    return build_plain_sequence(tok, cfg96(), text);
}

// Independent pair classification: scans every span combination per relation
// set rather than stamping, so it shares no code path with the builders.
// Additive matrices read the e2e/e2a pair lists; reweight and selective
// matrices read the triples, so each side gets its own oracle.
enum class OKind { none, e2e, e2a };

bool pair_hit(const TokenAlignment& al, int i, int j, const std::string& a,
              const std::string& b) {
    auto inside = [&](const std::string& w, int t) {
        const TokenAlignment::Span* s = al.find(w);
        return s && t >= s->begin && t < s->end;
    };
    return (inside(a, i) && inside(b, j)) || (inside(b, i) && inside(a, j));
}

OKind classify_pairs(const RelationGraph& g, const TokenAlignment& al, int i, int j) {
    for (const auto& p : g.e2e_pairs)
        if (pair_hit(al, i, j, p.first, p.second)) return OKind::e2e;
    for (const auto& p : g.e2a_pairs)
        if (pair_hit(al, i, j, p.first, p.second)) return OKind::e2a;
    return OKind::none;
}

bool classify_related(const RelationGraph& g, const TokenAlignment& al, int i, int j) {
    for (const auto& t : g.triples)
        if (pair_hit(al, i, j, t.subject, t.object)) return true;
    return false;
}

}  // namespace

TEST_CASE("align_words: direct match, miss, multi-token span") {
    TokenSequence seq = seq_for("the Striped lizard basks quietly");
    RelationGraph g;
    g.entities = {"lizard", "rock"};
    g.attributes = {"striped"};
    g.e2a_pairs = {{"lizard", "striped"}};

    TokenAlignment al = align_words(seq, g);
    const TokenAlignment::Span* liz = al.find("lizard");
    REQUIRE(liz != nullptr);
    CHECK(liz->end - liz->begin == 2);  // six letters -> two chunks
    REQUIRE(al.find("striped") != nullptr);
    CHECK(al.find("STRIPED") != nullptr);  // case-insensitive
    CHECK(al.find("rock") == nullptr);
    REQUIRE(al.unmatched_words.size() == 1);
    CHECK(al.unmatched_words[0] == "rock");

    // first occurrence wins on repeats
    TokenSequence rep = seq_for("red fox red");
    RelationGraph g2;
    g2.entities = {"red"};
    TokenAlignment al2 = align_words(rep, g2);
    REQUIRE(al2.find("red") != nullptr);
    CHECK(al2.find("red")->begin == 0);
    CHECK(al2.find("red")->end == 1);
}

TEST_CASE("multi-token word applies relations to all cross pairs") {
    // "lizard" -> 2 tokens at [1,3), "sun" -> 1 token at [3,4)
    TokenSequence seq = seq_for("the lizard sun");
    RelationGraph g;
    g.entities = {"lizard", "sun"};
    g.e2e_pairs = {{"lizard", "sun"}};
    TokenAlignment al = align_words(seq, g);
    AttentionModMatrix m = build_additive_matrix(g, al, 0.7, 0.3, seq.layout);

    // hand enumeration over the 5-token sequence (4 word tokens + EOT)
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const bool cross = ((i == 1 || i == 2) && j == 3) || (i == 3 && (j == 1 || j == 2));
            CHECK(m.values(i, j) == (cross ? 0.7 : 0.0));
        }
}

TEST_CASE("build_additive_matrix basics") {
    TokenSequence seq = seq_for("fox den dark");
    RelationGraph empty;
    TokenAlignment al0 = align_words(seq, empty);
    AttentionModMatrix zero = build_additive_matrix(empty, al0, 0.5, 0.25, seq.layout);
    for (double v : zero.values.data) CHECK(v == 0.0);

    RelationGraph g;
    g.entities = {"fox", "den"};
    g.attributes = {"dark"};
    g.e2e_pairs = {{"fox", "den"}};
    TokenAlignment al = align_words(seq, g);
    AttentionModMatrix m = build_additive_matrix(g, al, 0.5, 0.25, seq.layout);
    CHECK(m.mode == AttnModMode::additive);
    CHECK(m.values(0, 1) == 0.5);
    CHECK(m.values(1, 0) == 0.5);
    CHECK(m.kind_at(0, 1) == PairKind::e2e);
    int nonzero = 0;
    for (double v : m.values.data) nonzero += (v != 0.0);
    CHECK(nonzero == 2);
}

TEST_CASE("unmatched relation words never create entries") {
    TokenSequence seq = seq_for("fox den");
    RelationGraph g;
    g.entities = {"fox", "ghost"};
    g.e2e_pairs = {{"fox", "ghost"}};
    g.triples = {{"ghost", "haunts", "fox"}};
    TokenAlignment al = align_words(seq, g);
    CHECK(al.unmatched_words == std::vector<std::string>{"ghost"});

    AttentionModMatrix add = build_additive_matrix(g, al, 0.5, 0.25, seq.layout);
    for (double v : add.values.data) CHECK(v == 0.0);

    AttentionModMatrix sel = build_selective_matrix(g, al, 0.4, seq.layout);
    for (double v : sel.values.data) CHECK(v == 1.0);
}

TEST_CASE("build_reweight_matrix formula cases") {
    TokenSequence seq = seq_for("fox paw mud");
    RelationGraph g;
    g.triples = {{"fox", "lifts", "paw"}};
    TokenAlignment al = align_words(seq, g);

    AttentionModMatrix flat = build_reweight_matrix(g, al, 0.0, seq.layout);
    for (double v : flat.values.data) CHECK(v == 1.0);

    AttentionModMatrix m = build_reweight_matrix(g, al, 0.2, seq.layout);
    const int S = seq.layout.seq_len();  // 4: three words + EOT, all in low block
    REQUIRE(S == 4);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
            const bool related = (i == 0 && j == 1) || (i == 1 && j == 0);
            CHECK(m.values(i, j) == doctest::Approx(related ? 1.2 : 1.0 / 1.2).epsilon(1e-15));
        }

    CHECK_THROWS_AS(build_reweight_matrix(g, al, -0.1, seq.layout), std::invalid_argument);
}

TEST_CASE("reweight entries are neutral outside the low block") {
    Tokenizer tok;
    TokenSequence seq = build_sequence(tok, cfg96(), "fox", 2, 3, "fox paw mud");
    RelationGraph g;
    g.triples = {{"fox", "lifts", "paw"}};
    TokenAlignment al = align_words(seq, g);
    AttentionModMatrix m = build_reweight_matrix(g, al, 0.2, seq.layout);
    const SegmentLayout& lay = seq.layout;
    for (int i = 0; i < lay.seq_len(); ++i)
        for (int j = 0; j < lay.seq_len(); ++j) {
            if (!lay.in_low(i) || !lay.in_low(j)) CHECK(m.values(i, j) == 1.0);
        }
    // the class token occurrence of "fox" is outside the low block; the
    // aligned span must be the low-block one
    CHECK(al.find("fox")->begin == lay.low_off);
}

TEST_CASE("build_selective_matrix formula cases") {
    TokenSequence seq = seq_for("fox paw mud");
    RelationGraph g;
    g.triples = {{"fox", "lifts", "paw"}};
    TokenAlignment al = align_words(seq, g);

    AttentionModMatrix flat = build_selective_matrix(g, al, 0.0, seq.layout);
    for (double v : flat.values.data) CHECK(v == 1.0);

    AttentionModMatrix m = build_selective_matrix(g, al, 1.0, seq.layout);
    CHECK(m.values(0, 1) == 2.0);
    CHECK(m.values(1, 0) == 2.0);
    int scaled = 0;
    for (double v : m.values.data) scaled += (v != 1.0);
    CHECK(scaled == 2);

    CHECK_THROWS_AS(build_selective_matrix(g, al, -0.5, seq.layout), std::invalid_argument);

    // agreement with reweight exactly on related cells, difference elsewhere
    AttentionModMatrix rw = build_reweight_matrix(g, al, 1.0, seq.layout);
    for (int i = 0; i < seq.layout.seq_len(); ++i)
        for (int j = 0; j < seq.layout.seq_len(); ++j) {
            if (m.kind_at(i, j) == PairKind::related) {
                CHECK(m.values(i, j) == rw.values(i, j));
            } else if (seq.layout.in_low(i) && seq.layout.in_low(j)) {
                CHECK(m.values(i, j) != rw.values(i, j));
            }
        }
}

TEST_CASE("builders match brute-force enumeration on 50 random graphs") {
    // short words are one token, the long ones two, so spans vary
    const std::vector<std::string> pool = {"fox",  "den",   "mud",   "paw",     "sunlit",
                                           "bark", "stripe", "tail", "whisker", "rock"};
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        // random description drawing 5..9 words from the pool
        const int n_words = 5 + rng.index(5);
        std::string text;
        std::vector<std::string> present;
        for (int i = 0; i < n_words; ++i) {
            const std::string& w = pool[rng.index(static_cast<int>(pool.size()))];
            present.push_back(w);
            text += w + " ";
        }
        const bool with_prompts = rng.index(2) == 1;
        Tokenizer tok;
        TokenSequence seq = with_prompts ? build_sequence(tok, cfg96(), "fox", 2, 3, text)
                                         : seq_for(text);

        RelationGraph g;
        auto pick = [&]() -> const std::string& {
            // sometimes a word absent from the text
            if (rng.index(5) == 0) {
                static const std::string ghost = "ghostword";
                return ghost;
            }
            return present[rng.index(static_cast<int>(present.size()))];
        };
        const int n_e2e = rng.index(3), n_e2a = rng.index(3), n_tri = 1 + rng.index(3);
        for (int i = 0; i < n_e2e; ++i) g.e2e_pairs.emplace_back(pick(), pick());
        for (int i = 0; i < n_e2a; ++i) g.e2a_pairs.emplace_back(pick(), pick());
        for (int i = 0; i < n_tri; ++i) g.triples.push_back({pick(), "verbs", pick()});

        TokenAlignment al = align_words(seq, g);
        const double le2e = 0.4, le2a = -0.3, beta = 0.25;
        AttentionModMatrix add = build_additive_matrix(g, al, le2e, le2a, seq.layout);
        AttentionModMatrix rw = build_reweight_matrix(g, al, beta, seq.layout);
        AttentionModMatrix sel = build_selective_matrix(g, al, beta, seq.layout);

        const SegmentLayout& lay = seq.layout;
        for (int i = 0; i < lay.seq_len(); ++i)
            for (int j = 0; j < lay.seq_len(); ++j) {
                const OKind k = classify_pairs(g, al, i, j);
                const double expect_add =
                    k == OKind::e2e ? le2e : (k == OKind::e2a ? le2a : 0.0);
                CHECK(add.values(i, j) == expect_add);

                const bool rel = classify_related(g, al, i, j);
                const bool low_pair = lay.in_low(i) && lay.in_low(j);
                const double expect_rw =
                    rel ? 1.0 + beta : (low_pair ? 1.0 / (1.0 + beta) : 1.0);
                CHECK(rw.values(i, j) == expect_rw);

                const double expect_sel = rel ? 1.0 + beta : 1.0;
                CHECK(sel.values(i, j) == expect_sel);

                // symmetry
                CHECK(add.values(i, j) == add.values(j, i));
                CHECK(rw.values(i, j) == rw.values(j, i));
                CHECK(sel.values(i, j) == sel.values(j, i));
            }
    }
}
