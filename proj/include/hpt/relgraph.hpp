#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hpt/attn_mod.hpp"
#include "hpt/encoder.hpp"

namespace hpt {

// Structured knowledge for one description. The typed pair sets drive the
// additive regime; the triples drive the multiplicative ones. Verbs never
// produce matrix entries, only subject/object endpoints do.
struct RelationGraph {
    struct Triple {
        std::string subject, verb, object;
    };

    std::vector<std::string> entities;
    std::vector<std::string> attributes;
    std::vector<std::pair<std::string, std::string>> e2e_pairs;
    std::vector<std::pair<std::string, std::string>> e2a_pairs;
    std::vector<Triple> triples;

    bool empty() const {
        return e2e_pairs.empty() && e2a_pairs.empty() && triples.empty();
    }
};

// Word -> token span resolution inside the low block. Misses are reported,
// never fatal; repeated words resolve to their first occurrence.
struct TokenAlignment {
    struct Span {
        std::string word;
        int begin = 0;
        int end = 0;  // one past the last token
    };
    std::vector<Span> spans;
    std::vector<std::string> unmatched_words;

    const Span* find(const std::string& word) const;
};

TokenAlignment align_words(const TokenSequence& seq, const RelationGraph& graph);

// M with lam_e2e on entity-entity pairs, lam_e2a on entity-attribute pairs
// (e2e wins where both claim a cell), zero elsewhere; zero outside the low
// block; symmetric.
AttentionModMatrix build_additive_matrix(const RelationGraph& graph,
                                         const TokenAlignment& alignment, double lam_e2e,
                                         double lam_e2a, const SegmentLayout& layout);

// Low-block entries: 1+beta on pairs related through a triple's
// subject/object endpoints, 1/(1+beta) otherwise; neutral 1 outside.
AttentionModMatrix build_reweight_matrix(const RelationGraph& graph,
                                         const TokenAlignment& alignment, double beta,
                                         const SegmentLayout& layout);

// Related pairs scaled by 1+beta, everything else untouched at 1.
AttentionModMatrix build_selective_matrix(const RelationGraph& graph,
                                          const TokenAlignment& alignment, double beta,
                                          const SegmentLayout& layout);

}  // namespace hpt
