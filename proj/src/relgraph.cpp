#include "hpt/relgraph.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace hpt {

namespace {

std::string lower(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char ch : s)
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    return out;
}

void collect(std::vector<std::string>& words, const std::string& w) {
    const std::string lw = lower(w);
    if (lw.empty()) return;
    if (std::find(words.begin(), words.end(), lw) == words.end()) words.push_back(lw);
}

}  // namespace

const TokenAlignment::Span* TokenAlignment::find(const std::string& word) const {
    const std::string lw = lower(word);
    for (const Span& s : spans)
        if (s.word == lw) return &s;
    return nullptr;
}

TokenAlignment align_words(const TokenSequence& seq, const RelationGraph& graph) {
    std::vector<std::string> words;
    for (const std::string& w : graph.entities) collect(words, w);
    for (const std::string& w : graph.attributes) collect(words, w);
    for (const auto& p : graph.e2e_pairs) {
        collect(words, p.first);
        collect(words, p.second);
    }
    for (const auto& p : graph.e2a_pairs) {
        collect(words, p.first);
        collect(words, p.second);
    }
    for (const RelationGraph::Triple& t : graph.triples) {
        collect(words, t.subject);
        collect(words, t.object);
    }

    TokenAlignment out;
    for (const std::string& w : words) {
        const WordSpan* hit = nullptr;
        for (const WordSpan& s : seq.word_spans) {
            if (s.word == w) {
                hit = &s;
                break;
            }
        }
        if (hit) {
            out.spans.push_back({w, hit->begin, hit->end});
        } else {
            out.unmatched_words.push_back(w);
        }
    }
    return out;
}

namespace {

// Writes v at every cross cell of the two spans, in both orientations.
void stamp(AttentionModMatrix& m, const TokenAlignment::Span& a, const TokenAlignment::Span& b,
           double v, PairKind kind) {
    for (int i = a.begin; i < a.end; ++i)
        for (int j = b.begin; j < b.end; ++j) {
            m.values(i, j) = v;
            m.values(j, i) = v;
            m.set_kind(i, j, kind);
            m.set_kind(j, i, kind);
        }
}

template <typename Pairs>
void stamp_pairs(AttentionModMatrix& m, const TokenAlignment& alignment, const Pairs& pairs,
                 double v, PairKind kind) {
    for (const auto& p : pairs) {
        const TokenAlignment::Span* a = alignment.find(p.first);
        const TokenAlignment::Span* b = alignment.find(p.second);
        if (!a || !b) continue;  // unmatched words never create entries
        stamp(m, *a, *b, v, kind);
    }
}

void stamp_triples(AttentionModMatrix& m, const RelationGraph& graph,
                   const TokenAlignment& alignment, double v) {
    for (const RelationGraph::Triple& t : graph.triples) {
        const TokenAlignment::Span* a = alignment.find(t.subject);
        const TokenAlignment::Span* b = alignment.find(t.object);
        if (!a || !b) continue;
        stamp(m, *a, *b, v, PairKind::related);
    }
}

}  // namespace

AttentionModMatrix build_additive_matrix(const RelationGraph& graph,
                                         const TokenAlignment& alignment, double lam_e2e,
                                         double lam_e2a, const SegmentLayout& layout) {
    AttentionModMatrix m(AttnModMode::additive, layout.seq_len(), 0.0);
    stamp_pairs(m, alignment, graph.e2a_pairs, lam_e2a, PairKind::e2a);
    stamp_pairs(m, alignment, graph.e2e_pairs, lam_e2e, PairKind::e2e);  // e2e wins collisions
    return m;
}

AttentionModMatrix build_reweight_matrix(const RelationGraph& graph,
                                         const TokenAlignment& alignment, double beta,
                                         const SegmentLayout& layout) {
    if (beta < 0.0) throw std::invalid_argument("build_reweight_matrix: beta must be >= 0");
    AttentionModMatrix m(AttnModMode::multiplicative, layout.seq_len(), 1.0);
    const int lo = layout.low_off;
    const int hi = layout.low_off + layout.low_len;
    for (int i = lo; i < hi; ++i)
        for (int j = lo; j < hi; ++j) m.values(i, j) = 1.0 / (1.0 + beta);
    stamp_triples(m, graph, alignment, 1.0 + beta);
    return m;
}

AttentionModMatrix build_selective_matrix(const RelationGraph& graph,
                                          const TokenAlignment& alignment, double beta,
                                          const SegmentLayout& layout) {
    if (beta < 0.0) throw std::invalid_argument("build_selective_matrix: beta must be >= 0");
    AttentionModMatrix m(AttnModMode::multiplicative_selective, layout.seq_len(), 1.0);
    stamp_triples(m, graph, alignment, 1.0 + beta);
    return m;
}

}  // namespace hpt
