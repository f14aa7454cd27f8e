#include "hpt/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace hpt {
namespace {

constexpr size_t kMaxDescriptionChars = 4000;

std::string replace_all(std::string text, const std::string& needle, const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
    return text;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string lower(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char ch : s)
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    return out;
}

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

template <typename Fn>
void parallel_over(int n, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&fn, &errs, w, n, workers] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errs[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

void check_description(const std::string& d, const std::string& class_name) {
    if (d.empty())
        throw std::runtime_error("empty description response for class " + class_name);
    if (d.size() > kMaxDescriptionChars)
        throw std::runtime_error("description for class " + class_name + " exceeds " +
                                 std::to_string(kMaxDescriptionChars) + " chars");
}

}  // namespace

// ---- templates and instructions --------------------------------------------

void DatasetTemplate::validate() const {
    if (dataset_name.empty())
        throw std::invalid_argument("DatasetTemplate: dataset_name is empty");
    if (class_token_pattern.find("[X]") == std::string::npos)
        throw std::invalid_argument("DatasetTemplate: class_token_pattern lacks [X]");
    if (question_templates.empty())
        throw std::invalid_argument("DatasetTemplate: no question templates");
    for (const std::string& q : question_templates)
        if (q.find("[CLASS]") == std::string::npos)
            throw std::invalid_argument("DatasetTemplate: question template lacks [CLASS]: " + q);
}

std::string render_class_token(const std::string& pattern, const std::string& class_name) {
    if (pattern.find("[X]") == std::string::npos)
        throw std::invalid_argument("render_class_token: pattern lacks [X]: " + pattern);
    return replace_all(pattern, "[X]", class_name);
}

std::string render_instruction(const std::string& question_template,
                               const std::string& class_token, const std::string& type_token) {
    if (question_template.find("[CLASS]") == std::string::npos)
        throw std::invalid_argument("render_instruction: template lacks [CLASS]: " +
                                    question_template);
    return replace_all(replace_all(question_template, "[CLASS]", class_token), "[TYPE]",
                       type_token);
}

std::string render_comparative_instruction(const std::string& question_template,
                                           const std::string& class_token,
                                           const std::string& type_token,
                                           const std::vector<std::string>& closest_tokens) {
    return render_instruction(question_template, class_token, type_token) + " compared with " +
           join(closest_tokens, ", ") + ".";
}

std::string summarize_instruction(const std::string& class_token, const std::string& d1,
                                  const std::string& d2) {
    return "Please summarize the following two descriptions as an overall description of " +
           class_token + ". Description one: " + d1 + " Description two: " + d2;
}

std::string extraction_instruction(const std::string& description) {
    return "List every relationship in the description below as JSON with fields entities, "
           "attributes, e2e, e2a, triples; each triple has subject, verb, object. Description: " +
           description;
}

std::string instruction_hash(const std::string& instruction) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(instruction)));
    return buf;
}

// ---- clients ----------------------------------------------------------------

std::string FixtureClient::complete(const std::string& instruction) {
    const std::string h = instruction_hash(instruction);
    auto it = responses_.find(h);
    if (it == responses_.end())
        throw std::runtime_error("fixture miss for hash " + h + ": " + instruction);
    return it->second;
}

FixtureClient FixtureClient::load(const std::string& path) {
    return FixtureClient(load_fixture_map(path));
}

std::string RecordingClient::complete(const std::string& instruction) {
    const std::string response = inner_.complete(instruction);
    std::lock_guard<std::mutex> lock(mu_);
    recorded_[instruction_hash(instruction)] = response;
    return response;
}

void RecordingClient::save(const std::string& path) const { save_fixture_map(recorded_, path); }

namespace {

// position of name as a whole word, or npos
size_t find_word(const std::string& text, const std::string& name) {
    size_t pos = 0;
    while ((pos = text.find(name, pos)) != std::string::npos) {
        const bool left_ok =
            pos == 0 || !std::isalnum(static_cast<unsigned char>(text[pos - 1]));
        const size_t end = pos + name.size();
        const bool right_ok =
            end == text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
        if (left_ok && right_ok) return pos;
        ++pos;
    }
    return std::string::npos;
}

std::string fill_pattern(std::string pattern, const std::vector<std::string>& e,
                         const std::vector<std::string>& a) {
    auto at = [](const std::vector<std::string>& v, size_t i) -> const std::string& {
        static const std::string blank = "thing";
        return v.empty() ? blank : v[i % v.size()];
    };
    pattern = replace_all(pattern, "{e0}", at(e, 0));
    pattern = replace_all(pattern, "{e1}", at(e, 1));
    pattern = replace_all(pattern, "{a0}", at(a, 0));
    pattern = replace_all(pattern, "{a1}", at(a, 1));
    return pattern;
}

const std::vector<std::string>& coarse_patterns() {
    static const std::vector<std::string> p = {
        "The {e0} shows a {a0} coat and a {a1} {e1}.",
        "A {a0} {e0} rests near its {a1} {e1}.",
        "Its {e1} looks {a1} while the {e0} stays {a0}.",
        "Watch the {e0} and the {e1}, both {a0} and {a1}.",
        "This one has a {a0} {e0} plus a {a1} {e1}.",
    };
    return p;
}

const std::vector<std::string>& fine_patterns() {
    static const std::vector<std::string> p = {
        "Compared to those, the {e0} keeps a {a0} tone and a {a1} {e1}.",
        "Side by side, its {e0} reads {a0} and its {e1} reads {a1}.",
        "Against the rest, a {a0} {e0} and a {a1} {e1} mark it.",
        "Next to them, the {e1} stays {a1} and the {e0} stays {a0}.",
        "Among peers, only this {e0} pairs {a0} with a {a1} {e1}.",
    };
    return p;
}

}  // namespace

std::string SynthesizerClient::complete(const std::string& instruction) {
    // word lists for relation building, shared across classes
    auto scan = [this](const std::string& text, std::vector<std::string>* entities,
                       std::vector<std::string>* attributes) {
        auto kind_of = [this](const std::string& w) {
            for (const auto& [name, prof] : profiles_) {
                (void)name;
                for (const std::string& e : prof.entities)
                    if (lower(e) == w) return 1;
                for (const std::string& a : prof.attributes)
                    if (lower(a) == w) return 2;
            }
            return 0;
        };
        auto seen = [](const std::vector<std::string>& v, const std::string& w) {
            return std::find(v.begin(), v.end(), w) != v.end();
        };
        for (const std::string& w : words_of(text)) {
            const int k = kind_of(w);
            if (k == 1 && !seen(*entities, w)) entities->push_back(w);
            if (k == 2 && !seen(*attributes, w)) attributes->push_back(w);
        }
    };

    if (instruction.rfind("Please summarize", 0) == 0) {
        const size_t p1 = instruction.find("Description one: ");
        const size_t p2 = instruction.find(" Description two: ");
        if (p1 == std::string::npos || p2 == std::string::npos)
            throw std::runtime_error("synthesizer: malformed summarize instruction");
        std::vector<std::string> e, a;
        scan(instruction.substr(p1), &e, &a);
        if (e.empty() && a.empty()) return "Overall, nothing distinctive stands out.";
        if (e.empty()) return "Overall, it appears " + join(a, " and ") + ".";
        std::string out = "Overall, the " + join(e, " and the ");
        if (!a.empty()) out += " appear " + join(a, " and ");
        out += ".";
        return out;
    }

    if (instruction.rfind("List every relationship", 0) == 0) {
        const std::string marker = "Description: ";
        const size_t p = instruction.find(marker);
        if (p == std::string::npos)
            throw std::runtime_error("synthesizer: malformed extraction instruction");
        std::vector<std::string> e, a;
        scan(instruction.substr(p + marker.size()), &e, &a);
        auto e2e = nlohmann::ordered_json::array();
        auto e2a = nlohmann::ordered_json::array();
        auto triples = nlohmann::ordered_json::array();
        for (size_t k = 0; k + 1 < e.size(); ++k) {
            e2e.push_back({e[k], e[k + 1]});
            triples.push_back({{"subject", e[k]}, {"verb", "joins"}, {"object", e[k + 1]}});
        }
        for (size_t k = 0; k < a.size() && !e.empty(); ++k) {
            const std::string& subj = e[k % e.size()];
            e2a.push_back({subj, a[k]});
            triples.push_back({{"subject", subj}, {"verb", "shows"}, {"object", a[k]}});
        }
        nlohmann::ordered_json out;
        out["entities"] = e;
        out["attributes"] = a;
        out["e2e"] = std::move(e2e);
        out["e2a"] = std::move(e2a);
        out["triples"] = std::move(triples);
        return out.dump();
    }

    // coarse or fine question: earliest whole-word class-name match wins
    const std::string instr_low = lower(instruction);
    const Profile* prof = nullptr;
    size_t best = std::string::npos;
    for (const auto& [name, p] : profiles_) {
        const size_t pos = find_word(instr_low, lower(name));
        if (pos < best) {
            best = pos;
            prof = &p;
        }
    }
    if (!prof)
        throw std::runtime_error("synthesizer: no known class in instruction: " + instruction);

    Rng rng(fnv1a64(instruction));
    const bool fine = instruction.find(" compared with ") != std::string::npos;
    const auto& patterns = fine ? fine_patterns() : coarse_patterns();
    return fill_pattern(patterns[rng.index(static_cast<int>(patterns.size()))], prof->entities,
                        prof->attributes);
}

// ---- counting and embeddings -------------------------------------------------

int compute_C(int n_classes) {
    if (n_classes <= 0)
        throw std::invalid_argument("compute_C: class count must be positive");
    int digits = 0;
    for (int n = n_classes; n > 0; n /= 10) ++digits;
    return digits;
}

std::vector<double> class_embedding(const TextEncoder& enc, const Tokenizer& tok,
                                    const std::vector<std::string>& descriptions) {
    if (descriptions.empty())
        throw std::invalid_argument("class_embedding: no descriptions");
    std::vector<double> mean;
    for (const std::string& d : descriptions) {
        const TokenSequence seq = build_plain_sequence(tok, enc.cfg, d);
        const std::vector<double> z = normalized(enc.encode_frozen(seq).z);
        if (mean.empty()) mean.assign(z.size(), 0.0);
        for (size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
    }
    for (double& v : mean) v /= static_cast<double>(descriptions.size());
    return mean;
}

std::vector<std::string> select_closest(const std::vector<std::string>& names,
                                        const std::vector<std::vector<double>>& embeddings,
                                        int query_index, int C) {
    const int n = static_cast<int>(names.size());
    if (embeddings.size() != names.size())
        throw std::invalid_argument("select_closest: names/embeddings size mismatch");
    if (query_index < 0 || query_index >= n)
        throw std::invalid_argument("select_closest: query index out of range");
    if (C < 1 || C >= n)
        throw std::invalid_argument("select_closest: need 1 <= C < class count, got C=" +
                                    std::to_string(C) + " for " + std::to_string(n) + " classes");

    std::vector<int> order;
    for (int j = 0; j < n; ++j)
        if (j != query_index) order.push_back(j);
    std::vector<double> sim(static_cast<size_t>(n), 0.0);
    for (int j : order) sim[static_cast<size_t>(j)] =
        cosine_similarity(embeddings[static_cast<size_t>(query_index)],
                          embeddings[static_cast<size_t>(j)]);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = sim[static_cast<size_t>(a)], sb = sim[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return names[static_cast<size_t>(a)] < names[static_cast<size_t>(b)];
    });
    std::vector<std::string> out;
    for (int k = 0; k < C; ++k) out.push_back(names[static_cast<size_t>(order[static_cast<size_t>(k)])]);
    return out;
}

// ---- generation pipeline -------------------------------------------------------

std::vector<std::string> generate_coarse(const DatasetTemplate& tmpl,
                                         const std::string& class_name, LLMClient& client) {
    tmpl.validate();
    const std::string token = render_class_token(tmpl.class_token_pattern, class_name);
    std::vector<std::string> out;
    for (const std::string& q : tmpl.question_templates) {
        const std::string d = client.complete(render_instruction(q, token, tmpl.type_token));
        check_description(d, class_name);
        out.push_back(d);
    }
    return out;
}

std::vector<std::string> generate_fine(const DatasetTemplate& tmpl, const std::string& class_name,
                                       const std::vector<std::string>& closest_names,
                                       LLMClient& client) {
    tmpl.validate();
    if (closest_names.empty())
        throw std::invalid_argument("generate_fine: empty closest-class list");
    const std::string token = render_class_token(tmpl.class_token_pattern, class_name);
    std::vector<std::string> closest_tokens;
    for (const std::string& name : closest_names)
        closest_tokens.push_back(render_class_token(tmpl.class_token_pattern, name));
    std::vector<std::string> out;
    for (const std::string& q : tmpl.question_templates) {
        const std::string d = client.complete(
            render_comparative_instruction(q, token, tmpl.type_token, closest_tokens));
        check_description(d, class_name);
        out.push_back(d);
    }
    return out;
}

std::string summarize_overall(const std::string& class_token, const std::string& d1,
                              const std::string& d2, LLMClient& client) {
    if (d1.empty() || d2.empty())
        throw std::invalid_argument("summarize_overall: empty input description");
    const std::string d = client.complete(summarize_instruction(class_token, d1, d2));
    check_description(d, class_token);
    return d;
}

RelationGraph extract_relations(const std::string& description, LLMClient& client) {
    if (description.empty())
        throw std::invalid_argument("extract_relations: empty description");
    const std::string raw = client.complete(extraction_instruction(description));

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(raw);
        if (!doc.is_object()) throw std::runtime_error("top level is not an object");

        RelationGraph g;
        auto strings = [&](const char* key) {
            std::vector<std::string> v;
            if (doc.contains(key))
                for (const auto& item : doc.at(key)) v.push_back(item.get<std::string>());
            return v;
        };
        g.entities = strings("entities");
        g.attributes = strings("attributes");
        auto pairs = [&](const char* key) {
            std::vector<std::pair<std::string, std::string>> v;
            if (doc.contains(key))
                for (const auto& item : doc.at(key)) {
                    if (!item.is_array() || item.size() != 2)
                        throw std::runtime_error(std::string(key) + " entry is not a pair");
                    v.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
                }
            return v;
        };
        g.e2e_pairs = pairs("e2e");
        g.e2a_pairs = pairs("e2a");
        if (doc.contains("triples"))
            for (const auto& item : doc.at("triples")) {
                RelationGraph::Triple t;
                t.subject = item.at("subject").get<std::string>();
                t.verb = item.at("verb").get<std::string>();
                t.object = item.at("object").get<std::string>();
                g.triples.push_back(std::move(t));
            }
        return g;
    } catch (const std::exception& ex) {
        throw std::runtime_error(std::string("extract_relations: unparseable response (") +
                                 ex.what() + "): " + raw);
    }
}

DescriptionCorpus generate_corpus(const DatasetTemplate& tmpl,
                                  const std::vector<std::string>& class_names, LLMClient& client,
                                  const TextEncoder& frozen_text, const Tokenizer& tok,
                                  int workers) {
    tmpl.validate();
    const int n = static_cast<int>(class_names.size());
    if (n < 2) throw std::invalid_argument("generate_corpus: need at least 2 classes");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (class_names[static_cast<size_t>(i)] == class_names[static_cast<size_t>(j)])
                throw std::invalid_argument("generate_corpus: duplicate class name " +
                                            class_names[static_cast<size_t>(i)]);

    DescriptionCorpus corpus;
    corpus.dataset = tmpl.dataset_name;
    corpus.n_h = static_cast<int>(tmpl.question_templates.size());
    corpus.classes.resize(static_cast<size_t>(n));

    parallel_over(n, workers, [&](int i) {
        ClassKnowledge& ck = corpus.classes[static_cast<size_t>(i)];
        ck.name = class_names[static_cast<size_t>(i)];
        ck.class_token = render_class_token(tmpl.class_token_pattern, ck.name);
        ck.type_token = tmpl.type_token;
        ck.coarse = generate_coarse(tmpl, ck.name, client);
    });

    std::vector<std::vector<double>> embeddings;
    for (const ClassKnowledge& ck : corpus.classes)
        embeddings.push_back(class_embedding(frozen_text, tok, ck.coarse));
    const int C = compute_C(n);
    for (int i = 0; i < n; ++i)
        corpus.classes[static_cast<size_t>(i)].closest =
            select_closest(class_names, embeddings, i, C);

    parallel_over(n, workers, [&](int i) {
        ClassKnowledge& ck = corpus.classes[static_cast<size_t>(i)];
        ck.fine = generate_fine(tmpl, ck.name, ck.closest, client);
        for (int k = 0; k < corpus.n_h; ++k) {
            ck.overall.push_back(summarize_overall(
                ck.class_token, ck.coarse[static_cast<size_t>(k)],
                ck.fine[static_cast<size_t>(k)], client));
            ck.relations.push_back(extract_relations(ck.overall.back(), client));
        }
    });
    return corpus;
}

const ClassKnowledge* DescriptionCorpus::find_class(const std::string& name) const {
    for (const ClassKnowledge& ck : classes)
        if (ck.name == name) return &ck;
    return nullptr;
}

// ---- validation ----------------------------------------------------------------

namespace {

std::vector<std::string> graph_words(const RelationGraph& g) {
    std::vector<std::string> out;
    auto add = [&out](const std::string& w) {
        for (const std::string& have : out)
            if (have == w) return;
        out.push_back(w);
    };
    for (const auto& w : g.entities) add(w);
    for (const auto& w : g.attributes) add(w);
    for (const auto& p : g.e2e_pairs) {
        add(p.first);
        add(p.second);
    }
    for (const auto& p : g.e2a_pairs) {
        add(p.first);
        add(p.second);
    }
    for (const auto& t : g.triples) {
        add(t.subject);
        add(t.object);
    }
    return out;
}

std::string format_ratio(double r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", r);
    return buf;
}

}  // namespace

ValidationReport validate_corpus(const DescriptionCorpus& corpus, const Tokenizer& tok,
                                 const EncoderConfig& cfg) {
    ValidationReport report;
    auto err = [&](const std::string& msg) { report.errors.push_back(msg); };

    if (corpus.dataset.empty()) err("corpus: dataset name is empty");
    if (corpus.n_h <= 0) err("corpus: n_h must be positive");
    if (corpus.classes.empty()) err("corpus: no classes");

    const size_t n_h = corpus.n_h > 0 ? static_cast<size_t>(corpus.n_h) : 0;
    for (size_t i = 0; i < corpus.classes.size(); ++i) {
        const ClassKnowledge& ck = corpus.classes[i];
        const std::string who = "class " + (ck.name.empty() ? "#" + std::to_string(i) : ck.name);
        if (ck.name.empty()) err(who + ": name is empty");
        for (size_t j = i + 1; j < corpus.classes.size(); ++j)
            if (!ck.name.empty() && corpus.classes[j].name == ck.name)
                err(who + ": duplicate class name");
        if (ck.class_token.empty()) err(who + ": class_token is empty");

        auto check_list = [&](const char* label, const std::vector<std::string>& list) {
            if (list.size() != n_h)
                err(who + ": " + label + " count " + std::to_string(list.size()) + ", want " +
                    std::to_string(n_h));
            for (size_t k = 0; k < list.size(); ++k)
                if (list[k].empty())
                    err(who + ": " + label + " " + std::to_string(k) + " is empty");
        };
        check_list("coarse", ck.coarse);
        check_list("fine", ck.fine);
        check_list("overall", ck.overall);
        if (ck.relations.size() != n_h)
            err(who + ": relations count " + std::to_string(ck.relations.size()) + ", want " +
                std::to_string(n_h));

        if (corpus.classes.size() >= 2) {
            const size_t want_c =
                static_cast<size_t>(compute_C(static_cast<int>(corpus.classes.size())));
            if (ck.closest.size() != want_c)
                err(who + ": closest count " + std::to_string(ck.closest.size()) + ", want " +
                    std::to_string(want_c));
        }
        for (const std::string& other : ck.closest) {
            if (other == ck.name) err(who + ": closest list contains the class itself");
            bool known = false;
            for (const ClassKnowledge& c2 : corpus.classes) known = known || c2.name == other;
            if (!known) err(who + ": closest lists unknown class " + other);
        }

        const size_t n_pairs = std::min(ck.overall.size(), ck.relations.size());
        for (size_t k = 0; k < n_pairs; ++k) {
            const std::vector<std::string> wanted = graph_words(ck.relations[k]);
            if (wanted.empty() || ck.overall[k].empty()) continue;
            try {
                const TokenSequence seq = build_plain_sequence(tok, cfg, ck.overall[k]);
                const TokenAlignment al = align_words(seq, ck.relations[k]);
                const double miss = static_cast<double>(al.unmatched_words.size()) /
                                    static_cast<double>(wanted.size());
                if (miss > 0.0) {
                    report.warnings.push_back(who + ": overall " + std::to_string(k) +
                                              ": alignment miss ratio " + format_ratio(miss));
                    report.worst_miss_ratio = std::max(report.worst_miss_ratio, miss);
                }
            } catch (const std::exception& ex) {
                err(who + ": overall " + std::to_string(k) + ": " + ex.what());
            }
        }
    }
    return report;
}

// ---- serialization ----------------------------------------------------------------

namespace {

nlohmann::ordered_json graph_to_json(const RelationGraph& g) {
    auto e2e = nlohmann::ordered_json::array();
    for (const auto& p : g.e2e_pairs) e2e.push_back({p.first, p.second});
    auto e2a = nlohmann::ordered_json::array();
    for (const auto& p : g.e2a_pairs) e2a.push_back({p.first, p.second});
    auto triples = nlohmann::ordered_json::array();
    for (const auto& t : g.triples)
        triples.push_back({{"subject", t.subject}, {"verb", t.verb}, {"object", t.object}});
    nlohmann::ordered_json out;
    out["entities"] = g.entities;
    out["attributes"] = g.attributes;
    out["e2e"] = std::move(e2e);
    out["e2a"] = std::move(e2a);
    out["triples"] = std::move(triples);
    return out;
}

RelationGraph graph_from_json(const nlohmann::json& doc) {
    RelationGraph g;
    for (const auto& w : doc.at("entities")) g.entities.push_back(w.get<std::string>());
    for (const auto& w : doc.at("attributes")) g.attributes.push_back(w.get<std::string>());
    for (const auto& p : doc.at("e2e"))
        g.e2e_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    for (const auto& p : doc.at("e2a"))
        g.e2a_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    for (const auto& t : doc.at("triples")) {
        RelationGraph::Triple triple;
        triple.subject = t.at("subject").get<std::string>();
        triple.verb = t.at("verb").get<std::string>();
        triple.object = t.at("object").get<std::string>();
        g.triples.push_back(std::move(triple));
    }
    return g;
}

}  // namespace

std::string corpus_to_json(const DescriptionCorpus& corpus) {
    nlohmann::ordered_json doc;
    doc["dataset"] = corpus.dataset;
    doc["n_h"] = corpus.n_h;
    auto& classes = doc["classes"] = nlohmann::ordered_json::array();
    for (const ClassKnowledge& ck : corpus.classes) {
        nlohmann::ordered_json c;
        c["name"] = ck.name;
        c["class_token"] = ck.class_token;
        c["type_token"] = ck.type_token;
        c["coarse"] = ck.coarse;
        c["fine"] = ck.fine;
        c["overall"] = ck.overall;
        auto& rel = c["relations"] = nlohmann::ordered_json::array();
        for (const RelationGraph& g : ck.relations) rel.push_back(graph_to_json(g));
        c["closest"] = ck.closest;
        classes.push_back(std::move(c));
    }
    return doc.dump(2) + "\n";
}

DescriptionCorpus corpus_from_json(const std::string& text) {
    try {
        const nlohmann::json doc = nlohmann::json::parse(text);
        DescriptionCorpus corpus;
        corpus.dataset = doc.at("dataset").get<std::string>();
        corpus.n_h = doc.at("n_h").get<int>();
        for (const auto& c : doc.at("classes")) {
            ClassKnowledge ck;
            ck.name = c.at("name").get<std::string>();
            ck.class_token = c.at("class_token").get<std::string>();
            ck.type_token = c.at("type_token").get<std::string>();
            for (const auto& d : c.at("coarse")) ck.coarse.push_back(d.get<std::string>());
            for (const auto& d : c.at("fine")) ck.fine.push_back(d.get<std::string>());
            for (const auto& d : c.at("overall")) ck.overall.push_back(d.get<std::string>());
            for (const auto& g : c.at("relations")) ck.relations.push_back(graph_from_json(g));
            for (const auto& d : c.at("closest")) ck.closest.push_back(d.get<std::string>());
            corpus.classes.push_back(std::move(ck));
        }
        return corpus;
    } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error(std::string("corpus parse failed: ") + ex.what());
    }
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

void save_corpus(const DescriptionCorpus& corpus, const std::string& path) {
    write_file(path, corpus_to_json(corpus));
}

DescriptionCorpus load_corpus(const std::string& path) {
    return corpus_from_json(read_file(path));
}

std::map<std::string, std::string> load_fixture_map(const std::string& path) {
    try {
        const nlohmann::json doc = nlohmann::json::parse(read_file(path));
        if (!doc.is_object()) throw std::runtime_error("fixture file is not a JSON object");
        std::map<std::string, std::string> out;
        for (const auto& [key, value] : doc.items()) out[key] = value.get<std::string>();
        return out;
    } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error("fixture parse failed for " + path + ": " + ex.what());
    }
}

void save_fixture_map(const std::map<std::string, std::string>& fixtures,
                      const std::string& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& [key, value] : fixtures) doc[key] = value;
    write_file(path, doc.dump(2) + "\n");
}

// ---- live backend ----------------------------------------------------------------

namespace {

std::string live_post(const std::string& host, int port, const std::string& path,
                      const std::string& api_key, const std::string& body, int timeout_s) {
    httplib::Client cli(host, port);
    cli.set_connection_timeout(timeout_s, 0);
    cli.set_read_timeout(timeout_s, 0);
    const httplib::Headers headers = {{"Authorization", "Bearer " + api_key}};
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) throw std::runtime_error("no response from " + host);
    if (res->status != 200)
        throw std::runtime_error("status " + std::to_string(res->status) + " from " + host);
    return res->body;
}

}  // namespace

LiveClient::LiveClient() {
    const char* host = std::getenv("HPT_LLM_HOST");
    const char* port = std::getenv("HPT_LLM_PORT");
    const char* path = std::getenv("HPT_LLM_PATH");
    const char* model = std::getenv("HPT_LLM_MODEL");
    const char* key = std::getenv("HPT_LLM_API_KEY");
    if (!host || !key)
        throw std::runtime_error("live backend needs HPT_LLM_HOST and HPT_LLM_API_KEY");
    host_ = host;
    port_ = port ? std::atoi(port) : 80;
    path_ = path ? path : "/v1/complete";
    model_ = model ? model : "default";
    api_key_ = key;
}

std::string LiveClient::complete(const std::string& instruction) {
    std::string last_error;
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        try {
            const std::string body = live_post(host_, port_, path_, api_key_,
                                               nlohmann::json{{"model", model_},
                                                              {"input", instruction}}
                                                   .dump(),
                                               timeout_seconds);
            const nlohmann::json doc = nlohmann::json::parse(body);
            const std::string out = doc.at("output").get<std::string>();
            if (out.empty()) throw std::runtime_error("empty completion");
            return out;
        } catch (const std::exception& ex) {
            last_error = ex.what();
        }
    }
    throw std::runtime_error("live backend failed after " + std::to_string(max_retries) +
                             " attempts: " + last_error);
}

}  // namespace hpt
