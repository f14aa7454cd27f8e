#pragma once

#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "hpt/encoder.hpp"
#include "hpt/relgraph.hpp"

namespace hpt {

// One dataset's prompt-building recipe: how class names become class tokens,
// what the category type is called, and the question set used to elicit
// descriptions.
struct DatasetTemplate {
    std::string dataset_name;
    std::string class_token_pattern;  // contains [X]
    std::string type_token;
    std::vector<std::string> question_templates;  // each contains [CLASS]

    void validate() const;  // throws std::invalid_argument on a bad shape
};

// "[X]" -> class name. Throws if the pattern lacks the placeholder.
std::string render_class_token(const std::string& pattern, const std::string& class_name);

// "[CLASS]" -> class token, "[TYPE]" -> type token. Throws if [CLASS] is absent.
std::string render_instruction(const std::string& question_template,
                               const std::string& class_token,
                               const std::string& type_token);

// Comparison variant: the rendered question plus a suffix naming the closest
// class tokens.
std::string render_comparative_instruction(const std::string& question_template,
                                           const std::string& class_token,
                                           const std::string& type_token,
                                           const std::vector<std::string>& closest_tokens);

std::string summarize_instruction(const std::string& class_token, const std::string& d1,
                                  const std::string& d2);
std::string extraction_instruction(const std::string& description);

// 16 hex digits of fnv1a64; keys the fixture store.
std::string instruction_hash(const std::string& instruction);

class LLMClient {
  public:
    virtual ~LLMClient() = default;
    virtual std::string complete(const std::string& instruction) = 0;
};

// Replays canned responses keyed by instruction hash. Missing entries throw
// with both the hash and the instruction so the fixture can be extended.
class FixtureClient : public LLMClient {
  public:
    explicit FixtureClient(std::map<std::string, std::string> responses)
        : responses_(std::move(responses)) {}
    static FixtureClient load(const std::string& path);

    std::string complete(const std::string& instruction) override;

  private:
    std::map<std::string, std::string> responses_;
};

// Wraps another client and captures every exchange, hash -> response.
class RecordingClient : public LLMClient {
  public:
    explicit RecordingClient(LLMClient& inner) : inner_(inner) {}

    std::string complete(const std::string& instruction) override;
    const std::map<std::string, std::string>& recorded() const { return recorded_; }
    void save(const std::string& path) const;

  private:
    LLMClient& inner_;
    std::map<std::string, std::string> recorded_;
    std::mutex mu_;
};

// Stand-in backend that parses the instruction and composes a deterministic
// response from per-class word profiles. Used to author fixtures.
class SynthesizerClient : public LLMClient {
  public:
    struct Profile {
        std::vector<std::string> entities;
        std::vector<std::string> attributes;
    };

    explicit SynthesizerClient(std::map<std::string, Profile> profiles)
        : profiles_(std::move(profiles)) {}

    std::string complete(const std::string& instruction) override;

  private:
    std::map<std::string, Profile> profiles_;
};

// Minimal HTTP backend. Credentials come from HPT_LLM_API_KEY, endpoint from
// HPT_LLM_HOST / HPT_LLM_PORT / HPT_LLM_PATH / HPT_LLM_MODEL; the environment
// is read here and nowhere else, so fixture runs never touch it.
class LiveClient : public LLMClient {
  public:
    LiveClient();

    std::string complete(const std::string& instruction) override;

    int max_retries = 3;
    int timeout_seconds = 30;

  private:
    std::string host_, path_, model_, api_key_;
    int port_ = 443;
};

struct ClassKnowledge {
    std::string name;
    std::string class_token;
    std::string type_token;
    std::vector<std::string> coarse;
    std::vector<std::string> fine;
    std::vector<std::string> overall;
    std::vector<RelationGraph> relations;  // relations[i] describes overall[i]
    std::vector<std::string> closest;
};

struct DescriptionCorpus {
    std::string dataset;
    int n_h = 0;
    std::vector<ClassKnowledge> classes;

    const ClassKnowledge* find_class(const std::string& name) const;
};

// Digit count of the class total; sizes the closest-category list.
int compute_C(int n_classes);

// Mean of the normalized frozen embeddings of the given descriptions.
std::vector<double> class_embedding(const TextEncoder& enc, const Tokenizer& tok,
                                    const std::vector<std::string>& descriptions);

// The C classes nearest to query_index by cosine similarity, query excluded,
// ties broken by name.
std::vector<std::string> select_closest(const std::vector<std::string>& names,
                                        const std::vector<std::vector<double>>& embeddings,
                                        int query_index, int C);

std::vector<std::string> generate_coarse(const DatasetTemplate& tmpl,
                                         const std::string& class_name, LLMClient& client);
std::vector<std::string> generate_fine(const DatasetTemplate& tmpl, const std::string& class_name,
                                       const std::vector<std::string>& closest_names,
                                       LLMClient& client);
std::string summarize_overall(const std::string& class_token, const std::string& d1,
                              const std::string& d2, LLMClient& client);
RelationGraph extract_relations(const std::string& description, LLMClient& client);

// Full pipeline: coarse -> closest -> fine -> overall -> relations for every
// class. workers bounds the threads used for the per-class generation phases.
DescriptionCorpus generate_corpus(const DatasetTemplate& tmpl,
                                  const std::vector<std::string>& class_names, LLMClient& client,
                                  const TextEncoder& frozen_text, const Tokenizer& tok,
                                  int workers = 1);

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    double worst_miss_ratio = 0.0;  // highest per-description alignment miss

    bool ok() const { return errors.empty(); }
};

// Structural checks (list lengths, non-empty strings, closest-list size) plus
// alignment-coverage warnings. Never mutates the corpus.
ValidationReport validate_corpus(const DescriptionCorpus& corpus, const Tokenizer& tok,
                                 const EncoderConfig& cfg);

std::string corpus_to_json(const DescriptionCorpus& corpus);
DescriptionCorpus corpus_from_json(const std::string& text);
void save_corpus(const DescriptionCorpus& corpus, const std::string& path);
DescriptionCorpus load_corpus(const std::string& path);

std::map<std::string, std::string> load_fixture_map(const std::string& path);
void save_fixture_map(const std::map<std::string, std::string>& fixtures,
                      const std::string& path);

}  // namespace hpt
