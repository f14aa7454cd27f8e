#include "hpt/dataset.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "hpt/rng.hpp"

namespace hpt {
namespace {

const std::vector<std::string>& entity_words() {
    static const std::vector<std::string> w = {"pine", "rock", "reed", "moss",
                                               "fern", "bark", "dune", "kelp"};
    return w;
}

const std::vector<std::string>& attribute_words() {
    static const std::vector<std::string> w = {"rust", "gray", "jet",  "tan",
                                               "damp", "pale", "gold", "soft"};
    return w;
}

const std::vector<std::string>& question_set() {
    static const std::vector<std::string> q = {
        "What does [CLASS] look like among all [TYPE]?",
        "Describe the visual traits of [CLASS].",
        "How would you spot [CLASS] in a photo of [TYPE]?",
        "List the colors and shapes that mark [CLASS].",
        "What makes [CLASS] stand out from other [TYPE]?",
    };
    return q;
}

}  // namespace

void DatasetSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("DatasetSpec: name is empty");
    if (class_names.size() < 2)
        throw std::invalid_argument("DatasetSpec: need at least 2 classes");
    if (class_traits.size() != class_names.size())
        throw std::invalid_argument("DatasetSpec: class_traits/class_names size mismatch");
    std::set<std::string> seen;
    for (const std::string& n : class_names) {
        if (n.empty()) throw std::invalid_argument("DatasetSpec: empty class name");
        if (!seen.insert(n).second)
            throw std::invalid_argument("DatasetSpec: duplicate class name " + n);
    }
    for (const auto& traits : class_traits) {
        if (traits.empty()) throw std::invalid_argument("DatasetSpec: class with no trait words");
        for (const std::string& w : traits)
            if (w.empty()) throw std::invalid_argument("DatasetSpec: empty trait word");
    }
    if (tokens_per_sample < 1)
        throw std::invalid_argument("DatasetSpec: tokens_per_sample must be positive");
    if (samples_per_class < 1)
        throw std::invalid_argument("DatasetSpec: samples_per_class must be positive");
    if (noise < 0.0) throw std::invalid_argument("DatasetSpec: noise must be nonnegative");
}

DatasetSpec toy8() {
    DatasetSpec spec;
    spec.name = "toy8";
    spec.class_names = {"fox", "wolf", "crow", "deer", "toad", "moth", "carp", "hare"};
    spec.samples_per_class = 40;
    spec.noise = 0.05;
    const auto& ent = entity_words();
    const auto& attr = attribute_words();
    // Staggered trait assignment keeps every pairwise overlap at a single
    // word; adjacent classes sharing two traits are too confusable to
    // separate reliably at this scale.
    for (size_t i = 0; i < spec.class_names.size(); ++i)
        spec.class_traits.push_back({ent[i], ent[(i + 2) % 8], attr[i], attr[(i + 3) % 8]});
    return spec;
}

DatasetSpec toy6() {
    DatasetSpec spec;
    spec.name = "toy6";
    spec.class_names = {"lynx", "seal", "wren", "newt", "vole", "pike"};
    spec.seed = 1099;
    const auto& ent = entity_words();
    const auto& attr = attribute_words();
    for (size_t i = 0; i < spec.class_names.size(); ++i)
        spec.class_traits.push_back(
            {ent[i], ent[(i + 2) % 8], attr[(i + 1) % 8], attr[(i + 3) % 8]});
    return spec;
}

DatasetSpec toy8_zero_signal() {
    DatasetSpec spec = toy8();
    spec.name = "toy8zero";
    spec.signal = 0.0;
    spec.seed = 777;
    return spec;
}

DatasetSpec spec_by_name(const std::string& name) {
    if (name == "toy8") return toy8();
    if (name == "toy6") return toy6();
    if (name == "toy8zero") return toy8_zero_signal();
    throw std::invalid_argument("unknown dataset " + name +
                                " (expected toy8, toy6, or toy8zero)");
}

SyntheticDataset make_dataset(const DatasetSpec& spec, const TextEncoder& frozen_text,
                              const Tokenizer& tok) {
    spec.validate();
    const int d = frozen_text.cfg.model_dim;

    // trait word -> embedding row; words must map to a single token
    std::vector<std::vector<int>> trait_ids;
    for (const auto& traits : spec.class_traits) {
        std::vector<int> ids;
        for (const std::string& w : traits) {
            const std::vector<int> toks = tok.word_token_ids(w);
            if (toks.size() != 1)
                throw std::invalid_argument("make_dataset: trait word " + w +
                                            " is not a single token");
            ids.push_back(toks[0]);
        }
        trait_ids.push_back(std::move(ids));
    }

    SyntheticDataset ds;
    ds.spec = spec;
    Rng root(spec.seed);
    for (int c = 0; c < spec.num_classes(); ++c) {
        Rng class_rng = root.fork(1000 + static_cast<uint64_t>(c));
        const std::vector<int>& ids = trait_ids[static_cast<size_t>(c)];
        for (int k = 0; k < spec.samples_per_class; ++k) {
            Sample sample;
            sample.label = c;
            sample.tokens = Tensor2(spec.tokens_per_sample, d);
            for (int t = 0; t < spec.tokens_per_sample; ++t) {
                const int id = ids[static_cast<size_t>(t) % ids.size()];
                for (int j = 0; j < d; ++j)
                    sample.tokens(t, j) = spec.signal * frozen_text.token_embedding(id, j) +
                                          spec.noise * class_rng.normal();
            }
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

SyntheticDataset apply_domain_shift(const SyntheticDataset& source, const DomainShift& shift,
                                    uint64_t seed) {
    if (shift.extra_noise < 0.0)
        throw std::invalid_argument("apply_domain_shift: extra_noise must be nonnegative");
    if (shift.drop_channels < 0)
        throw std::invalid_argument("apply_domain_shift: drop_channels must be nonnegative");
    if (shift.extra_noise == 0.0 && shift.drop_channels == 0) return source;

    SyntheticDataset out = source;
    Rng rng(seed);
    for (Sample& sample : out.samples) {
        Tensor2& tokens = sample.tokens;
        if (shift.drop_channels > tokens.cols)
            throw std::invalid_argument("apply_domain_shift: drop_channels exceeds feature dim");
        for (int t = 0; t < tokens.rows; ++t)
            for (int j = 0; j < tokens.cols; ++j) {
                if (shift.extra_noise > 0.0) tokens(t, j) += shift.extra_noise * rng.normal();
                if (j < shift.drop_channels) tokens(t, j) = 0.0;
            }
    }
    return out;
}

SplitSpec make_splits(const SyntheticDataset& dataset, uint64_t seed, int shots_per_class) {
    const DatasetSpec& spec = dataset.spec;
    const int n_c = spec.num_classes();
    if (n_c < 2) throw std::invalid_argument("make_splits: need at least 2 classes");
    if (shots_per_class < 1)
        throw std::invalid_argument("make_splits: shots_per_class must be positive");
    if (shots_per_class > spec.samples_per_class)
        throw std::invalid_argument("make_splits: " + std::to_string(shots_per_class) +
                                    " shots exceed " + std::to_string(spec.samples_per_class) +
                                    " samples per class");

    SplitSpec split;
    split.shots_per_class = shots_per_class;
    const int n_base = (n_c + 1) / 2;
    for (int c = 0; c < n_c; ++c)
        (c < n_base ? split.base_classes : split.new_classes).push_back(c);

    Rng root(seed);
    std::vector<bool> in_train(dataset.samples.size(), false);
    for (int c : split.base_classes) {
        Rng class_rng = root.fork(static_cast<uint64_t>(c) + 1);
        std::vector<int> pool(static_cast<size_t>(spec.samples_per_class));
        for (int k = 0; k < spec.samples_per_class; ++k)
            pool[static_cast<size_t>(k)] = c * spec.samples_per_class + k;
        for (int k = 0; k < shots_per_class; ++k) {
            const int pick = k + class_rng.index(spec.samples_per_class - k);
            std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(pick)]);
        }
        pool.resize(static_cast<size_t>(shots_per_class));
        std::sort(pool.begin(), pool.end());
        for (int idx : pool) {
            split.train_indices.push_back(idx);
            in_train[static_cast<size_t>(idx)] = true;
        }
    }
    for (size_t i = 0; i < dataset.samples.size(); ++i)
        if (!in_train[i]) split.test_indices.push_back(static_cast<int>(i));
    return split;
}

std::map<std::string, SynthesizerClient::Profile> synth_profiles(const DatasetSpec& spec) {
    spec.validate();
    std::map<std::string, SynthesizerClient::Profile> profiles;
    for (size_t i = 0; i < spec.class_names.size(); ++i) {
        const auto& traits = spec.class_traits[i];
        SynthesizerClient::Profile prof;
        const size_t split = traits.size() / 2;
        for (size_t k = 0; k < traits.size(); ++k)
            (k < split ? prof.entities : prof.attributes).push_back(traits[k]);
        profiles[spec.class_names[i]] = std::move(prof);
    }
    return profiles;
}

DatasetTemplate dataset_template(const DatasetSpec& spec, int n_h) {
    const auto& questions = question_set();
    if (n_h < 1 || n_h > static_cast<int>(questions.size()))
        throw std::invalid_argument("dataset_template: n_h must be in [1, " +
                                    std::to_string(questions.size()) + "], got " +
                                    std::to_string(n_h));
    DatasetTemplate tmpl;
    tmpl.dataset_name = spec.name;
    tmpl.class_token_pattern = spec.name == "toy6" ? "a small [X]" : "a wild [X]";
    tmpl.type_token = spec.name == "toy6" ? "kinds of creatures" : "kinds of wildlife";
    tmpl.question_templates.assign(questions.begin(), questions.begin() + n_h);
    return tmpl;
}

}  // namespace hpt
