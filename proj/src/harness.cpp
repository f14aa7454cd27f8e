#include "hpt/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace hpt {
namespace {

using ordered_json = nlohmann::ordered_json;

int argmax(const std::vector<double>& p) {
    int best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

MetricRow make_row(const std::string& name, int correct, int total) {
    MetricRow r;
    r.name = name;
    r.correct = correct;
    r.total = total;
    r.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
    return r;
}

std::vector<int> predict(const VisualEncoder& vis, const SyntheticDataset& dataset,
                         const std::vector<int>& indices, const PromptBundle& bundle,
                         const CandidateEmbeddings& candidates, double s) {
    // validate up front; nothing may throw inside the parallel region
    for (int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(dataset.samples.size()))
            throw std::invalid_argument("evaluate: test index out of range");
        if (dataset.samples[static_cast<size_t>(idx)].tokens.cols != vis.cfg.model_dim)
            throw std::invalid_argument("evaluate: sample feature dim mismatch");
    }
    std::vector<int> pred(indices.size(), 0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < static_cast<int>(indices.size()); ++i) {
        const Sample& sample = dataset.samples[static_cast<size_t>(indices[static_cast<size_t>(i)])];
        pred[static_cast<size_t>(i)] =
            argmax(overall_probability(vis, sample, bundle, candidates, s));
    }
    return pred;
}

int count_correct(const std::vector<int>& pred, const SyntheticDataset& dataset,
                  const std::vector<int>& indices) {
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == dataset.samples[static_cast<size_t>(indices[i])].label) ++correct;
    return correct;
}

ordered_json train_config_json(const TrainConfig& cfg) {
    ordered_json j;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["n_g"] = cfg.n_g;
    j["n_h"] = cfg.n_h;
    j["n_visual"] = cfg.n_visual;
    j["beta"] = cfg.beta;
    j["lambda"] = cfg.lambda;
    j["logit_scale"] = cfg.logit_scale;
    j["seed"] = cfg.seed;
    j["mode"] = to_string(cfg.mode);
    j["reweight_strategy"] = to_string(cfg.reweight_strategy);
    j["use_high"] = cfg.use_high;
    j["use_low"] = cfg.use_low;
    return j;
}

ordered_json row_json(const MetricRow& r) {
    ordered_json j;
    j["name"] = r.name;
    j["correct"] = r.correct;
    j["total"] = r.total;
    j["accuracy"] = r.accuracy;
    return j;
}

std::string beta_label(double beta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", beta);
    return buf;
}

}  // namespace

double harmonic_mean(double b, double n) {
    if (!(b > 0.0) || !(n > 0.0))
        throw std::invalid_argument("harmonic_mean: inputs must be positive");
    return 2.0 * b * n / (b + n);
}

const MetricRow* MetricsReport::find_row(const std::string& name) const {
    for (const MetricRow& r : rows)
        if (r.name == name) return &r;
    return nullptr;
}

CandidateEmbeddings build_candidates(const TrainResult& result, const DescriptionCorpus& corpus,
                                     const SyntheticDataset& dataset) {
    result.encoder_cfg.validate();
    result.config.validate();
    const int n_c = dataset.spec.num_classes();
    if (n_c < 1) throw std::invalid_argument("candidate embeddings: dataset has no classes");

    const TextEncoder text(result.encoder_cfg);
    const Tokenizer tok{result.encoder_cfg.vocab_size};
    const int d = result.encoder_cfg.model_dim;

    CandidateEmbeddings candidates{Tensor2(n_c, d), Tensor2(n_c, d)};
    for (int c = 0; c < n_c; ++c) {
        const std::string& name = dataset.spec.class_names[static_cast<size_t>(c)];
        const ClassKnowledge* ck = corpus.find_class(name);
        if (!ck)
            throw std::invalid_argument("candidate embeddings: corpus is missing class " + name);
        const ClassTextModel model = build_class_text_model(text, tok, *ck, result.config);
        const std::vector<double> prompted =
            category_embedding_inference(text, model, result.config, result.bundle);
        std::copy(prompted.begin(), prompted.end(), candidates.prompted.row(c));
        std::copy(model.frozen_mean.begin(), model.frozen_mean.end(), candidates.frozen.row(c));
    }
    return candidates;
}

std::vector<double> overall_probability(const VisualEncoder& enc, const Sample& sample,
                                        const PromptBundle& bundle,
                                        const CandidateEmbeddings& candidates, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("overall_probability: scale must be positive");
    const int n_c = candidates.prompted.rows;
    const int d = candidates.prompted.cols;
    if (n_c < 1 || candidates.frozen.rows != n_c || candidates.frozen.cols != d)
        throw std::invalid_argument("overall_probability: candidate shape mismatch");

    const std::vector<double> frozen_z =
        normalized(visual_forward(enc, sample.tokens, nullptr, nullptr));
    const std::vector<double> prompted_z =
        normalized(visual_forward(enc, sample.tokens, &bundle.visual_prompts, nullptr));
    if (static_cast<int>(frozen_z.size()) != d)
        throw std::invalid_argument("overall_probability: feature dim mismatch");

    Tensor2 scores(2, n_c);
    for (int c = 0; c < n_c; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
            s1 += frozen_z[static_cast<size_t>(j)] * candidates.prompted(c, j);
            s2 += prompted_z[static_cast<size_t>(j)] * candidates.frozen(c, j);
        }
        scores(0, c) = s * s1;
        scores(1, c) = s * s2;
    }
    const Tensor2 probs = softmax_rows(scores);
    std::vector<double> p(static_cast<size_t>(n_c));
    for (int c = 0; c < n_c; ++c) p[static_cast<size_t>(c)] = 0.5 * (probs(0, c) + probs(1, c));
    return p;
}

MetricsReport evaluate(const TrainResult& result, const DescriptionCorpus& corpus,
                       const SyntheticDataset& dataset, const SplitSpec& split) {
    const CandidateEmbeddings candidates = build_candidates(result, corpus, dataset);
    const VisualEncoder vis(result.encoder_cfg);
    const std::vector<int> pred = predict(vis, dataset, split.test_indices, result.bundle,
                                          candidates, result.config.logit_scale);

    const int n_c = dataset.spec.num_classes();
    std::vector<char> in_base(static_cast<size_t>(n_c), 0), in_new(static_cast<size_t>(n_c), 0);
    for (int c : split.base_classes) {
        if (c < 0 || c >= n_c) throw std::invalid_argument("evaluate: base class out of range");
        in_base[static_cast<size_t>(c)] = 1;
    }
    for (int c : split.new_classes) {
        if (c < 0 || c >= n_c) throw std::invalid_argument("evaluate: new class out of range");
        in_new[static_cast<size_t>(c)] = 1;
    }

    int base_correct = 0, base_total = 0, new_correct = 0, new_total = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const int label = dataset.samples[static_cast<size_t>(split.test_indices[i])].label;
        const int hit = pred[i] == label ? 1 : 0;
        if (in_base[static_cast<size_t>(label)]) {
            ++base_total;
            base_correct += hit;
        } else if (in_new[static_cast<size_t>(label)]) {
            ++new_total;
            new_correct += hit;
        } else {
            throw std::invalid_argument("evaluate: test sample labeled outside the split");
        }
    }

    MetricsReport report;
    report.protocol = "base2new";
    report.dataset = dataset.spec.name;
    report.config = result.config;
    report.rows.push_back(make_row("base", base_correct, base_total));
    report.rows.push_back(make_row("new", new_correct, new_total));
    report.rows.push_back(
        make_row("overall", base_correct + new_correct, base_total + new_total));
    const double b = report.rows[0].accuracy;
    const double n = report.rows[1].accuracy;
    if (base_total > 0 && new_total > 0 && b > 0.0 && n > 0.0) {
        report.harmonic = harmonic_mean(b, n);
        report.harmonic_valid = true;
    }
    return report;
}

MetricsReport cross_dataset_eval(const TrainResult& result, const std::string& source_name,
                                 const std::vector<EvalTarget>& targets) {
    if (targets.empty()) throw std::invalid_argument("cross_dataset_eval: no targets");
    const VisualEncoder vis(result.encoder_cfg);

    MetricsReport report;
    report.protocol = "crossdata";
    report.dataset = source_name;
    report.config = result.config;

    double acc_sum = 0.0;
    int correct_sum = 0, total_sum = 0;
    for (const EvalTarget& t : targets) {
        if (!t.corpus || !t.dataset || !t.split)
            throw std::invalid_argument("cross_dataset_eval: target " + t.name +
                                        " is missing corpus, dataset, or split");
        const CandidateEmbeddings candidates = build_candidates(result, *t.corpus, *t.dataset);
        const std::vector<int> pred = predict(vis, *t.dataset, t.split->test_indices,
                                              result.bundle, candidates,
                                              result.config.logit_scale);
        const int correct = count_correct(pred, *t.dataset, t.split->test_indices);
        report.rows.push_back(make_row(t.name, correct, static_cast<int>(pred.size())));
        acc_sum += report.rows.back().accuracy;
        correct_sum += correct;
        total_sum += static_cast<int>(pred.size());
    }

    MetricRow avg = make_row("average", correct_sum, total_sum);
    avg.accuracy = acc_sum / static_cast<double>(targets.size());
    report.rows.push_back(avg);
    return report;
}

MetricsReport domain_gen_eval(const TrainResult& result, const DescriptionCorpus& corpus,
                              const SyntheticDataset& source, const SplitSpec& split,
                              const std::vector<DomainShift>& variants, uint64_t shift_seed) {
    const CandidateEmbeddings candidates = build_candidates(result, corpus, source);
    const VisualEncoder vis(result.encoder_cfg);

    MetricsReport report;
    report.protocol = "domaingen";
    report.dataset = source.spec.name;
    report.config = result.config;

    auto add_row = [&](const std::string& name, const SyntheticDataset& ds) {
        const std::vector<int> pred = predict(vis, ds, split.test_indices, result.bundle,
                                              candidates, result.config.logit_scale);
        report.rows.push_back(make_row(name, count_correct(pred, ds, split.test_indices),
                                       static_cast<int>(pred.size())));
    };

    add_row("source", source);
    for (const DomainShift& v : variants)
        add_row(v.name, apply_domain_shift(source, v, shift_seed));
    return report;
}

std::vector<DomainShift> default_domain_shifts() {
    return {{"noise_0.1", 0.1, 0}, {"noise_0.3", 0.3, 0}, {"drop_2", 0.0, 2}};
}

const std::vector<std::string>& ablation_suites() {
    static const std::vector<std::string> suites = {"prompt_levels", "n_h_sweep",
                                                    "strategy_sweep", "hptpp_components"};
    return suites;
}

AblationReport run_ablation(const std::string& suite, const TrainConfig& base_cfg,
                            const EncoderConfig& enc_cfg, const DescriptionCorpus& corpus,
                            const SyntheticDataset& dataset, const SplitSpec& split) {
    struct RowSpec {
        std::string label;
        TrainConfig cfg;
    };
    std::vector<RowSpec> specs;

    if (suite == "prompt_levels") {
        TrainConfig g = base_cfg;
        g.use_high = false;
        g.use_low = false;
        specs.push_back({"G", g});
        TrainConfig gh = base_cfg;
        gh.use_low = false;
        specs.push_back({"G+H", gh});
        TrainConfig gl = base_cfg;
        gl.use_high = false;
        specs.push_back({"G+L", gl});
        TrainConfig ghl = base_cfg;
        ghl.use_high = true;
        ghl.use_low = true;
        specs.push_back({"G+H+L", ghl});
    } else if (suite == "n_h_sweep") {
        for (int n_h : {1, 3, 5}) {
            TrainConfig cfg = base_cfg;
            cfg.n_h = n_h;
            specs.push_back({"n_h=" + std::to_string(n_h), cfg});
        }
    } else if (suite == "strategy_sweep") {
        for (AttnModMode strategy : {AttnModMode::additive, AttnModMode::multiplicative,
                                     AttnModMode::multiplicative_selective}) {
            for (double beta : {0.0, 0.1, 0.2, 0.5, 1.0}) {
                TrainConfig cfg = base_cfg;
                cfg.mode = TrainMode::hptpp;
                cfg.reweight_strategy = strategy;
                cfg.beta = beta;
                specs.push_back(
                    {std::string(to_string(strategy)) + " beta=" + beta_label(beta), cfg});
            }
        }
    } else if (suite == "hptpp_components") {
        for (double lambda : {0.0, 1.0}) {
            TrainConfig cfg = base_cfg;
            cfg.mode = TrainMode::hpt;
            cfg.reweight_strategy = AttnModMode::additive;
            cfg.lambda = lambda;
            specs.push_back({"hpt additive lambda=" + beta_label(lambda), cfg});
        }
        for (double lambda : {0.0, 1.0}) {
            TrainConfig cfg = base_cfg;
            cfg.mode = TrainMode::hptpp;
            cfg.reweight_strategy = AttnModMode::multiplicative;
            cfg.lambda = lambda;
            specs.push_back({"hpt++ multiplicative lambda=" + beta_label(lambda), cfg});
        }
    } else {
        throw std::invalid_argument("run_ablation: unknown suite " + suite);
    }

    AblationReport report;
    report.suite = suite;
    report.dataset = dataset.spec.name;
    report.seed = base_cfg.seed;
    for (const RowSpec& rs : specs) {
        const TrainResult r = train(rs.cfg, enc_cfg, corpus, dataset, split);
        const MetricsReport m = evaluate(r, corpus, dataset, split);
        AblationRow row;
        row.label = rs.label;
        row.config = rs.cfg;
        row.base_acc = m.find_row("base")->accuracy;
        row.new_acc = m.find_row("new")->accuracy;
        row.harmonic = m.harmonic;
        row.harmonic_valid = m.harmonic_valid;
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string report_to_json(const MetricsReport& report) {
    ordered_json j;
    j["protocol"] = report.protocol;
    j["dataset"] = report.dataset;
    j["seed"] = report.config.seed;
    j["config"] = train_config_json(report.config);
    ordered_json rows = ordered_json::array();
    for (const MetricRow& r : report.rows) rows.push_back(row_json(r));
    j["rows"] = std::move(rows);
    if (report.harmonic_valid)
        j["harmonic"] = report.harmonic;
    else
        j["harmonic"] = nullptr;
    return j.dump(2) + "\n";
}

std::string report_to_table(const MetricsReport& report) {
    char buf[192];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%s on %s (seed %llu)\n", report.protocol.c_str(),
                  report.dataset.c_str(), static_cast<unsigned long long>(report.config.seed));
    out += buf;
    std::snprintf(buf, sizeof(buf), "  %-20s %10s %13s\n", "split", "acc(%)", "correct");
    out += buf;
    for (const MetricRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "  %-20s %10.2f %7d/%-5d\n", r.name.c_str(),
                      100.0 * r.accuracy, r.correct, r.total);
        out += buf;
    }
    if (report.harmonic_valid) {
        std::snprintf(buf, sizeof(buf), "  harmonic mean: %.2f\n", 100.0 * report.harmonic);
        out += buf;
    }
    return out;
}

std::string report_to_json(const AblationReport& report) {
    ordered_json j;
    j["suite"] = report.suite;
    j["dataset"] = report.dataset;
    j["seed"] = report.seed;
    ordered_json rows = ordered_json::array();
    for (const AblationRow& r : report.rows) {
        ordered_json row;
        row["label"] = r.label;
        row["base"] = r.base_acc;
        row["new"] = r.new_acc;
        if (r.harmonic_valid)
            row["harmonic"] = r.harmonic;
        else
            row["harmonic"] = nullptr;
        row["config"] = train_config_json(r.config);
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

std::string report_to_table(const AblationReport& report) {
    char buf[192];
    std::string out;
    std::snprintf(buf, sizeof(buf), "ablation %s on %s (seed %llu)\n", report.suite.c_str(),
                  report.dataset.c_str(), static_cast<unsigned long long>(report.seed));
    out += buf;
    std::snprintf(buf, sizeof(buf), "  %-36s %10s %10s %10s\n", "row", "base(%)", "new(%)",
                  "HM(%)");
    out += buf;
    for (const AblationRow& r : report.rows) {
        char hm[16];
        if (r.harmonic_valid)
            std::snprintf(hm, sizeof(hm), "%10.2f", 100.0 * r.harmonic);
        else
            std::snprintf(hm, sizeof(hm), "%10s", "-");
        std::snprintf(buf, sizeof(buf), "  %-36s %10.2f %10.2f %s\n", r.label.c_str(),
                      100.0 * r.base_acc, 100.0 * r.new_acc, hm);
        out += buf;
    }
    return out;
}

}  // namespace hpt
