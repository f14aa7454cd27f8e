#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hpt/checkpoint.hpp"
#include "hpt/harness.hpp"

namespace {

using nlohmann::ordered_json;
using namespace hpt;

struct World {
    SyntheticDataset ds;
    SplitSpec split;
};

World build_world(const EncoderConfig& ec, const std::string& dataset_name, uint64_t split_seed,
                  int shots) {
    const TextEncoder frozen(ec);
    const Tokenizer tok{ec.vocab_size};
    World w;
    w.ds = make_dataset(spec_by_name(dataset_name), frozen, tok);
    w.split = make_splits(w.ds, split_seed, shots);
    return w;
}

std::string default_fixtures(const std::string& dataset_name) {
    return "data/fixtures_" + dataset_name + ".json";
}

// A corpus comes from an explicit file, or is regenerated from a fixture
// store. The returned origin string is what checkpoints record so that eval
// can rebuild the same corpus later.
DescriptionCorpus resolve_corpus(const std::string& corpus_path, const std::string& fixtures_path,
                                 const std::string& dataset_name, int n_h,
                                 const EncoderConfig& ec, std::string* origin) {
    if (!corpus_path.empty()) {
        if (origin) *origin = corpus_path;
        if (corpus_path.rfind("fixtures:", 0) != 0) return load_corpus(corpus_path);
    }
    std::string fix = fixtures_path;
    if (!corpus_path.empty()) fix = corpus_path.substr(std::string("fixtures:").size());
    if (fix.empty()) fix = default_fixtures(dataset_name);
    if (origin) *origin = "fixtures:" + fix;

    const DatasetSpec spec = spec_by_name(dataset_name);
    const TextEncoder frozen(ec);
    const Tokenizer tok{ec.vocab_size};
    FixtureClient client = FixtureClient::load(fix);
    return generate_corpus(dataset_template(spec, n_h), spec.class_names, client, frozen, tok);
}

ordered_json config_json(const TrainConfig& cfg) {
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

void emit_report(const ordered_json& j, const std::string& out_path) {
    const std::string text = j.dump(2) + "\n";
    std::fputs(text.c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << text;
    }
}

void emit_report(const std::string& table, const std::string& json_text,
                 const std::string& out_path) {
    std::fputs(table.c_str(), stdout);
    std::fputs(json_text.c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << json_text;
    }
}

int cmd_generate_knowledge(const std::string& dataset_name, const std::string& fixtures,
                           bool live, int n_h, const std::string& out,
                           const std::string& report_path) {
    const DatasetSpec spec = spec_by_name(dataset_name);
    const DatasetTemplate tmpl = dataset_template(spec, n_h);
    const EncoderConfig ec;
    const TextEncoder frozen(ec);
    const Tokenizer tok{ec.vocab_size};

    std::unique_ptr<LLMClient> client;
    std::string source;
    if (live) {
        client = std::make_unique<LiveClient>();
        source = "live";
    } else {
        const std::string fix = fixtures.empty() ? default_fixtures(dataset_name) : fixtures;
        client = std::make_unique<FixtureClient>(FixtureClient::load(fix));
        source = "fixtures:" + fix;
    }

    const DescriptionCorpus corpus =
        generate_corpus(tmpl, spec.class_names, *client, frozen, tok, live ? 4 : 1);
    const ValidationReport v = validate_corpus(corpus, tok, ec);
    for (const std::string& w : v.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (!v.ok()) {
        for (const std::string& e : v.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
        return 1;
    }
    save_corpus(corpus, out);

    std::printf("corpus for %s (%d descriptions per class) -> %s\n", corpus.dataset.c_str(),
                corpus.n_h, out.c_str());
    std::printf("%-8s %7s %5s %8s %6s\n", "class", "coarse", "fine", "overall", "edges");
    for (const ClassKnowledge& ck : corpus.classes) {
        int edges = 0;
        for (const RelationGraph& g : ck.relations)
            edges += static_cast<int>(g.e2e_pairs.size() + g.e2a_pairs.size());
        std::printf("%-8s %7zu %5zu %8zu %6d\n", ck.name.c_str(), ck.coarse.size(),
                    ck.fine.size(), ck.overall.size(), edges);
    }

    ordered_json j;
    j["command"] = "generate-knowledge";
    j["dataset"] = dataset_name;
    j["n_h"] = n_h;
    j["source"] = source;
    j["out"] = out;
    j["classes"] = spec.class_names;
    j["warnings"] = v.warnings;
    j["worst_miss_ratio"] = v.worst_miss_ratio;
    emit_report(j, report_path);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& fixtures, const std::string& dataset_name, bool seed_given,
              uint64_t seed, uint64_t split_seed, int shots, const std::string& out) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    if (seed_given) cfg.seed = seed;
    cfg.validate();

    const EncoderConfig ec;
    std::string corpus_origin;
    const DescriptionCorpus corpus =
        resolve_corpus(corpus_path, fixtures, dataset_name, cfg.n_h, ec, &corpus_origin);
    const World w = build_world(ec, dataset_name, split_seed, shots);

    const TrainResult result = train(cfg, ec, corpus, w.ds, w.split);

    std::filesystem::create_directories(out);
    const std::string ckpt_path = out + "/checkpoint.json";
    const std::string trace_path = out + "/loss_trace.jsonl";
    save_checkpoint(ckpt_path, make_checkpoint(result, dataset_name, corpus_origin));
    save_loss_trace(trace_path, result.trace);

    const LossBreakdown& last = result.trace.back().loss;
    std::printf("trained %s for %zu steps (seed %llu, split seed %llu, %d shots)\n",
                dataset_name.c_str(), result.trace.size(),
                static_cast<unsigned long long>(cfg.seed),
                static_cast<unsigned long long>(split_seed), shots);
    std::printf("final losses: l_asy %.6f  l_c %.6f  total %.6f\n", last.l_asy, last.l_c,
                last.total);
    std::printf("checkpoint -> %s\ntrace -> %s\n", ckpt_path.c_str(), trace_path.c_str());

    ordered_json j;
    j["command"] = "train";
    j["dataset"] = dataset_name;
    j["corpus"] = corpus_origin;
    j["split_seed"] = split_seed;
    j["shots"] = shots;
    j["config"] = config_json(result.config);
    j["steps"] = result.trace.size();
    j["final"] = {{"l_asy", last.l_asy}, {"l_c", last.l_c}, {"total", last.total}};
    j["diverged"] = result.diverged;
    j["checkpoint"] = ckpt_path;
    j["trace"] = trace_path;
    emit_report(j, "");

    if (result.diverged) {
        std::fprintf(stderr, "error: training diverged (non-finite loss); see %s\n",
                     trace_path.c_str());
        return 1;
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& protocol,
             const std::string& corpus_flag, const std::string& fixtures,
             const std::string& dataset_flag, uint64_t split_seed, int shots,
             const std::vector<std::string>& target_flags, uint64_t shift_seed,
             const std::string& report_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const TrainResult result{ck.encoder_cfg, ck.train_cfg, ck.bundle, {}, false};
    const std::string dataset_name = dataset_flag.empty() ? ck.dataset_name : dataset_flag;
    const std::string corpus_path = corpus_flag.empty() ? ck.corpus_path : corpus_flag;

    const DescriptionCorpus corpus =
        resolve_corpus(corpus_path, fixtures, dataset_name, ck.train_cfg.n_h, ck.encoder_cfg,
                       nullptr);
    const World w = build_world(ck.encoder_cfg, dataset_name, split_seed, shots);

    MetricsReport report;
    if (protocol == "base2new") {
        report = evaluate(result, corpus, w.ds, w.split);
    } else if (protocol == "crossdata") {
        if (target_flags.empty())
            throw std::invalid_argument(
                "eval: --protocol crossdata needs at least one --target name[=corpus]");
        std::deque<std::pair<World, DescriptionCorpus>> storage;
        std::vector<EvalTarget> targets;
        for (const std::string& t : target_flags) {
            const size_t eq = t.find('=');
            const std::string name = t.substr(0, eq == std::string::npos ? t.size() : eq);
            const std::string path = eq == std::string::npos ? "" : t.substr(eq + 1);
            storage.emplace_back(
                build_world(ck.encoder_cfg, name, split_seed, shots),
                resolve_corpus(path, "", name, ck.train_cfg.n_h, ck.encoder_cfg, nullptr));
            targets.push_back({name, &storage.back().second, &storage.back().first.ds,
                               &storage.back().first.split});
        }
        report = cross_dataset_eval(result, dataset_name, targets);
    } else {
        report = domain_gen_eval(result, corpus, w.ds, w.split, default_domain_shifts(),
                                 shift_seed);
    }

    emit_report(report_to_table(report), report_to_json(report), report_path);
    return 0;
}

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& corpus_path, const std::string& fixtures,
               const std::string& dataset_name, uint64_t split_seed, int shots,
               const std::string& report_path) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    cfg.validate();

    const EncoderConfig ec;
    const DescriptionCorpus corpus =
        resolve_corpus(corpus_path, fixtures, dataset_name, 5, ec, nullptr);
    const World w = build_world(ec, dataset_name, split_seed, shots);

    const AblationReport report = run_ablation(suite, cfg, ec, corpus, w.ds, w.split);
    emit_report(report_to_table(report), report_to_json(report), report_path);
    return 0;
}

int cmd_check_grads(const std::string& report_path) {
    const GradSuiteReport suite = run_training_grad_suite();

    std::printf("gradient check: central differences at h=%g, tolerance %g\n", suite.step_size,
                suite.tolerance);
    std::printf("%-14s %-16s %12s %8s\n", "regime", "group", "max_rel_err", "params");
    for (const GradSuiteEntry& e : suite.entries)
        std::printf("%-14s %-16s %12.3e %8d\n", e.regime.c_str(), e.group.c_str(), e.max_rel_err,
                    e.params_checked);
    std::printf("%s in %.1fs\n", suite.passed() ? "PASS" : "FAIL", suite.seconds);

    ordered_json j;
    j["command"] = "check-grads";
    j["step_size"] = suite.step_size;
    j["tolerance"] = suite.tolerance;
    j["seconds"] = suite.seconds;
    j["passed"] = suite.passed();
    j["entries"] = ordered_json::array();
    for (const GradSuiteEntry& e : suite.entries)
        j["entries"].push_back({{"regime", e.regime},
                                {"group", e.group},
                                {"max_rel_err", e.max_rel_err},
                                {"params_checked", e.params_checked}});
    emit_report(j, report_path);
    return suite.passed() ? 0 : 1;
}

int cmd_dump_attn(const std::string& ckpt_path, const std::string& class_name, int layer,
                  int top_k, int desc, const std::string& corpus_flag,
                  const std::string& fixtures, const std::string& report_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const TextEncoder enc(ck.encoder_cfg);
    const Tokenizer tok{ck.encoder_cfg.vocab_size};

    const std::string corpus_path = corpus_flag.empty() ? ck.corpus_path : corpus_flag;
    const DescriptionCorpus corpus = resolve_corpus(corpus_path, fixtures, ck.dataset_name,
                                                    ck.train_cfg.n_h, ck.encoder_cfg, nullptr);
    const ClassKnowledge* knowledge = corpus.find_class(class_name);
    if (!knowledge)
        throw std::invalid_argument("dump-attn: corpus has no class " + class_name);

    const ClassTextModel model = build_class_text_model(enc, tok, *knowledge, ck.train_cfg);
    if (desc < 0 || desc >= model.n_desc())
        throw std::invalid_argument("dump-attn: --desc out of range, class has " +
                                    std::to_string(model.n_desc()) + " descriptions");
    const int l = layer < 0 ? ck.encoder_cfg.num_layers - 1 : layer;

    const std::vector<Tensor2> p_h = generate_high_prompts(model.states, ck.bundle);
    const std::vector<AttentionModMatrix> mods =
        build_layer_mods(ck.train_cfg, ck.bundle, model.graphs[static_cast<size_t>(desc)],
                         model.alignments[static_cast<size_t>(desc)],
                         model.seqs[static_cast<size_t>(desc)].layout, ck.encoder_cfg.num_layers);
    const AttnDump dump = dump_attention_scores(enc, model.seqs[static_cast<size_t>(desc)],
                                               ck.bundle, p_h, mods, l, top_k);

    const std::string& text = knowledge->overall[static_cast<size_t>(desc)];
    std::printf("attention from the description-final token of %s, layer %d\n",
                class_name.c_str(), l);
    std::printf("description %d: %s\n", desc, text.c_str());
    std::printf("%4s %-12s %10s\n", "rank", "word", "weight");
    for (size_t i = 0; i < dump.words.size(); ++i)
        std::printf("%4zu %-12s %10.6f\n", i + 1, dump.words[i].word.c_str(),
                    dump.words[i].score);

    ordered_json j;
    j["command"] = "dump-attn";
    j["checkpoint"] = ckpt_path;
    j["class"] = class_name;
    j["layer"] = l;
    j["top_k"] = top_k;
    j["desc"] = desc;
    j["description"] = text;
    j["config"] = config_json(ck.train_cfg);
    j["words"] = ordered_json::array();
    for (const WordScore& wsc : dump.words)
        j["words"].push_back({{"word", wsc.word}, {"score", wsc.score}});
    emit_report(j, report_path);
    return 0;
}

int cmd_synth_fixtures(const std::string& dataset_name, int n_h, const std::string& out) {
    const DatasetSpec spec = spec_by_name(dataset_name);
    const EncoderConfig ec;
    const TextEncoder frozen(ec);
    const Tokenizer tok{ec.vocab_size};

    SynthesizerClient synth(synth_profiles(spec));
    RecordingClient rec(synth);
    const DescriptionCorpus corpus =
        generate_corpus(dataset_template(spec, n_h), spec.class_names, rec, frozen, tok);
    const ValidationReport v = validate_corpus(corpus, tok, ec);
    for (const std::string& w : v.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (!v.ok()) {
        for (const std::string& e : v.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
        return 1;
    }
    rec.save(out);
    std::printf("recorded %zu exchanges for %s -> %s\n", rec.recorded().size(),
                dataset_name.c_str(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical prompt tuning lab"};
    app.require_subcommand(1);

    std::string gk_dataset, gk_fixtures, gk_out, gk_report;
    int gk_nh = 5;
    bool gk_live = false;
    auto* gk = app.add_subcommand("generate-knowledge",
                                  "generate a description corpus through an LLM client");
    gk->add_option("--dataset", gk_dataset, "dataset name (toy8, toy6, toy8zero)")->required();
    gk->add_option("--fixtures", gk_fixtures, "fixture store (default data/fixtures_<dataset>.json)");
    gk->add_flag("--live", gk_live, "use the HTTP backend configured via HPT_LLM_* variables");
    gk->add_option("--n-h", gk_nh, "descriptions per class");
    gk->add_option("--out", gk_out, "corpus output path")->required();
    gk->add_option("--report", gk_report, "also write the JSON report here");

    std::string tr_config, tr_corpus, tr_fixtures, tr_dataset, tr_out;
    uint64_t tr_seed = 0, tr_split_seed = 7;
    int tr_shots = 16;
    auto* tr = app.add_subcommand("train", "few-shot prompt tuning on a synthetic dataset");
    tr->add_option("--config", tr_config, "flat key=value config file");
    tr->add_option("--corpus", tr_corpus, "corpus file from generate-knowledge");
    tr->add_option("--fixtures", tr_fixtures, "fixture store to build the corpus from instead");
    tr->add_option("--dataset", tr_dataset, "dataset name")->required();
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "override the config seed");
    tr->add_option("--split-seed", tr_split_seed, "base/new split seed");
    tr->add_option("--shots", tr_shots, "training shots per base class");
    tr->add_option("--out", tr_out, "output directory for checkpoint and loss trace")->required();

    std::string ev_ckpt, ev_protocol, ev_corpus, ev_fixtures, ev_dataset, ev_report;
    uint64_t ev_split_seed = 7, ev_shift_seed = 11;
    int ev_shots = 16;
    std::vector<std::string> ev_targets;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint under a protocol");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--protocol", ev_protocol, "base2new, crossdata, or domaingen")
        ->required()
        ->check(CLI::IsMember({"base2new", "crossdata", "domaingen"}));
    ev->add_option("--corpus", ev_corpus, "corpus file (default: recorded in the checkpoint)");
    ev->add_option("--fixtures", ev_fixtures, "fixture store to build the corpus from instead");
    ev->add_option("--dataset", ev_dataset, "dataset name (default: recorded in the checkpoint)");
    ev->add_option("--split-seed", ev_split_seed, "base/new split seed");
    ev->add_option("--shots", ev_shots, "shots used when the split was made");
    ev->add_option("--target", ev_targets,
                   "crossdata target, name or name=corpus.json (repeatable)");
    ev->add_option("--shift-seed", ev_shift_seed, "noise seed for domaingen variants");
    ev->add_option("--report", ev_report, "also write the JSON report here");

    std::string ab_suite, ab_config, ab_corpus, ab_fixtures, ab_dataset = "toy8", ab_report;
    uint64_t ab_split_seed = 7;
    int ab_shots = 16;
    auto* ab = app.add_subcommand("ablate", "train and evaluate an ablation suite");
    ab->add_option("--suite", ab_suite, "suite name")
        ->required()
        ->check(CLI::IsMember(ablation_suites()));
    ab->add_option("--config", ab_config, "flat key=value base config file");
    ab->add_option("--corpus", ab_corpus, "corpus file");
    ab->add_option("--fixtures", ab_fixtures, "fixture store to build the corpus from instead");
    ab->add_option("--dataset", ab_dataset, "dataset name");
    ab->add_option("--split-seed", ab_split_seed, "base/new split seed");
    ab->add_option("--shots", ab_shots, "training shots per base class");
    ab->add_option("--report", ab_report, "also write the JSON report here");

    std::string cg_report;
    auto* cg = app.add_subcommand("check-grads", "finite-difference check of every learnable group");
    cg->add_option("--report", cg_report, "also write the JSON report here");

    std::string da_ckpt, da_class, da_corpus, da_fixtures, da_report;
    int da_layer = -1, da_topk = 8, da_desc = 0;
    auto* da = app.add_subcommand("dump-attn", "attention weights over one description");
    da->add_option("--checkpoint", da_ckpt, "checkpoint file")->required();
    da->add_option("--class", da_class, "class name")->required();
    da->add_option("--layer", da_layer, "layer index (default: last)");
    da->add_option("--top-k", da_topk, "words to keep");
    da->add_option("--desc", da_desc, "description index");
    da->add_option("--corpus", da_corpus, "corpus file (default: recorded in the checkpoint)");
    da->add_option("--fixtures", da_fixtures, "fixture store to build the corpus from instead");
    da->add_option("--report", da_report, "also write the JSON report here");

    std::string sf_dataset, sf_out;
    int sf_nh = 5;
    auto* sf = app.add_subcommand("synth-fixtures",
                                  "author a fixture store from the synthesizer backend");
    sf->add_option("--dataset", sf_dataset, "dataset name")->required();
    sf->add_option("--n-h", sf_nh, "descriptions per class");
    sf->add_option("--out", sf_out, "fixture store output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gk->parsed())
            return cmd_generate_knowledge(gk_dataset, gk_fixtures, gk_live, gk_nh, gk_out,
                                          gk_report);
        if (tr->parsed())
            return cmd_train(tr_config, tr_corpus, tr_fixtures, tr_dataset,
                             tr_seed_opt->count() > 0, tr_seed, tr_split_seed, tr_shots, tr_out);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_protocol, ev_corpus, ev_fixtures, ev_dataset,
                            ev_split_seed, ev_shots, ev_targets, ev_shift_seed, ev_report);
        if (ab->parsed())
            return cmd_ablate(ab_suite, ab_config, ab_corpus, ab_fixtures, ab_dataset,
                              ab_split_seed, ab_shots, ab_report);
        if (cg->parsed()) return cmd_check_grads(cg_report);
        if (da->parsed())
            return cmd_dump_attn(da_ckpt, da_class, da_layer, da_topk, da_desc, da_corpus,
                                 da_fixtures, da_report);
        if (sf->parsed()) return cmd_synth_fixtures(sf_dataset, sf_nh, sf_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
