#include "hpt/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hpt {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

ordered_json tensor_to_json(const Parameter& p) {
    require_finite(p.value, "checkpoint parameter " + p.name);
    ordered_json j;
    j["name"] = p.name;
    j["rows"] = p.value.rows;
    j["cols"] = p.value.cols;
    j["data"] = p.value.data;
    return j;
}

Parameter tensor_from_json(const ordered_json& j) {
    const std::string name = j.at("name").get<std::string>();
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    if (rows < 0 || cols < 0)
        throw std::runtime_error("checkpoint: negative tensor shape for " + name);
    const std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols))
        throw std::runtime_error("checkpoint: tensor " + name + " has " +
                                 std::to_string(data.size()) + " values for shape " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
    Parameter p(name, Tensor2(rows, cols));
    p.value.data = data;
    require_finite(p.value, "checkpoint parameter " + name);
    return p;
}

double number_or_nan(const ordered_json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return v.get<double>();
}

}  // namespace

Checkpoint make_checkpoint(const TrainResult& result, const std::string& dataset_name,
                           const std::string& corpus_path) {
    Checkpoint c;
    c.encoder_cfg = result.encoder_cfg;
    c.train_cfg = result.config;
    c.dataset_name = dataset_name;
    c.corpus_path = corpus_path;
    c.bundle = result.bundle;
    return c;
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
    ckpt.encoder_cfg.validate();
    ckpt.train_cfg.validate();

    ordered_json j;
    j["version"] = ckpt.version;

    ordered_json enc;
    enc["num_layers"] = ckpt.encoder_cfg.num_layers;
    enc["model_dim"] = ckpt.encoder_cfg.model_dim;
    enc["num_heads"] = ckpt.encoder_cfg.num_heads;
    enc["head_dim"] = ckpt.encoder_cfg.head_dim;
    enc["max_seq_len"] = ckpt.encoder_cfg.max_seq_len;
    enc["vocab_size"] = ckpt.encoder_cfg.vocab_size;
    enc["mlp_hidden"] = ckpt.encoder_cfg.mlp_hidden;
    enc["seed"] = ckpt.encoder_cfg.seed;
    j["encoder"] = std::move(enc);

    ordered_json tr;
    tr["lr"] = ckpt.train_cfg.lr;
    tr["batch_size"] = ckpt.train_cfg.batch_size;
    tr["epochs"] = ckpt.train_cfg.epochs;
    tr["n_g"] = ckpt.train_cfg.n_g;
    tr["n_h"] = ckpt.train_cfg.n_h;
    tr["n_visual"] = ckpt.train_cfg.n_visual;
    tr["beta"] = ckpt.train_cfg.beta;
    tr["lambda"] = ckpt.train_cfg.lambda;
    tr["logit_scale"] = ckpt.train_cfg.logit_scale;
    tr["seed"] = ckpt.train_cfg.seed;
    tr["mode"] = to_string(ckpt.train_cfg.mode);
    tr["reweight_strategy"] = to_string(ckpt.train_cfg.reweight_strategy);
    tr["use_high"] = ckpt.train_cfg.use_high;
    tr["use_low"] = ckpt.train_cfg.use_low;
    j["train"] = std::move(tr);

    j["dataset"] = ckpt.dataset_name;
    j["corpus"] = ckpt.corpus_path;

    ordered_json bundle;
    bundle["n_g"] = ckpt.bundle.n_g;
    bundle["n_h"] = ckpt.bundle.n_h;
    j["bundle"] = std::move(bundle);

    ordered_json params = ordered_json::array();
    for (const Parameter& p : ckpt.bundle.global_prompts) params.push_back(tensor_to_json(p));
    params.push_back(tensor_to_json(ckpt.bundle.gen_w));
    params.push_back(tensor_to_json(ckpt.bundle.gen_b));
    params.push_back(tensor_to_json(ckpt.bundle.adapter_w));
    params.push_back(tensor_to_json(ckpt.bundle.adapter_b));
    for (const Parameter& p : ckpt.bundle.visual_prompts) params.push_back(tensor_to_json(p));
    params.push_back(tensor_to_json(ckpt.bundle.lam_e2e));
    params.push_back(tensor_to_json(ckpt.bundle.lam_e2a));
    j["params"] = std::move(params);

    return j.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: invalid JSON: ") + e.what());
    }

    Checkpoint c;
    try {
        c.version = j.at("version").get<int>();
        if (c.version != 1)
            throw std::runtime_error("checkpoint: unsupported version " +
                                     std::to_string(c.version));

        const auto& enc = j.at("encoder");
        c.encoder_cfg.num_layers = enc.at("num_layers").get<int>();
        c.encoder_cfg.model_dim = enc.at("model_dim").get<int>();
        c.encoder_cfg.num_heads = enc.at("num_heads").get<int>();
        c.encoder_cfg.head_dim = enc.at("head_dim").get<int>();
        c.encoder_cfg.max_seq_len = enc.at("max_seq_len").get<int>();
        c.encoder_cfg.vocab_size = enc.at("vocab_size").get<int>();
        c.encoder_cfg.mlp_hidden = enc.at("mlp_hidden").get<int>();
        c.encoder_cfg.seed = enc.at("seed").get<uint64_t>();
        c.encoder_cfg.validate();

        const auto& tr = j.at("train");
        c.train_cfg.lr = tr.at("lr").get<double>();
        c.train_cfg.batch_size = tr.at("batch_size").get<int>();
        c.train_cfg.epochs = tr.at("epochs").get<int>();
        c.train_cfg.n_g = tr.at("n_g").get<int>();
        c.train_cfg.n_h = tr.at("n_h").get<int>();
        c.train_cfg.n_visual = tr.at("n_visual").get<int>();
        c.train_cfg.beta = tr.at("beta").get<double>();
        c.train_cfg.lambda = tr.at("lambda").get<double>();
        c.train_cfg.logit_scale = tr.at("logit_scale").get<double>();
        c.train_cfg.seed = tr.at("seed").get<uint64_t>();
        c.train_cfg.mode = train_mode_from_string(tr.at("mode").get<std::string>());
        c.train_cfg.reweight_strategy =
            attn_mod_mode_from_string(tr.at("reweight_strategy").get<std::string>());
        c.train_cfg.use_high = tr.at("use_high").get<bool>();
        c.train_cfg.use_low = tr.at("use_low").get<bool>();
        c.train_cfg.validate();

        c.dataset_name = j.at("dataset").get<std::string>();
        c.corpus_path = j.at("corpus").get<std::string>();

        c.bundle.n_g = j.at("bundle").at("n_g").get<int>();
        c.bundle.n_h = j.at("bundle").at("n_h").get<int>();

        const auto& params = j.at("params");
        if (!params.is_array()) throw std::runtime_error("checkpoint: params must be an array");
        const int N = c.encoder_cfg.num_layers;
        const size_t want = 2 * static_cast<size_t>(N) + 6;
        if (params.size() != want)
            throw std::runtime_error("checkpoint: expected " + std::to_string(want) +
                                     " parameter tensors, found " + std::to_string(params.size()));
        size_t at = 0;
        auto take = [&](const std::string& name, int rows, int cols) {
            Parameter p = tensor_from_json(params[at++]);
            if (p.name != name)
                throw std::runtime_error("checkpoint: expected parameter " + name + ", found " +
                                         p.name);
            if (rows >= 0 && (p.value.rows != rows || p.value.cols != cols))
                throw std::runtime_error("checkpoint: parameter " + name + " has shape " +
                                         std::to_string(p.value.rows) + "x" +
                                         std::to_string(p.value.cols) + ", expected " +
                                         std::to_string(rows) + "x" + std::to_string(cols));
            return p;
        };
        const int d = c.encoder_cfg.model_dim;
        for (int l = 0; l < N; ++l)
            c.bundle.global_prompts.push_back(
                take("p_g." + std::to_string(l), c.bundle.n_g, d));
        c.bundle.gen_w = take("f.w", d, d);
        c.bundle.gen_b = take("f.b", 1, d);
        c.bundle.adapter_w = take("phi.w", d, d);
        c.bundle.adapter_b = take("phi.b", 1, d);
        for (int l = 0; l < N; ++l)
            c.bundle.visual_prompts.push_back(
                take("p_v." + std::to_string(l), c.train_cfg.n_visual, d));
        c.bundle.lam_e2e = take("lam_e2e", 1, N);
        c.bundle.lam_e2a = take("lam_e2a", 1, N);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: missing or mistyped field: ") +
                                 e.what());
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    write_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json(read_file(path));
}

void save_loss_trace(const std::string& path, const std::vector<TraceEntry>& trace) {
    std::ostringstream out;
    for (const TraceEntry& e : trace) {
        ordered_json j;
        j["step"] = e.step;
        j["l_asy"] = e.loss.l_asy;
        j["l_c"] = e.loss.l_c;
        j["total"] = e.loss.total;
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

std::vector<TraceEntry> load_loss_trace(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<TraceEntry> trace;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
            TraceEntry e;
            e.step = j.at("step").get<int>();
            // non-finite losses serialize as null; read them back as NaN
            e.loss.l_asy = number_or_nan(j, "l_asy");
            e.loss.l_c = number_or_nan(j, "l_c");
            e.loss.total = number_or_nan(j, "total");
            trace.push_back(e);
        } catch (const nlohmann::json::exception& err) {
            throw std::runtime_error("loss trace line " + std::to_string(lineno) + ": " +
                                     err.what());
        }
    }
    return trace;
}

}  // namespace hpt
