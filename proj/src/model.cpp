#include "clinnum/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "clinnum/errors.hpp"
#include "clinnum/rng.hpp"

namespace clinnum::model {

using nlohmann::json;

void ModelConfig::validate() const {
    if (dim <= 0 || n_layers <= 0 || n_heads <= 0 || max_len <= 1) throw ConfigError("model config: dimensions must be positive");
    if (dim % n_heads != 0) throw ConfigError("model config: dim must be divisible by n_heads");
    for (int l : lesa_layers)
        if (l < 0 || l >= n_layers) throw ConfigError("model config: lesa layer " + std::to_string(l) + " out of range");
}

const Tensor& ModelParams::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InvariantError("model: unknown parameter '" + name + "'");
    return it->second;
}

namespace {

Tensor normal_init(Rng& rng, std::vector<int64_t> shape, double std_dev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.next_normal() * std_dev;
    return t;
}

Tensor build_label_mix(const numtok::Vocab& vocab, const std::vector<std::vector<std::string>>& keywords) {
    const int n = static_cast<int>(keywords.size());
    Tensor mix({n, static_cast<int64_t>(vocab.size())});
    for (int c = 0; c < n; ++c) {
        std::vector<int> token_ids;
        for (const std::string& kw : keywords[static_cast<size_t>(c)]) {
            bool any = false;
            for (const std::string& tok : numtok::tokenize_words(kw)) {
                if (auto id = vocab.lookup(tok)) {
                    token_ids.push_back(*id);
                    any = true;
                }
            }
            if (!any)
                throw DataError("label embeddings: keyword '" + kw + "' of class " +
                                corpus::class_name(static_cast<corpus::ClassId>(c)) + " has no in-vocab token");
        }
        const double w = 1.0 / static_cast<double>(token_ids.size());
        for (int id : token_ids) mix.at(c, id) += w;
    }
    return mix;
}

}  // namespace

ModelParams init_params(ModelConfig config, numtok::Vocab vocab, std::vector<std::vector<std::string>> label_keywords,
                        uint64_t seed) {
    config.vocab_size = static_cast<int>(vocab.size());
    config.validate();
    if (label_keywords.size() != corpus::kNumClasses)
        throw DataError("init_params: expected " + std::to_string(corpus::kNumClasses) + " keyword lists");

    ModelParams p;
    p.config = config;
    p.vocab = std::move(vocab);
    p.label_keywords = std::move(label_keywords);
    p.label_mix = build_label_mix(p.vocab, p.label_keywords);

    Rng rng(seed, 0x10de1);
    const int64_t D = config.dim;
    const int64_t V = config.vocab_size;
    const double std_dev = 0.02;

    p.tensors["embed.tok"] = normal_init(rng, {V, D}, std_dev);
    p.tensors["embed.pos"] = normal_init(rng, {config.max_len, D}, std_dev);
    for (int l = 0; l < config.n_layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        p.tensors[pre + "wq"] = normal_init(rng, {D, D}, std_dev);
        p.tensors[pre + "wk"] = normal_init(rng, {D, D}, std_dev);
        p.tensors[pre + "wv"] = normal_init(rng, {D, D}, std_dev);
        p.tensors[pre + "wo"] = normal_init(rng, {D, D}, std_dev);
        p.tensors[pre + "bo"] = Tensor::zeros({D});
        p.tensors[pre + "ln1.g"] = Tensor::full({D}, 1.0);
        p.tensors[pre + "ln1.b"] = Tensor::zeros({D});
        p.tensors[pre + "ffn.w1"] = normal_init(rng, {D, 4 * D}, std_dev);
        p.tensors[pre + "ffn.b1"] = Tensor::zeros({4 * D});
        p.tensors[pre + "ffn.w2"] = normal_init(rng, {4 * D, D}, std_dev);
        p.tensors[pre + "ffn.b2"] = Tensor::zeros({D});
        p.tensors[pre + "ln2.g"] = Tensor::full({D}, 1.0);
        p.tensors[pre + "ln2.b"] = Tensor::zeros({D});
    }
    p.tensors["head.lm.w"] = normal_init(rng, {D, V}, std_dev);
    p.tensors["head.lm.b"] = Tensor::zeros({V});
    p.tensors["head.num.w"] = normal_init(rng, {D, 1}, std_dev);
    p.tensors["head.num.b"] = Tensor::zeros({1});
    p.tensors["head.cls.w"] = normal_init(rng, {D, corpus::kNumClasses}, std_dev);
    p.tensors["head.cls.b"] = Tensor::zeros({corpus::kNumClasses});
    // Trainable noise scales for the uncertainty-weighted loss, in log space.
    p.tensors["loss.log_sigma1"] = Tensor::zeros({1});
    p.tensors["loss.log_sigma2"] = Tensor::zeros({1});
    return p;
}

Tensor build_label_embeddings(const ModelParams& params) {
    return ops::matmul(params.label_mix, params.tensor("embed.tok"));
}

ParamVars make_leaves(Tape& tape, const ModelParams& params) {
    ParamVars pv;
    for (const auto& [name, t] : params.tensors) pv[name] = tape.leaf(t);
    return pv;
}

Var embed(Tape& tape, const ParamVars& pv, const numtok::TokenSequence& seq, const ModelConfig& config) {
    const int64_t L1 = static_cast<int64_t>(seq.ids.size());
    if (L1 > config.max_len)
        throw DataError("embed: sequence length " + std::to_string(L1) + " exceeds max_len " +
                        std::to_string(config.max_len));
    if (seq.values.size() != seq.ids.size()) throw InvariantError("embed: ids/values length mismatch");
    std::vector<int> pos_ids(static_cast<size_t>(L1));
    for (int64_t i = 0; i < L1; ++i) pos_ids[static_cast<size_t>(i)] = static_cast<int>(i);
    Var tok = tape.gather_rows(pv.at("embed.tok"), seq.ids);
    Var pos = tape.gather_rows(pv.at("embed.pos"), pos_ids);
    Var h = tape.add(tok, pos);
    if (config.xval_enabled) h = tape.scale_rows(h, seq.values);
    return h;
}

Var lesa_cosim(Tape& tape, Var x, Var label_emb, Var wq, Var wk, const ModelConfig& config, Tensor* a_out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim / config.n_heads));
    Var lq = tape.matmul(label_emb, wq);               // n x D
    Var xk = tape.matmul(x, wk);                       // L+1 x D
    Var scores = tape.scale(tape.matmul_nt(lq, xk), scale);
    Var a = tape.row_softmax(scores);                  // attention over tokens, per label
    if (a_out) *a_out = tape.value(a);
    Var n = tape.l2_normalize(a, /*axis=*/0);          // each token's label profile to unit norm
    return tape.matmul_tn(n, n);                       // (L+1) x (L+1)
}

Var forward(Tape& tape, const ParamVars& pv, const numtok::TokenSequence& seq, const ModelParams& params,
            AttentionTrace* trace) {
    const ModelConfig& config = params.config;
    Var x = embed(tape, pv, seq, config);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim / config.n_heads));

    Var label_emb;  // built lazily, shared across LESA layers
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const bool lesa_here = config.lesa_enabled &&
                               std::find(config.lesa_layers.begin(), config.lesa_layers.end(), l) != config.lesa_layers.end();
        Var cosim;
        if (lesa_here) {
            if (!label_emb.valid()) label_emb = tape.matmul(tape.constant(params.label_mix), pv.at("embed.tok"));
            Tensor a_trace;
            cosim = lesa_cosim(tape, x, label_emb, pv.at(pre + "wq"), pv.at(pre + "wk"), config,
                               trace ? &a_trace : nullptr);
            if (trace) {
                trace->label_attention[l] = std::move(a_trace);
                trace->cosim[l] = tape.value(cosim);
            }
        }
        Var q = tape.matmul(x, pv.at(pre + "wq"));
        Var k = tape.matmul(x, pv.at(pre + "wk"));
        Var v = tape.matmul(x, pv.at(pre + "wv"));
        Tensor probs;
        Var attn = tape.attention_core(q, k, v, config.n_heads, scale, cosim, config.cosim_post_softmax,
                                       trace ? &probs : nullptr);
        if (trace) trace->self_attention.push_back(std::move(probs));
        Var attn_out = tape.add_rowvec(tape.matmul(attn, pv.at(pre + "wo")), pv.at(pre + "bo"));
        x = tape.layer_norm(tape.add(x, attn_out), pv.at(pre + "ln1.g"), pv.at(pre + "ln1.b"));
        Var f1 = tape.gelu(tape.add_rowvec(tape.matmul(x, pv.at(pre + "ffn.w1")), pv.at(pre + "ffn.b1")));
        Var f2 = tape.add_rowvec(tape.matmul(f1, pv.at(pre + "ffn.w2")), pv.at(pre + "ffn.b2"));
        x = tape.layer_norm(tape.add(x, f2), pv.at(pre + "ln2.g"), pv.at(pre + "ln2.b"));
    }
    return x;
}

Var head_lm(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows) {
    Var h = tape.select_rows(hidden, rows);
    return tape.add_rowvec(tape.matmul(h, pv.at("head.lm.w")), pv.at("head.lm.b"));
}

Var head_num(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows) {
    Var h = tape.select_rows(hidden, rows);
    return tape.softplus(tape.add_rowvec(tape.matmul(h, pv.at("head.num.w")), pv.at("head.num.b")));
}

Var head_classify(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows) {
    Var h = tape.select_rows(hidden, rows);
    return tape.add_rowvec(tape.matmul(h, pv.at("head.cls.w")), pv.at("head.cls.b"));
}

Tensor forward_infer(const ModelParams& params, const numtok::TokenSequence& seq, AttentionTrace* trace) {
    Tape tape;
    ParamVars pv = make_leaves(tape, params);
    Var h = forward(tape, pv, seq, params, trace);
    return tape.value(h);
}

// --- serialization ----------------------------------------------------------

namespace {
constexpr uint32_t kMagic = 0x434c4e4d;  // "CLNM"
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated stream");
    return v;
}
}  // namespace

void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    uint64_t n = read_pod<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) write_pod<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
    uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = read_pod<int64_t>(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated tensor data");
    return t;
}

void save_params(std::ostream& os, const ModelParams& params) {
    write_pod<uint32_t>(os, kMagic);
    write_pod<uint32_t>(os, kVersion);
    json cfg = {{"dim", params.config.dim},
                {"n_layers", params.config.n_layers},
                {"n_heads", params.config.n_heads},
                {"max_len", params.config.max_len},
                {"vocab_size", params.config.vocab_size},
                {"lesa_enabled", params.config.lesa_enabled},
                {"xval_enabled", params.config.xval_enabled},
                {"lesa_layers", params.config.lesa_layers},
                {"cosim_post_softmax", params.config.cosim_post_softmax}};
    write_string(os, cfg.dump());
    write_pod<uint64_t>(os, params.vocab.content_hash());
    write_pod<uint64_t>(os, params.vocab.size());
    for (const auto& t : params.vocab.tokens()) write_string(os, t);
    write_pod<uint64_t>(os, params.label_keywords.size());
    for (const auto& kws : params.label_keywords) {
        write_pod<uint64_t>(os, kws.size());
        for (const auto& kw : kws) write_string(os, kw);
    }
    write_pod<uint64_t>(os, params.tensors.size());
    for (const auto& [name, t] : params.tensors) {
        write_string(os, name);
        write_tensor(os, t);
    }
}

ModelParams load_params(std::istream& is) {
    if (read_pod<uint32_t>(is) != kMagic) throw DataError("checkpoint: bad magic");
    if (read_pod<uint32_t>(is) != kVersion) throw DataError("checkpoint: unsupported version");
    json cfg = json::parse(read_string(is));
    ModelParams p;
    p.config.dim = cfg.at("dim").get<int>();
    p.config.n_layers = cfg.at("n_layers").get<int>();
    p.config.n_heads = cfg.at("n_heads").get<int>();
    p.config.max_len = cfg.at("max_len").get<int>();
    p.config.vocab_size = cfg.at("vocab_size").get<int>();
    p.config.lesa_enabled = cfg.at("lesa_enabled").get<bool>();
    p.config.xval_enabled = cfg.at("xval_enabled").get<bool>();
    p.config.lesa_layers = cfg.at("lesa_layers").get<std::vector<int>>();
    p.config.cosim_post_softmax = cfg.at("cosim_post_softmax").get<bool>();

    uint64_t vocab_hash = read_pod<uint64_t>(is);
    uint64_t vocab_size = read_pod<uint64_t>(is);
    std::vector<std::string> tokens;
    tokens.reserve(vocab_size);
    for (uint64_t i = 0; i < vocab_size; ++i) tokens.push_back(read_string(is));
    p.vocab = numtok::Vocab::from_tokens(std::move(tokens));
    if (p.vocab.content_hash() != vocab_hash) throw DataError("checkpoint: vocab hash mismatch");

    uint64_t n_classes = read_pod<uint64_t>(is);
    for (uint64_t c = 0; c < n_classes; ++c) {
        uint64_t n = read_pod<uint64_t>(is);
        std::vector<std::string> kws;
        for (uint64_t i = 0; i < n; ++i) kws.push_back(read_string(is));
        p.label_keywords.push_back(std::move(kws));
    }
    uint64_t n_tensors = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = read_string(is);
        p.tensors[name] = read_tensor(is);
    }
    p.label_mix = build_label_mix(p.vocab, p.label_keywords);
    return p;
}

}  // namespace clinnum::model
