#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "clinnum/autodiff.hpp"
#include "clinnum/corpus.hpp"
#include "clinnum/numtok.hpp"
#include "clinnum/tensor.hpp"

namespace clinnum::model {

struct ModelConfig {
    int dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_len = 128;   // maximum encoded length including [CLS]
    int vocab_size = 0;  // filled at init from the vocab
    bool lesa_enabled = true;
    bool xval_enabled = true;
    std::vector<int> lesa_layers = {0};
    // Alternate reading of the enhanced-attention equation: add the cosine
    // matrix to post-softmax probabilities instead of pre-softmax scores.
    bool cosim_post_softmax = false;

    void validate() const;  // dim % n_heads == 0, lesa_layers in range
};

// Named parameter tensors plus everything needed to run the model on raw
// text: vocab, per-class keyword lists and the derived label-averaging
// weights. The label embedding matrix itself is recomputed from the live
// token embeddings on every forward pass.
struct ModelParams {
    ModelConfig config;
    numtok::Vocab vocab;
    std::vector<std::vector<std::string>> label_keywords;  // one list per class
    std::map<std::string, Tensor> tensors;

    // n x vocab averaging weights: row c mixes the embeddings of class c's
    // keyword tokens (uniform over token instances).
    Tensor label_mix;

    const Tensor& tensor(const std::string& name) const;
};

// Fresh parameters with N(0, 0.02^2) weights, zero biases, unit LayerNorm
// gains. Throws DataError if any keyword has no in-vocab token.
ModelParams init_params(ModelConfig config, numtok::Vocab vocab,
                        std::vector<std::vector<std::string>> label_keywords, uint64_t seed);

// Current label embedding matrix X^l (n x D) = label_mix * token_table.
Tensor build_label_embeddings(const ModelParams& params);

// Per-layer attention record. CoSim has unit diagonal and entries in [-1,1].
struct AttentionTrace {
    std::vector<Tensor> self_attention;       // head-averaged post-softmax, per layer
    std::map<int, Tensor> label_attention;    // A^l per LESA layer (n x L+1)
    std::map<int, Tensor> cosim;              // per LESA layer ((L+1) x (L+1))
};

using ParamVars = std::map<std::string, Var>;

// Registers every parameter tensor as a tape leaf.
ParamVars make_leaves(Tape& tape, const ModelParams& params);

// Token + learned absolute position embeddings; when xval is enabled each
// row is scaled by its saved numeric value. Throws on sequences beyond
// max_len.
Var embed(Tape& tape, const ParamVars& pv, const numtok::TokenSequence& seq, const ModelConfig& config);

// LESA cross-attention for one layer: A^l = softmax(X^l Wq (X Wk)^T / sqrt(d_head)),
// column-normalized, CoSim = norm(A^l)^T norm(A^l).
Var lesa_cosim(Tape& tape, Var x, Var label_emb, Var wq, Var wk, const ModelConfig& config, Tensor* a_out = nullptr);

// Full encoder stack. `trace`, when non-null, receives per-layer attention
// and the LESA matrices.
Var forward(Tape& tape, const ParamVars& pv, const numtok::TokenSequence& seq, const ModelParams& params,
            AttentionTrace* trace = nullptr);

// Heads over selected hidden rows. `rows` indexes into the (L+1) hidden states.
Var head_lm(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows);        // (P x V) logits
Var head_num(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows);       // (P x 1), positive
Var head_classify(Tape& tape, const ParamVars& pv, Var hidden, const std::vector<int>& rows);  // (P x n)

// Inference helper: runs forward on a scratch tape and returns the hidden
// states by value.
Tensor forward_infer(const ModelParams& params, const numtok::TokenSequence& seq, AttentionTrace* trace = nullptr);

// Binary parameter container: config, vocab (tokens + hash), keywords and
// all named tensors. Bit-exact round trip.
void save_params(std::ostream& os, const ModelParams& params);
ModelParams load_params(std::istream& is);

// Serialization helpers shared with the checkpoint format.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

}  // namespace clinnum::model
