#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "advmidi/nn/tensor.hpp"
#include "advmidi/tokenizer.hpp"

namespace advmidi::nn {

struct ModelConfig {
    int hidden = 64;
    int layers = 2;
    int heads = 4;
    int inner = 256;
    double dropout = 0.0;
    int max_len = 128;
    Vocabulary vocab = Vocabulary::standard();
    int n_seq_classes = 0;  // 0 = no sequence head
    int n_tok_classes = 0;  // 0 = no token head

    static ModelConfig desk();
    static ModelConfig paper();
    // Throws InvalidArgument when hidden is not divisible by 8 and by heads.
    void validate() const;
    int attr_dim() const { return hidden / kNumAttributes; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
    Matrix ln1_g, ln1_b;
    Matrix w_qkv, b_qkv;
    Matrix w_o, b_o;
    Matrix ln2_g, ln2_b;
    Matrix w_ff1, b_ff1;
    Matrix w_ff2, b_ff2;
};

// All trainable arrays. Gradients use the same structure. Biases and
// layer-norm parameters are 1 x N.
struct Params {
    std::array<Matrix, kNumAttributes> attr_emb;
    Matrix w_in, b_in;
    Matrix pos_emb;
    std::vector<LayerParams> layers;
    Matrix lnf_g, lnf_b;

    Matrix masker_w, masker_b;
    std::array<Matrix, kNumAttributes> rec_w, rec_b;
    Matrix tok_w, tok_b;
    Matrix seq_w, seq_b;

    static Params init(const ModelConfig& cfg, std::mt19937_64& rng);
    Params zeros_like() const;
    void set_zero();

    // Visits every parameter with its stable dotted name, e.g.
    // "backbone.layer0.attn.w_qkv", "masker.w", "recoverer.3.b", "seq_cls.w".
    template <class F>
    void visit(F&& f);
    template <class F>
    void visit(F&& f) const;

    std::size_t count() const;
    bool all_finite() const;
};

// Parameter ownership groups.
enum class Group { Backbone, Masker, Recoverer, TokClassifier, SeqClassifier };
Group group_of(const std::string& param_name);

enum class Mode { Eval, Train };

struct LayerCache {
    LayerNormCache ln1;
    Matrix a;    // ln1 output
    Matrix qkv;
    AttentionCache attn;
    Matrix ctx;
    Matrix attn_drop;
    Matrix x_mid;
    LayerNormCache ln2;
    Matrix c;    // ln2 output
    Matrix h_pre;
    Matrix h_act;
    Matrix ffn_drop;
};

struct EncoderCache {
    std::vector<OctupleToken> tokens;
    std::vector<std::uint8_t> key_mask;
    Matrix concat;
    Matrix emb_drop;
    std::vector<LayerCache> layers;
    Matrix x_last;
    LayerNormCache lnf;
    Matrix hidden;
};

class Model {
public:
    Model() = default;
    Model(ModelConfig cfg, Params params);
    static Model create(const ModelConfig& cfg, std::mt19937_64& rng);

    const ModelConfig& config() const { return cfg_; }
    Params& params() { return params_; }
    const Params& params() const { return params_; }

    // Adds the sequence / token classifier heads (fresh init) if absent or if
    // the class count differs.
    void ensure_seq_head(int n_classes, std::mt19937_64& rng);
    void ensure_tok_head(int n_classes, std::mt19937_64& rng);

    /// Concatenated attribute embeddings -> input projection -> + position
    /// embedding. No dropout. L x hidden.
    Matrix embed(const TokenWindow& window) const;

    /// Pre-LN transformer encoder over the window. Dropout is applied only in
    /// Train mode (rng required). When `cache` is non-null it receives what
    /// backward() needs.
    Matrix encode(const TokenWindow& window, Mode mode, std::mt19937_64* rng, EncoderCache* cache) const;

    /// Accumulates backbone gradients for d(loss)/d(hidden) into grads.
    void backward(const EncoderCache& cache, const Matrix& d_hidden, Params& grads) const;

    // Heads.
    Vector masker_head(const Matrix& hidden) const;
    void masker_backward(const Matrix& hidden, const Vector& probs, const Vector& d_probs, Params& grads,
                         Matrix* d_hidden) const;

    std::array<Matrix, kNumAttributes> recoverer_head(const Matrix& hidden) const;
    // Logits for the given rows only (row r of the result is position rows[r]).
    std::array<Matrix, kNumAttributes> recoverer_head(const Matrix& hidden, std::span<const int> rows) const;
    void recoverer_backward(const Matrix& hidden, std::span<const int> rows,
                            const std::array<Matrix, kNumAttributes>& d_logits, Params& grads,
                            Matrix* d_hidden) const;

    Matrix tok_classifier(const Matrix& hidden) const;
    void tok_classifier_backward(const Matrix& hidden, const Matrix& d_logits, Params& grads, Matrix* d_hidden) const;

    // Mean-pool over real positions then linear. Throws InvalidArgument when the
    // window has no real token.
    RowVector seq_classifier(const Matrix& hidden, std::span<const std::uint8_t> attn_mask) const;
    void seq_classifier_backward(const Matrix& hidden, std::span<const std::uint8_t> attn_mask,
                                 const RowVector& d_logits, Params& grads, Matrix* d_hidden) const;

private:
    Matrix embed_concat(const TokenWindow& window) const;

    ModelConfig cfg_;
    Params params_;
};

template <class F>
void Params::visit(F&& f) {
    for (int j = 0; j < kNumAttributes; ++j) f("backbone.attr_emb." + std::to_string(j), attr_emb[static_cast<std::size_t>(j)]);
    f("backbone.input_proj.w", w_in);
    f("backbone.input_proj.b", b_in);
    f("backbone.pos_emb", pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& p = layers[l];
        const std::string pre = "backbone.layer" + std::to_string(l) + ".";
        f(pre + "ln1.g", p.ln1_g);
        f(pre + "ln1.b", p.ln1_b);
        f(pre + "attn.w_qkv", p.w_qkv);
        f(pre + "attn.b_qkv", p.b_qkv);
        f(pre + "attn.w_o", p.w_o);
        f(pre + "attn.b_o", p.b_o);
        f(pre + "ln2.g", p.ln2_g);
        f(pre + "ln2.b", p.ln2_b);
        f(pre + "ffn.w1", p.w_ff1);
        f(pre + "ffn.b1", p.b_ff1);
        f(pre + "ffn.w2", p.w_ff2);
        f(pre + "ffn.b2", p.b_ff2);
    }
    f("backbone.final_ln.g", lnf_g);
    f("backbone.final_ln.b", lnf_b);
    f("masker.w", masker_w);
    f("masker.b", masker_b);
    for (int j = 0; j < kNumAttributes; ++j) {
        f("recoverer." + std::to_string(j) + ".w", rec_w[static_cast<std::size_t>(j)]);
        f("recoverer." + std::to_string(j) + ".b", rec_b[static_cast<std::size_t>(j)]);
    }
    if (tok_w.size()) {
        f("tok_cls.w", tok_w);
        f("tok_cls.b", tok_b);
    }
    if (seq_w.size()) {
        f("seq_cls.w", seq_w);
        f("seq_cls.b", seq_b);
    }
}

template <class F>
void Params::visit(F&& f) const {
    const_cast<Params*>(this)->visit([&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
}

}  // namespace advmidi::nn
