#include "advmidi/nn/model.hpp"

#include <cmath>

#include "advmidi/error.hpp"

namespace advmidi::nn {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.hidden = 768;
    c.layers = 12;
    c.heads = 12;
    c.inner = 3072;
    c.dropout = 0.1;
    c.max_len = 1024;
    return c;
}

void ModelConfig::validate() const {
    if (hidden <= 0 || hidden % kNumAttributes != 0)
        throw InvalidArgument("hidden size must be a positive multiple of 8");
    if (heads <= 0 || hidden % heads != 0) throw InvalidArgument("hidden size must be divisible by the head count");
    if (layers < 0 || inner <= 0 || max_len <= 0) throw InvalidArgument("invalid model dimensions");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
    if (n_seq_classes < 0 || n_tok_classes < 0) throw InvalidArgument("class counts must be >= 0");
}

namespace {

Matrix normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double stddev = 0.02) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

}  // namespace

Params Params::init(const ModelConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int H = cfg.hidden;
    Params p;
    // Token content and positions enter at comparable (unit) scale. Position
    // embeddings are learned but start from sinusoids so relative offsets are
    // linearly readable from the first step.
    for (int j = 0; j < kNumAttributes; ++j)
        p.attr_emb[static_cast<std::size_t>(j)] = normal(cfg.vocab.size(j), cfg.attr_dim(), rng, 1.0);
    p.w_in = normal(H, H, rng, 1.0 / std::sqrt(static_cast<double>(H)));
    p.b_in = zeros(1, H);
    p.pos_emb = Matrix(cfg.max_len, H);
    for (int pos = 0; pos < cfg.max_len; ++pos)
        for (int i = 0; i < H / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / H);
            p.pos_emb(pos, 2 * i) = std::sin(pos * freq);
            p.pos_emb(pos, 2 * i + 1) = std::cos(pos * freq);
        }
    p.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& l : p.layers) {
        l.ln1_g = ones(1, H);
        l.ln1_b = zeros(1, H);
        l.w_qkv = normal(H, 3 * H, rng);
        l.b_qkv = zeros(1, 3 * H);
        l.w_o = normal(H, H, rng);
        l.b_o = zeros(1, H);
        l.ln2_g = ones(1, H);
        l.ln2_b = zeros(1, H);
        l.w_ff1 = normal(H, cfg.inner, rng);
        l.b_ff1 = zeros(1, cfg.inner);
        l.w_ff2 = normal(cfg.inner, H, rng);
        l.b_ff2 = zeros(1, H);
    }
    p.lnf_g = ones(1, H);
    p.lnf_b = zeros(1, H);
    p.masker_w = normal(H, 1, rng);
    p.masker_b = zeros(1, 1);
    for (int j = 0; j < kNumAttributes; ++j) {
        p.rec_w[static_cast<std::size_t>(j)] = normal(H, cfg.vocab.size(j), rng);
        p.rec_b[static_cast<std::size_t>(j)] = zeros(1, cfg.vocab.size(j));
    }
    if (cfg.n_tok_classes > 0) {
        p.tok_w = normal(H, cfg.n_tok_classes, rng);
        p.tok_b = zeros(1, cfg.n_tok_classes);
    }
    if (cfg.n_seq_classes > 0) {
        p.seq_w = normal(H, cfg.n_seq_classes, rng);
        p.seq_b = zeros(1, cfg.n_seq_classes);
    }
    return p;
}

Params Params::zeros_like() const {
    Params z = *this;
    z.set_zero();
    return z;
}

void Params::set_zero() {
    visit([](const std::string&, Matrix& m) { m.setZero(); });
}

std::size_t Params::count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

bool Params::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

Group group_of(const std::string& name) {
    if (name.rfind("masker.", 0) == 0) return Group::Masker;
    if (name.rfind("recoverer.", 0) == 0) return Group::Recoverer;
    if (name.rfind("tok_cls.", 0) == 0) return Group::TokClassifier;
    if (name.rfind("seq_cls.", 0) == 0) return Group::SeqClassifier;
    return Group::Backbone;
}

Model::Model(ModelConfig cfg, Params params) : cfg_(std::move(cfg)), params_(std::move(params)) { cfg_.validate(); }

Model Model::create(const ModelConfig& cfg, std::mt19937_64& rng) { return Model(cfg, Params::init(cfg, rng)); }

void Model::ensure_seq_head(int n_classes, std::mt19937_64& rng) {
    if (n_classes <= 0) throw InvalidArgument("sequence head needs at least one class");
    if (params_.seq_w.cols() == n_classes && params_.seq_w.rows() == cfg_.hidden) return;
    params_.seq_w = normal(cfg_.hidden, n_classes, rng);
    params_.seq_b = zeros(1, n_classes);
    cfg_.n_seq_classes = n_classes;
}

void Model::ensure_tok_head(int n_classes, std::mt19937_64& rng) {
    if (n_classes <= 0) throw InvalidArgument("token head needs at least one class");
    if (params_.tok_w.cols() == n_classes && params_.tok_w.rows() == cfg_.hidden) return;
    params_.tok_w = normal(cfg_.hidden, n_classes, rng);
    params_.tok_b = zeros(1, n_classes);
    cfg_.n_tok_classes = n_classes;
}

Matrix Model::embed_concat(const TokenWindow& window) const {
    const int L = window.length();
    if (L > cfg_.max_len)
        throw InvalidArgument("window length " + std::to_string(L) + " exceeds model input length " +
                              std::to_string(cfg_.max_len));
    const int d = cfg_.attr_dim();
    Matrix concat(L, cfg_.hidden);
    for (int i = 0; i < L; ++i) {
        const auto& t = window.tokens[static_cast<std::size_t>(i)];
        for (int j = 0; j < kNumAttributes; ++j) {
            int id = t[j];
            if (id < 0 || id >= cfg_.vocab.size(j))
                throw InvalidArgument("position " + std::to_string(i) + ": attribute " +
                                      kAttrNames[static_cast<std::size_t>(j)] + " id " + std::to_string(id) +
                                      " outside vocabulary");
            concat.block(i, j * d, 1, d) = params_.attr_emb[static_cast<std::size_t>(j)].row(id);
        }
    }
    return concat;
}

Matrix Model::embed(const TokenWindow& window) const {
    Matrix x = linear(embed_concat(window), params_.w_in, params_.b_in);
    x += params_.pos_emb.topRows(window.length());
    return x;
}

Matrix Model::encode(const TokenWindow& window, Mode mode, std::mt19937_64* rng, EncoderCache* cache) const {
    const bool train = mode == Mode::Train && cfg_.dropout > 0.0;
    if (train && !rng) throw InvalidArgument("training-mode encode needs an rng for dropout");
    const int L = window.length();
    std::vector<std::uint8_t> key_mask = window.attn_mask;
    if (static_cast<int>(key_mask.size()) != L) throw InvalidArgument("attention mask length differs from window");

    Matrix concat = embed_concat(window);
    Matrix x = linear(concat, params_.w_in, params_.b_in);
    x += params_.pos_emb.topRows(L);
    Matrix emb_drop;
    if (train) {
        emb_drop = dropout_mask(L, cfg_.hidden, cfg_.dropout, *rng);
        apply_mask(x, emb_drop);
    }
    if (cache) {
        cache->tokens = window.tokens;
        cache->key_mask = key_mask;
        cache->concat = std::move(concat);
        cache->emb_drop = std::move(emb_drop);
        cache->layers.assign(params_.layers.size(), LayerCache{});
    }

    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
        const auto& p = params_.layers[l];
        LayerCache local;
        LayerCache& lc = cache ? cache->layers[l] : local;

        lc.a = layer_norm(x, p.ln1_g, p.ln1_b, &lc.ln1);
        lc.qkv = linear(lc.a, p.w_qkv, p.b_qkv);
        lc.ctx = attention(lc.qkv, cfg_.heads, key_mask, &lc.attn);
        Matrix o = linear(lc.ctx, p.w_o, p.b_o);
        if (train) {
            lc.attn_drop = dropout_mask(L, cfg_.hidden, cfg_.dropout, *rng);
            apply_mask(o, lc.attn_drop);
        }
        lc.x_mid = x + o;
        lc.c = layer_norm(lc.x_mid, p.ln2_g, p.ln2_b, &lc.ln2);
        lc.h_pre = linear(lc.c, p.w_ff1, p.b_ff1);
        lc.h_act = gelu(lc.h_pre);
        Matrix f = linear(lc.h_act, p.w_ff2, p.b_ff2);
        if (train) {
            lc.ffn_drop = dropout_mask(L, cfg_.hidden, cfg_.dropout, *rng);
            apply_mask(f, lc.ffn_drop);
        }
        x = lc.x_mid + f;
    }

    LayerNormCache lnf;
    Matrix hidden = layer_norm(x, params_.lnf_g, params_.lnf_b, cache ? &lnf : nullptr);
    if (cache) {
        cache->x_last = std::move(x);
        cache->lnf = std::move(lnf);
        cache->hidden = hidden;
    }
    return hidden;
}

void Model::backward(const EncoderCache& cache, const Matrix& d_hidden, Params& grads) const {
    Matrix dx = layer_norm_backward(d_hidden, cache.lnf, params_.lnf_g, grads.lnf_g, grads.lnf_b);

    for (std::size_t l = params_.layers.size(); l-- > 0;) {
        const auto& p = params_.layers[l];
        auto& g = grads.layers[l];
        const auto& lc = cache.layers[l];

        Matrix df = dx;
        apply_mask(df, lc.ffn_drop);
        Matrix dh_act = linear_backward(df, lc.h_act, p.w_ff2, g.w_ff2, g.b_ff2);
        Matrix dh_pre = gelu_backward(dh_act, lc.h_pre);
        Matrix dc = linear_backward(dh_pre, lc.c, p.w_ff1, g.w_ff1, g.b_ff1);
        Matrix dx_mid = dx + layer_norm_backward(dc, lc.ln2, p.ln2_g, g.ln2_g, g.ln2_b);

        Matrix d_o = dx_mid;
        apply_mask(d_o, lc.attn_drop);
        Matrix dctx = linear_backward(d_o, lc.ctx, p.w_o, g.w_o, g.b_o);
        Matrix dqkv = attention_backward(dctx, lc.qkv, cfg_.heads, lc.attn);
        Matrix da = linear_backward(dqkv, lc.a, p.w_qkv, g.w_qkv, g.b_qkv);
        dx = dx_mid + layer_norm_backward(da, lc.ln1, p.ln1_g, g.ln1_g, g.ln1_b);
    }

    apply_mask(dx, cache.emb_drop);
    const auto L = dx.rows();
    grads.pos_emb.topRows(L) += dx;
    Matrix dconcat = linear_backward(dx, cache.concat, params_.w_in, grads.w_in, grads.b_in);
    const int d = cfg_.attr_dim();
    for (Eigen::Index i = 0; i < L; ++i) {
        const auto& t = cache.tokens[static_cast<std::size_t>(i)];
        for (int j = 0; j < kNumAttributes; ++j)
            grads.attr_emb[static_cast<std::size_t>(j)].row(t[j]) += dconcat.block(i, j * d, 1, d);
    }
}

Vector Model::masker_head(const Matrix& hidden) const {
    Vector logits = (hidden * params_.masker_w).col(0).array() + params_.masker_b(0, 0);
    return logits.unaryExpr([](double v) { return sigmoid(v); });
}

void Model::masker_backward(const Matrix& hidden, const Vector& probs, const Vector& d_probs, Params& grads,
                            Matrix* d_hidden) const {
    Vector d_logit = d_probs.array() * probs.array() * (1.0 - probs.array());
    grads.masker_w.col(0).noalias() += hidden.transpose() * d_logit;
    grads.masker_b(0, 0) += d_logit.sum();
    if (d_hidden) d_hidden->noalias() += d_logit * params_.masker_w.col(0).transpose();
}

std::array<Matrix, kNumAttributes> Model::recoverer_head(const Matrix& hidden) const {
    std::array<Matrix, kNumAttributes> out;
    for (int j = 0; j < kNumAttributes; ++j)
        out[static_cast<std::size_t>(j)] = linear(hidden, params_.rec_w[static_cast<std::size_t>(j)], params_.rec_b[static_cast<std::size_t>(j)]);
    return out;
}

namespace {
Matrix gather_rows(const Matrix& m, std::span<const int> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
    return out;
}
}  // namespace

std::array<Matrix, kNumAttributes> Model::recoverer_head(const Matrix& hidden, std::span<const int> rows) const {
    Matrix h = gather_rows(hidden, rows);
    std::array<Matrix, kNumAttributes> out;
    for (int j = 0; j < kNumAttributes; ++j)
        out[static_cast<std::size_t>(j)] = linear(h, params_.rec_w[static_cast<std::size_t>(j)], params_.rec_b[static_cast<std::size_t>(j)]);
    return out;
}

void Model::recoverer_backward(const Matrix& hidden, std::span<const int> rows,
                               const std::array<Matrix, kNumAttributes>& d_logits, Params& grads,
                               Matrix* d_hidden) const {
    Matrix h = gather_rows(hidden, rows);
    Matrix dh = Matrix::Zero(h.rows(), h.cols());
    for (int j = 0; j < kNumAttributes; ++j) {
        auto ju = static_cast<std::size_t>(j);
        if (d_hidden)
            dh += linear_backward(d_logits[ju], h, params_.rec_w[ju], grads.rec_w[ju], grads.rec_b[ju]);
        else
            linear_backward_params(d_logits[ju], h, grads.rec_w[ju], grads.rec_b[ju]);
    }
    if (d_hidden)
        for (std::size_t r = 0; r < rows.size(); ++r) d_hidden->row(rows[r]) += dh.row(static_cast<Eigen::Index>(r));
}

Matrix Model::tok_classifier(const Matrix& hidden) const {
    if (params_.tok_w.size() == 0) throw InvalidArgument("model has no token classifier head");
    return linear(hidden, params_.tok_w, params_.tok_b);
}

void Model::tok_classifier_backward(const Matrix& hidden, const Matrix& d_logits, Params& grads,
                                    Matrix* d_hidden) const {
    if (d_hidden)
        *d_hidden += linear_backward(d_logits, hidden, params_.tok_w, grads.tok_w, grads.tok_b);
    else
        linear_backward_params(d_logits, hidden, grads.tok_w, grads.tok_b);
}

namespace {
RowVector mean_pool(const Matrix& hidden, std::span<const std::uint8_t> attn_mask) {
    RowVector pooled = RowVector::Zero(hidden.cols());
    int n = 0;
    for (std::size_t i = 0; i < attn_mask.size(); ++i) {
        if (!attn_mask[i]) continue;
        pooled += hidden.row(static_cast<Eigen::Index>(i));
        ++n;
    }
    if (n == 0) throw InvalidArgument("sequence classifier needs at least one real token");
    return pooled / n;
}
}  // namespace

RowVector Model::seq_classifier(const Matrix& hidden, std::span<const std::uint8_t> attn_mask) const {
    if (params_.seq_w.size() == 0) throw InvalidArgument("model has no sequence classifier head");
    RowVector pooled = mean_pool(hidden, attn_mask);
    return pooled * params_.seq_w + params_.seq_b.row(0);
}

void Model::seq_classifier_backward(const Matrix& hidden, std::span<const std::uint8_t> attn_mask,
                                    const RowVector& d_logits, Params& grads, Matrix* d_hidden) const {
    RowVector pooled = mean_pool(hidden, attn_mask);
    grads.seq_w.noalias() += pooled.transpose() * d_logits;
    grads.seq_b.row(0) += d_logits;
    if (!d_hidden) return;
    int n = 0;
    for (auto m : attn_mask) n += m ? 1 : 0;
    RowVector d_pooled = (d_logits * params_.seq_w.transpose()) / n;
    for (std::size_t i = 0; i < attn_mask.size(); ++i)
        if (attn_mask[i]) d_hidden->row(static_cast<Eigen::Index>(i)) += d_pooled;
}

}  // namespace advmidi::nn
