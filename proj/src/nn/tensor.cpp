#include "advmidi/nn/tensor.hpp"

#include <cmath>
#include <limits>

namespace advmidi::nn {

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, LayerNormCache* cache) {
    const Eigen::Index n = x.rows();
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    Matrix xhat(n, x.cols());
    Vector rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mean = x.row(i).sum() * inv_d;
        auto centered = x.row(i).array() - mean;
        double var = centered.square().sum() * inv_d;
        rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(i) = centered * rstd(i);
    }
    Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gamma, Matrix& dgamma,
                           Matrix& dbeta) {
    dgamma.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbeta.row(0) += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
    const double inv_d = 1.0 / static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        double mean_d = dxhat.row(i).sum() * inv_d;
        double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) * inv_d;
        dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
    }
    return dx;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b.row(0);
    return y;
}

void linear_backward_params(const Matrix& dy, const Matrix& x, Matrix& dw, Matrix& db) {
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
}

Matrix linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, Matrix& dw, Matrix& db) {
    linear_backward_params(dy, x, dw, db);
    Matrix dx(dy.rows(), w.rows());
    dx.noalias() = dy * w.transpose();
    return dx;
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(const Matrix& dy, const Matrix& x) {
    static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Matrix d = x.unaryExpr([](double v) {
        double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
    });
    return dy.cwiseProduct(d);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return {};
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    Matrix mask(rows, cols);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
    return mask;
}

void apply_mask(Matrix& x, const Matrix& mask) {
    if (mask.size() == 0) return;
    x.array() *= mask.array();
}

Matrix attention(const Matrix& qkv, int heads, std::span<const std::uint8_t> key_mask, AttentionCache* cache) {
    const Eigen::Index L = qkv.rows();
    const Eigen::Index H = qkv.cols() / 3;
    const Eigen::Index dh = H / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    bool any_key = false;
    for (auto m : key_mask) any_key = any_key || m;

    Matrix ctx = Matrix::Zero(L, H);
    if (cache) cache->probs.assign(static_cast<std::size_t>(heads), Matrix());
    for (int h = 0; h < heads; ++h) {
        auto q = qkv.middleCols(h * dh, dh);
        auto k = qkv.middleCols(H + h * dh, dh);
        auto v = qkv.middleCols(2 * H + h * dh, dh);
        Matrix scores(L, L);
        scores.noalias() = q * k.transpose();
        scores *= scale;
        Matrix probs = Matrix::Zero(L, L);
        if (any_key) {
            for (Eigen::Index i = 0; i < L; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < L; ++j)
                    if (key_mask[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(i, j));
                double sum = 0.0;
                for (Eigen::Index j = 0; j < L; ++j) {
                    if (!key_mask[static_cast<std::size_t>(j)]) continue;
                    double e = std::exp(scores(i, j) - mx);
                    probs(i, j) = e;
                    sum += e;
                }
                probs.row(i) /= sum;
            }
        }
        ctx.middleCols(h * dh, dh).noalias() = probs * v;
        if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(probs);
    }
    return ctx;
}

Matrix attention_backward(const Matrix& dctx, const Matrix& qkv, int heads, const AttentionCache& cache) {
    const Eigen::Index L = qkv.rows();
    const Eigen::Index H = qkv.cols() / 3;
    const Eigen::Index dh = H / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dqkv(L, 3 * H);
    for (int h = 0; h < heads; ++h) {
        const Matrix& p = cache.probs[static_cast<std::size_t>(h)];
        auto q = qkv.middleCols(h * dh, dh);
        auto k = qkv.middleCols(H + h * dh, dh);
        auto v = qkv.middleCols(2 * H + h * dh, dh);
        auto dout = dctx.middleCols(h * dh, dh);

        Matrix dp(L, L);
        dp.noalias() = dout * v.transpose();
        dqkv.middleCols(2 * H + h * dh, dh).noalias() = p.transpose() * dout;
        // softmax backward: ds = p * (dp - rowsum(dp * p))
        Vector row_dot = (dp.array() * p.array()).rowwise().sum();
        Matrix ds = p.array() * (dp.array().colwise() - row_dot.array());
        ds *= scale;
        dqkv.middleCols(h * dh, dh).noalias() = ds * k;
        dqkv.middleCols(H + h * dh, dh).noalias() = ds.transpose() * q;
    }
    return dqkv;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double cross_entropy(std::span<const double> logits, int target, double scale, std::span<double> grad) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double log_z = mx + std::log(sum);
    if (!grad.empty()) {
        for (std::size_t c = 0; c < logits.size(); ++c) grad[c] += scale * std::exp(logits[c] - log_z);
        grad[static_cast<std::size_t>(target)] -= scale;
    }
    return log_z - logits[static_cast<std::size_t>(target)];
}

int argmax(std::span<const double> row) {
    int best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

}  // namespace advmidi::nn
