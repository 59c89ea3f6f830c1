#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace advmidi::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Differentiable primitives. Each forward returns what its backward needs;
// every backward accumulates into the gradient arguments (+=).

struct LayerNormCache {
    Matrix xhat;
    Vector rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, LayerNormCache* cache);
// Returns dx; accumulates dgamma/dbeta.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gamma, Matrix& dgamma,
                           Matrix& dbeta);

// y = x W + b (b is 1 x out).
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);
// Returns dx; accumulates dw/db.
Matrix linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, Matrix& dw, Matrix& db);
// Same, without computing dx.
void linear_backward_params(const Matrix& dy, const Matrix& x, Matrix& dw, Matrix& db);

// Exact (erf) GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& dy, const Matrix& x);

// Inverted dropout: returns a mask of {0, 1/(1-p)} or an empty matrix when
// p == 0 (identity).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng);
void apply_mask(Matrix& x, const Matrix& mask);

// Multi-head self-attention core: softmax(Q K^T / sqrt(d)) V per head, with
// keys where key_mask == 0 receiving zero weight. Rows with no valid key
// produce zeros.
struct AttentionCache {
    std::vector<Matrix> probs;  // one L x L per head
};
Matrix attention(const Matrix& qkv, int heads, std::span<const std::uint8_t> key_mask, AttentionCache* cache);
// Returns d(qkv).
Matrix attention_backward(const Matrix& dctx, const Matrix& qkv, int heads, const AttentionCache& cache);

double sigmoid(double x);

// Softmax cross-entropy for one row of logits. When `grad` is non-empty it
// receives scale * d(loss)/d(logits) (accumulated).
double cross_entropy(std::span<const double> logits, int target, double scale = 1.0, std::span<double> grad = {});

int argmax(std::span<const double> row);

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}
inline std::span<double> row_span(Matrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace advmidi::nn
