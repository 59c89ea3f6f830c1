#include "advmidi/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advmidi/error.hpp"

namespace advmidi {

int percent_count(double percent, int n) { return static_cast<int>(std::lround(percent * n / 100.0)); }

AttributeWeights update_weights(const std::array<double, kNumAttributes>& accuracy) {
    AttributeWeights out;
    double denom = 0.0;
    std::array<double, kNumAttributes> inv{};
    for (int j = 0; j < kNumAttributes; ++j) {
        auto ju = static_cast<std::size_t>(j);
        double a = std::clamp(accuracy[ju], 0.0, 1.0);
        out.prev_accuracy[ju] = a;
        inv[ju] = 1.0 / std::max(a, kAccuracyFloor);
        denom += inv[ju];
    }
    for (std::size_t j = 0; j < inv.size(); ++j) out.w[j] = inv[j] / denom;
    return out;
}

namespace {

// Indices sorted by value descending (ascending when `descending` is false),
// ties by lower index.
std::vector<int> ranked(std::span<const double> values, std::span<const int> among, bool descending) {
    std::vector<int> idx(among.begin(), among.end());
    std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
        double vx = values[static_cast<std::size_t>(x)], vy = values[static_cast<std::size_t>(y)];
        return descending ? vx > vy : vx < vy;
    });
    return idx;
}

}  // namespace

std::optional<MaskPlan> plan_masks(std::span<const double> mask_probs, const TokenWindow& window,
                                   const std::set<int>& frozen, double p, const Vocabulary& vocab,
                                   std::mt19937_64& rng) {
    if (!(p > 0.0 && p <= 100.0)) throw InvalidArgument("mask percentage must be in (0, 100]");
    if (mask_probs.size() != window.attn_mask.size()) throw InvalidArgument("mask probabilities must cover the window");

    std::vector<int> candidates;
    for (int i = 0; i < window.length(); ++i)
        if (window.attn_mask[static_cast<std::size_t>(i)] && !frozen.count(i)) candidates.push_back(i);
    if (candidates.empty()) return std::nullopt;

    int k = std::max(1, percent_count(p, static_cast<int>(candidates.size())));
    k = std::min<int>(k, static_cast<int>(candidates.size()));
    std::vector<int> order = ranked(mask_probs, candidates, true);

    MaskPlan plan;
    plan.chosen.assign(order.begin(), order.begin() + k);
    std::sort(plan.chosen.begin(), plan.chosen.end());
    for (int pos : plan.chosen) plan.originals.push_back(window.tokens[static_cast<std::size_t>(pos)]);

    const int n_mask = static_cast<int>(std::lround(0.8 * k));
    std::vector<int> shuffled = plan.chosen;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    plan.replaced_with_mask.assign(shuffled.begin(), shuffled.begin() + n_mask);
    plan.replaced_with_random.assign(shuffled.begin() + n_mask, shuffled.end());
    std::sort(plan.replaced_with_mask.begin(), plan.replaced_with_mask.end());
    std::sort(plan.replaced_with_random.begin(), plan.replaced_with_random.end());

    for (std::size_t r = 0; r < plan.replaced_with_random.size(); ++r) {
        OctupleToken t;
        for (int j = 0; j < kNumAttributes; ++j) {
            std::uniform_int_distribution<int> dist(kFirstRealId, vocab.size(j) - 1);
            t[j] = dist(rng);
        }
        plan.random_tokens.push_back(t);
    }
    return plan;
}

TokenWindow apply_plan(const TokenWindow& window, const MaskPlan& plan) {
    TokenWindow out = window;
    for (int pos : plan.replaced_with_mask) out.tokens[static_cast<std::size_t>(pos)] = OctupleToken::mask();
    for (std::size_t r = 0; r < plan.replaced_with_random.size(); ++r)
        out.tokens[static_cast<std::size_t>(plan.replaced_with_random[r])] = plan.random_tokens[r];
    return out;
}

RecoveryLoss recovery_loss(const std::array<nn::Matrix, kNumAttributes>& logits,
                           const std::vector<OctupleToken>& originals, const AttributeWeights& weights) {
    const auto m = static_cast<Eigen::Index>(originals.size());
    RecoveryLoss out;
    out.per_token.assign(originals.size(), 0.0);
    for (int j = 0; j < kNumAttributes; ++j) {
        auto ju = static_cast<std::size_t>(j);
        const nn::Matrix& lj = logits[ju];
        if (lj.rows() != m) throw InvalidArgument("recovery logits must have one row per chosen token");
        out.d_logits[ju] = nn::Matrix::Zero(lj.rows(), lj.cols());
        for (Eigen::Index i = 0; i < m; ++i) {
            int target = originals[static_cast<std::size_t>(i)][j];
            double ce = nn::cross_entropy(nn::row_span(lj, i), target, weights.w[ju], nn::row_span(out.d_logits[ju], i));
            out.per_token[static_cast<std::size_t>(i)] += weights.w[ju] * ce;
            if (nn::argmax(nn::row_span(lj, i)) == target) ++out.correct[ju];
        }
        out.accuracy[ju] = m ? static_cast<double>(out.correct[ju]) / static_cast<double>(m) : 0.0;
    }
    out.total = std::accumulate(out.per_token.begin(), out.per_token.end(), 0.0);
    return out;
}

MaskerTargets masker_targets(std::span<const double> losses, double q) {
    if (!(q > 0.0 && q <= 50.0)) throw InvalidArgument("masker target percentage must be in (0, 50]");
    MaskerTargets out;
    const int m = static_cast<int>(losses.size());
    if (m == 0) return out;
    const int k = std::min(percent_count(q, m), m / 2);
    if (k == 0) return out;
    std::vector<int> all(static_cast<std::size_t>(m));
    std::iota(all.begin(), all.end(), 0);
    auto high = ranked(losses, all, true);
    auto low = ranked(losses, all, false);
    out.ones.assign(high.begin(), high.begin() + k);
    // Tied losses could land in both sets; I_0 skips what I_1 already took.
    const std::set<int> taken(out.ones.begin(), out.ones.end());
    for (int i : low) {
        if (static_cast<int>(out.zeros.size()) == k) break;
        if (!taken.count(i)) out.zeros.push_back(i);
    }
    std::sort(out.ones.begin(), out.ones.end());
    std::sort(out.zeros.begin(), out.zeros.end());
    return out;
}

double masker_loss(std::span<const double> probs, std::span<const int> ones, std::span<const int> zeros,
                   std::span<double> d_probs) {
    double loss = 0.0;
    for (int i : zeros) {
        double pi = probs[static_cast<std::size_t>(i)];
        loss += pi * pi;
        if (!d_probs.empty()) d_probs[static_cast<std::size_t>(i)] += 2.0 * pi;
    }
    for (int i : ones) {
        double pi = probs[static_cast<std::size_t>(i)];
        loss += (pi - 1.0) * (pi - 1.0);
        if (!d_probs.empty()) d_probs[static_cast<std::size_t>(i)] += 2.0 * (pi - 1.0);
    }
    return loss;
}

const std::set<int>& FreezeRegistry::frozen_of(const std::string& song) const {
    static const std::set<int> empty;
    auto it = frozen.find(song);
    return it == frozen.end() ? empty : it->second;
}

std::size_t FreezeRegistry::total_frozen() const {
    std::size_t n = 0;
    for (const auto& [_, s] : frozen) n += s.size();
    return n;
}

std::size_t FreezeRegistry::total_tokens() const {
    std::size_t n = 0;
    for (const auto& [_, len] : song_length) n += static_cast<std::size_t>(len);
    return n;
}

double FreezeRegistry::frozen_fraction() const {
    auto total = total_tokens();
    return total ? static_cast<double>(total_frozen()) / static_cast<double>(total) : 0.0;
}

void freeze_update(FreezeRegistry& registry, const std::map<std::string, std::vector<double>>& song_probs, double a,
                   double b, std::mt19937_64& rng, FreezePolicy policy) {
    if (a < 0.0 || a > 100.0 || b < 0.0 || b > 100.0) throw InvalidArgument("freeze percentages must be in [0, 100]");
    std::bernoulli_distribution unfreeze(b / 100.0);
    for (const auto& [song, probs] : song_probs) {
        const int len = static_cast<int>(probs.size());
        registry.song_length[song] = len;
        auto& frozen = registry.frozen[song];

        std::set<int> released;
        if (b > 0.0) {
            for (auto it = frozen.begin(); it != frozen.end();) {
                if (unfreeze(rng)) {
                    released.insert(*it);
                    it = frozen.erase(it);
                } else {
                    ++it;
                }
            }
        }

        const int target = percent_count(a, len);
        std::vector<int> eligible;
        if (policy == FreezePolicy::Refresh) {
            for (int i = 0; i < len; ++i)
                if (!released.count(i)) eligible.push_back(i);
            auto order = ranked(probs, eligible, true);
            frozen.clear();
            frozen.insert(order.begin(), order.begin() + std::min<int>(target, static_cast<int>(order.size())));
        } else {
            for (int i = 0; i < len; ++i)
                if (!frozen.count(i)) eligible.push_back(i);
            auto order = ranked(probs, eligible, true);
            frozen.insert(order.begin(), order.begin() + std::min<int>(target, static_cast<int>(order.size())));
        }
    }
}

}  // namespace advmidi
