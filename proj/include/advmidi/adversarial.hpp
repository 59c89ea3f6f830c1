#pragma once

#include <array>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "advmidi/nn/tensor.hpp"
#include "advmidi/tokenizer.hpp"

// Building blocks of adversarial mask selection: mask planning, the weighted
// recovery loss, dynamic attribute weights, masker targets and loss, and the
// freeze registry.
namespace advmidi {

// Percent-to-count conversion used everywhere: round half away from zero.
int percent_count(double percent, int n);

inline constexpr double kAccuracyFloor = 1e-3;

struct AttributeWeights {
    std::array<double, kNumAttributes> w;
    std::array<double, kNumAttributes> prev_accuracy;

    AttributeWeights() {
        w.fill(1.0 / kNumAttributes);
        prev_accuracy.fill(0.0);
    }
};

// w_j = (1/a_j) / sum_i (1/a_i), with each a_i floored at kAccuracyFloor.
AttributeWeights update_weights(const std::array<double, kNumAttributes>& accuracy);

struct MaskPlan {
    std::vector<int> chosen;               // ascending positions
    std::vector<int> replaced_with_mask;   // ascending, subset of chosen
    std::vector<int> replaced_with_random; // ascending, chosen minus replaced_with_mask
    std::vector<OctupleToken> originals;   // aligned with chosen
    std::vector<OctupleToken> random_tokens;  // aligned with replaced_with_random

    bool empty() const { return chosen.empty(); }
};

/// Chooses the top-k (k = round(p% of candidates), at least 1) real, unfrozen
/// positions by masking probability, ties to the lower index; round(0.8 k) of
/// them become MASK and the rest get uniform random real ids per attribute.
/// Returns nullopt when there is no candidate.
std::optional<MaskPlan> plan_masks(std::span<const double> mask_probs, const TokenWindow& window,
                                   const std::set<int>& frozen, double p, const Vocabulary& vocab,
                                   std::mt19937_64& rng);

/// Window with the plan's replacements applied.
TokenWindow apply_plan(const TokenWindow& window, const MaskPlan& plan);

struct RecoveryLoss {
    double total = 0.0;                                  // sum over chosen of L_i
    std::vector<double> per_token;                       // L_i aligned with plan.chosen
    std::array<double, kNumAttributes> accuracy{};       // argmax == original, per attribute
    std::array<int, kNumAttributes> correct{};
    std::array<nn::Matrix, kNumAttributes> d_logits;     // d total / d logits
};

/// L_i = sum_j w_j CE(logits_j[i], original_j), total = sum_i L_i. `logits[j]`
/// has one row per chosen position, in plan order.
RecoveryLoss recovery_loss(const std::array<nn::Matrix, kNumAttributes>& logits,
                           const std::vector<OctupleToken>& originals, const AttributeWeights& weights);

struct MaskerTargets {
    std::vector<int> ones;   // I_1: indices into the chosen set, highest losses
    std::vector<int> zeros;  // I_0: lowest losses
};

/// k = round(q% of m), capped at floor(m/2) so the sets stay disjoint. Ties
/// broken by lower index.
MaskerTargets masker_targets(std::span<const double> losses, double q);

/// sum_{I_0} p_i^2 + sum_{I_1} (p_i - 1)^2; `d_probs` (if non-empty, sized like
/// probs) receives the gradient. Indices index `probs` directly.
double masker_loss(std::span<const double> probs, std::span<const int> ones, std::span<const int> zeros,
                   std::span<double> d_probs = {});

enum class FreezePolicy {
    // After unfreezing, the frozen set becomes the top a% of the song among
    // tokens not released in this update, so its size stays at a% and it
    // follows the current masker (default).
    Refresh,
    // After unfreezing, the top a%-of-song-length of the unfrozen tokens
    // (including the ones just released) are added to the frozen set.
    Accumulate,
};

struct FreezeRegistry {
    std::map<std::string, std::set<int>> frozen;
    std::map<std::string, int> song_length;

    const std::set<int>& frozen_of(const std::string& song) const;
    std::size_t total_frozen() const;
    std::size_t total_tokens() const;
    double frozen_fraction() const;

    friend bool operator==(const FreezeRegistry&, const FreezeRegistry&) = default;
};

/// Per song: each frozen token is unfrozen with probability b/100, then the
/// tokens with the highest aggregated masking probabilities are frozen as the
/// policy describes. `song_probs` maps song id to one mean probability per
/// token.
void freeze_update(FreezeRegistry& registry, const std::map<std::string, std::vector<double>>& song_probs, double a,
                   double b, std::mt19937_64& rng, FreezePolicy policy = FreezePolicy::Refresh);

}  // namespace advmidi
