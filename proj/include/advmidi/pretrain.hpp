#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "advmidi/adversarial.hpp"
#include "advmidi/checkpoint.hpp"
#include "advmidi/nn/adamw.hpp"
#include "advmidi/nn/model.hpp"

namespace advmidi {

struct PretrainConfig {
    double p = 15.0;  // mask percentage of candidates
    double q = 30.0;  // masker target percentage of the masked set
    double a = 30.0;  // freeze percentage per song
    double b = 10.0;  // unfreeze percentage
    int k = 15;       // epochs per freeze cycle
    int batch_size = 8;
    double lr = 1e-4;
    double masker_lr = 1e-4;
    double weight_decay = 0.01;
    bool augment = true;
    bool shared_backbone = false;
    FreezePolicy freeze_policy = FreezePolicy::Refresh;

    void validate() const;
};

nlohmann::json pretrain_config_to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct EpochMetrics {
    int epoch = 0;  // 1-based
    std::array<double, kNumAttributes> accuracy{};
    double mean_token_loss = 0.0;
    double masker_loss = 0.0;  // mean per masker step that had targets
    double frozen_fraction = 0.0;
    bool froze = false;
    long chosen_tokens = 0;
    int skipped_windows = 0;
    AttributeWeights weights;  // after this epoch's update

    nlohmann::json to_json() const;
};

/// Owns the model, both optimizers, the attribute weights, the freeze registry
/// and the RNG. One call to run_epoch() is one pass over the corpus.
class Pretrainer {
public:
    Pretrainer(const nn::ModelConfig& model_cfg, const PretrainConfig& cfg, std::uint64_t seed);
    // Restores every piece of training state from a checkpoint. The model
    // configuration in the checkpoint wins; the pretraining hyperparameters
    // must match the ones stored there.
    static Pretrainer resume(const Checkpoint& ckpt, const PretrainConfig& cfg);

    EpochMetrics run_epoch(const std::vector<TokenWindow>& corpus);

    Checkpoint checkpoint() const;

    int epoch() const { return epoch_; }
    const nn::Model& model() const { return model_; }
    nn::Model& model() { return model_; }
    const FreezeRegistry& registry() const { return registry_; }
    const AttributeWeights& weights() const { return weights_; }
    const PretrainConfig& config() const { return cfg_; }

private:
    Pretrainer() = default;

    struct EpochTally;
    void train_batch(const std::vector<TokenWindow>& windows, EpochTally& tally);

    nn::ModelConfig model_cfg_;
    PretrainConfig cfg_;
    nn::Model model_;
    nn::AdamW rec_opt_;
    nn::AdamW masker_opt_;
    AttributeWeights weights_;
    FreezeRegistry registry_;
    std::mt19937_64 rng_;
    int epoch_ = 0;
    // Sum of per-token masking probabilities in the current cycle, by song.
    std::map<std::string, std::vector<double>> cycle_sum_;
    int cycle_epochs_ = 0;
};

/// Group windows by song id, checking that each song's windows tile it
/// without gaps. Returns song id -> total real length.
std::map<std::string, int> song_lengths(const std::vector<TokenWindow>& corpus);

}  // namespace advmidi
