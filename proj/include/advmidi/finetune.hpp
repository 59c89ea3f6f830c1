#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "advmidi/checkpoint.hpp"
#include "advmidi/corpus_io.hpp"
#include "advmidi/nn/adamw.hpp"
#include "advmidi/nn/model.hpp"

namespace advmidi {

enum class TaskLevel { Sequence, Token };

struct TaskSpec {
    std::string name;
    TaskLevel level = TaskLevel::Sequence;
    int n_classes = 0;
    bool augment = false;  // transposition allowed
    std::string label_source;

    static TaskSpec composer();
    static TaskSpec emotion();
    static TaskSpec melody();
    static TaskSpec velocity();
    // Throws InvalidArgument for an unknown name.
    static TaskSpec by_name(const std::string& name);
};

struct EarlyStopState {
    int patience = 30;
    int max_epochs = 500;
    double best = -1.0;
    int best_epoch = 0;
    int since_improvement = 0;
    int epoch = 0;

    // Records one epoch's validation accuracy; true when it is a new best.
    bool observe(double val_accuracy);
    bool should_stop() const { return since_improvement >= patience || epoch >= max_epochs; }
};

/// round(p% of the real tokens) positions, uniform without replacement, get
/// every attribute set to MASK.
TokenWindow mask_inputs(const TokenWindow& window, double p, std::mt19937_64& rng);

/// Six equal-width classes over 1..127: floor((v - 1) * 6 / 127).
int velocity_class(int velocity);

struct LabeledWindow {
    TokenWindow window;
    std::vector<int> labels;  // one entry for sequence tasks, one per real token otherwise
};

/// Velocity labels come from the tokens themselves (the representative
/// velocity of each bin); the returned input has velocity = MASK at every real
/// position.
LabeledWindow prepare_velocity_task(const TokenWindow& window);

/// Pairs windows with their labels. The velocity task ignores `labels`.
/// Throws MismatchError when a song has no label, a token label sequence does
/// not cover the song, or a class is out of range.
std::vector<LabeledWindow> label_windows(const TaskSpec& task, const std::vector<TokenWindow>& windows,
                                         const LabelMap& labels);

struct Splits {
    std::vector<std::string> train, validation, test;  // song ids
};

/// 80/10/10 over songs, seeded. Sequence tasks split each class separately.
/// Throws InvalidArgument when any split ends up empty.
Splits split_songs(const TaskSpec& task, const std::vector<LabeledWindow>& data, std::uint64_t seed);

struct FinetuneConfig {
    double p = 15.0;
    double lr = 1e-5;
    double weight_decay = 0.01;
    int batch_size = 8;
    int patience = 30;
    int max_epochs = 500;
    bool freeze_backbone = false;
    bool augment = true;  // combined with TaskSpec::augment

    void validate() const;
};

nlohmann::json finetune_config_to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j);

struct EvalReport {
    double accuracy = 0.0;
    long support = 0;
    std::vector<std::vector<long>> confusion;  // [true][predicted]

    nlohmann::json to_json() const;
    std::string to_text(const std::string& title) const;
};

/// No input masking. Sequence tasks predict once per song from the mean of
/// its windows' logits; token tasks score every real position.
EvalReport evaluate(const nn::Model& model, const TaskSpec& task, const std::vector<LabeledWindow>& data,
                    const std::vector<std::string>& songs);

struct FinetuneEpoch {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    bool improved = false;

    nlohmann::json to_json() const;
};

/// Fine-tuning state: the training model, its optimizer, early stopping and
/// the best-validation parameters. Resumable through checkpoint().
class Finetuner {
public:
    Finetuner(const nn::Model& pretrained, const TaskSpec& task, const FinetuneConfig& cfg, std::uint64_t seed,
              std::vector<LabeledWindow> data);
    static Finetuner resume(const Checkpoint& ckpt, const TaskSpec& task, const FinetuneConfig& cfg,
                            std::vector<LabeledWindow> data);

    FinetuneEpoch run_epoch();
    bool done() const { return stop_.should_stop(); }

    const EarlyStopState& early_stop() const { return stop_; }
    const Splits& splits() const { return splits_; }
    const nn::Model& model() const { return model_; }
    const nn::Model& best_model() const { return best_; }
    const std::vector<double>& val_history() const { return val_history_; }

    EvalReport evaluate_test() const { return evaluate(best_, task_, data_, splits_.test); }

    /// Parameters are the best-validation model; the live training state rides
    /// along for resume.
    Checkpoint checkpoint() const;

private:
    Finetuner() = default;

    TaskSpec task_;
    FinetuneConfig cfg_;
    std::vector<LabeledWindow> data_;
    Splits splits_;
    std::uint64_t seed_ = 0;
    nn::Model model_;
    nn::Model best_;
    nn::AdamW opt_;
    EarlyStopState stop_;
    std::mt19937_64 rng_;
    std::vector<double> val_history_;
};

/// Throws MismatchError unless the checkpoint carries a head for `task`.
void check_task_checkpoint(const Checkpoint& ckpt, const TaskSpec& task);

}  // namespace advmidi
