#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "advmidi/config.hpp"
#include "advmidi/finetune.hpp"

namespace advmidi {

struct RunOptions {
    bool resume = false;
    // Stop after this many epochs in this invocation (simulates an interrupt).
    std::optional<int> epoch_budget;
    std::ostream* log = nullptr;
};

struct TokenizeSummary {
    int songs = 0;
    int windows = 0;
    long tokens = 0;
};

/// MIDI files under paths.midi_dir -> token corpus at paths.corpus. Song ids
/// are file stems.
TokenizeSummary cmd_tokenize(const RunConfig& cfg, const RunOptions& opt = {});

/// Synthetic corpus (MIDI, labels, planted manifest) under paths.synth_dir.
SynthCorpus cmd_synth(const RunConfig& cfg, const RunOptions& opt = {});

/// Pre-trains on paths.corpus, appending one JSON line per epoch to
/// paths.metrics and writing checkpoint_dir/pretrain.ckpt after every epoch.
/// With resume, continues from that checkpoint and drops metrics lines past
/// its epoch. Returns the number of completed epochs.
int cmd_pretrain(const RunConfig& cfg, const RunOptions& opt = {});

struct FinetuneOutcome {
    int epochs = 0;
    int best_epoch = 0;
    double best_validation = 0.0;
    EvalReport test;
};

/// Fine-tunes from `pretrained` (default checkpoint_dir/pretrain.ckpt) and
/// writes checkpoint_dir/finetune_<task>.ckpt plus reports under report_dir.
FinetuneOutcome cmd_finetune(const RunConfig& cfg, const TaskSpec& task, const std::string& pretrained = "",
                             const RunOptions& opt = {});

/// Test-split report for a fine-tuned checkpoint (default
/// checkpoint_dir/finetune_<task>.ckpt).
EvalReport cmd_evaluate(const RunConfig& cfg, const TaskSpec& task, const std::string& checkpoint = "",
                        const RunOptions& opt = {});

std::string pretrain_checkpoint_path(const RunConfig& cfg);
std::string finetune_checkpoint_path(const RunConfig& cfg, const TaskSpec& task);

/// Throws MismatchError when the checkpoint's model disagrees with `cfg` in
/// vocabulary sizes or dimensions.
void check_model_compatible(const nn::ModelConfig& ckpt, const nn::ModelConfig& cfg);

}  // namespace advmidi
