#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "advmidi/finetune.hpp"
#include "advmidi/nn/model.hpp"
#include "advmidi/pretrain.hpp"
#include "advmidi/synth.hpp"

namespace advmidi {

enum class Preset { Desk, Paper };

struct Paths {
    std::string midi_dir = "data/midi";          // tokenize input
    std::string labels_dir = "data";             // <task>.labels
    std::string corpus = "data/corpus.oct";      // tokenize output, pretrain/finetune input
    std::string synth_dir = "data";              // synth output
    std::string checkpoint_dir = "runs/ckpt";
    std::string metrics = "runs/metrics.jsonl";
    std::string report_dir = "runs/reports";
};

struct RunConfig {
    Preset preset = Preset::Desk;
    std::uint64_t seed = 1;
    nn::ModelConfig model;
    PretrainConfig pretrain;
    int pretrain_epochs = 45;
    FinetuneConfig finetune;
    SynthSpec synth;
    Paths paths;

    static RunConfig defaults(Preset preset);
    nlohmann::json to_json() const;
};

Preset preset_from_name(const std::string& name);
std::string preset_name(Preset p);

/// Reads a YAML run configuration. Values start from the preset named by
/// `preset_override`, else the file's `preset` key, else desk. Unknown keys and
/// ill-typed values raise ConfigError with the offending line.
RunConfig load_config(const std::string& path, std::optional<Preset> preset_override = std::nullopt);
RunConfig parse_config(const std::string& text, std::optional<Preset> preset_override = std::nullopt);

/// YAML text that parse_config turns back into `cfg`.
std::string dump_config(const RunConfig& cfg);

}  // namespace advmidi
