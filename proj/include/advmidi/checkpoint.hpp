#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "advmidi/adversarial.hpp"
#include "advmidi/nn/adamw.hpp"
#include "advmidi/nn/model.hpp"

namespace advmidi {

// Everything needed to resume training bit-exactly. Layout is documented in
// docs/checkpoint_format.md.
struct Checkpoint {
    nn::ModelConfig config;
    nn::Params params;
    std::map<std::string, nn::AdamW> optimizers;
    AttributeWeights weights;
    FreezeRegistry registry;
    std::string rng_state;
    nlohmann::json meta = nlohmann::json::object();
    // Extra trainer arrays (e.g. in-progress cycle aggregation), by name.
    std::map<std::string, std::vector<double>> arrays;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Atomic: writes <path>.tmp then renames over <path>.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json config_to_json(const nn::ModelConfig& cfg);
nn::ModelConfig config_from_json(const nlohmann::json& j);

std::string group_name(nn::Group g);
nn::Group group_from_name(const std::string& s);

}  // namespace advmidi
