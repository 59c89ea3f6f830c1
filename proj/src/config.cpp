#include "advmidi/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "advmidi/checkpoint.hpp"
#include "advmidi/error.hpp"

namespace advmidi {

Preset preset_from_name(const std::string& name) {
    if (name == "desk") return Preset::Desk;
    if (name == "paper") return Preset::Paper;
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

std::string preset_name(Preset p) { return p == Preset::Desk ? "desk" : "paper"; }

RunConfig RunConfig::defaults(Preset preset) {
    RunConfig c;
    c.preset = preset;
    if (preset == Preset::Paper) {
        c.model = nn::ModelConfig::paper();
        c.pretrain.lr = 1e-4;
        c.pretrain.masker_lr = 1e-4;
        c.finetune.lr = 1e-5;
    } else {
        // Tiny models on a small corpus need larger steps.
        c.model = nn::ModelConfig::desk();
        c.pretrain.lr = 1e-3;
        c.pretrain.masker_lr = 1e-3;
        c.finetune.lr = 1e-4;
    }
    return c;
}

nlohmann::json RunConfig::to_json() const {
    return {{"preset", preset_name(preset)},
            {"seed", seed},
            {"model", config_to_json(model)},
            {"pretrain", pretrain_config_to_json(pretrain)},
            {"pretrain_epochs", pretrain_epochs},
            {"finetune", finetune_config_to_json(finetune)},
            {"synth",
             {{"n_songs", synth.n_songs},
              {"notes_per_song", synth.notes_per_song},
              {"n_styles", synth.n_styles},
              {"planted_rate", synth.planted_rate},
              {"plant", synth.plant == PlantAttribute::Velocity ? "velocity" : "pitch"},
              {"seed", synth.seed}}},
            {"paths",
             {{"midi_dir", paths.midi_dir},
              {"labels_dir", paths.labels_dir},
              {"corpus", paths.corpus},
              {"synth_dir", paths.synth_dir},
              {"checkpoint_dir", paths.checkpoint_dir},
              {"metrics", paths.metrics},
              {"report_dir", paths.report_dir}}}};
}

namespace {

std::string where(const YAML::Node& n) {
    const auto m = n.Mark();
    return m.line >= 0 ? "line " + std::to_string(m.line + 1) + ": " : "";
}

template <class T>
T read(const YAML::Node& n, const std::string& key, const char* what) {
    if (!n.IsScalar()) throw ConfigError(where(n) + "'" + key + "' expects " + what);
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where(n) + "'" + key + "' expects " + what + ", got '" + n.Scalar() + "'");
    }
}

using Setter = std::function<void(const YAML::Node&, const std::string&)>;

Setter int_field(int& f) {
    return [&f](const YAML::Node& n, const std::string& k) { f = read<int>(n, k, "an integer"); };
}
Setter real_field(double& f) {
    return [&f](const YAML::Node& n, const std::string& k) { f = read<double>(n, k, "a number"); };
}
Setter bool_field(bool& f) {
    return [&f](const YAML::Node& n, const std::string& k) { f = read<bool>(n, k, "true or false"); };
}
Setter string_field(std::string& f) {
    return [&f](const YAML::Node& n, const std::string& k) { f = read<std::string>(n, k, "a string"); };
}
Setter u64_field(std::uint64_t& f) {
    return [&f](const YAML::Node& n, const std::string& k) { f = read<std::uint64_t>(n, k, "a non-negative integer"); };
}

void apply_section(const YAML::Node& node, const std::string& section, const std::map<std::string, Setter>& fields) {
    if (!node.IsMap()) throw ConfigError(where(node) + "'" + section + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        auto it = fields.find(key);
        if (it == fields.end())
            throw ConfigError(where(kv.first) + "unknown key '" + (section.empty() ? key : section + "." + key) + "'");
        it->second(kv.second, section.empty() ? key : section + "." + key);
    }
}

YAML::Node parse_yaml(const std::string& text) {
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
}

}  // namespace

RunConfig parse_config(const std::string& text, std::optional<Preset> preset_override) {
    YAML::Node root = parse_yaml(text);
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError(where(root) + "configuration must be a mapping");

    Preset preset = Preset::Desk;
    if (root["preset"]) preset = preset_from_name(read<std::string>(root["preset"], "preset", "desk or paper"));
    if (preset_override) preset = *preset_override;
    RunConfig c = RunConfig::defaults(preset);

    std::string plant = c.synth.plant == PlantAttribute::Velocity ? "velocity" : "pitch";
    std::string freeze_policy = c.pretrain.freeze_policy == FreezePolicy::Refresh ? "refresh" : "accumulate";

    const std::map<std::string, Setter> model{
        {"hidden", int_field(c.model.hidden)},     {"layers", int_field(c.model.layers)},
        {"heads", int_field(c.model.heads)},       {"inner", int_field(c.model.inner)},
        {"dropout", real_field(c.model.dropout)},  {"input_length", int_field(c.model.max_len)},
    };
    const std::map<std::string, Setter> pretrain{
        {"p", real_field(c.pretrain.p)},
        {"q", real_field(c.pretrain.q)},
        {"a", real_field(c.pretrain.a)},
        {"b", real_field(c.pretrain.b)},
        {"k", int_field(c.pretrain.k)},
        {"batch_size", int_field(c.pretrain.batch_size)},
        {"lr", real_field(c.pretrain.lr)},
        {"masker_lr", real_field(c.pretrain.masker_lr)},
        {"weight_decay", real_field(c.pretrain.weight_decay)},
        {"augment", bool_field(c.pretrain.augment)},
        {"shared_backbone", bool_field(c.pretrain.shared_backbone)},
        {"freeze_policy", string_field(freeze_policy)},
        {"epochs", int_field(c.pretrain_epochs)},
    };
    const std::map<std::string, Setter> finetune{
        {"p", real_field(c.finetune.p)},
        {"lr", real_field(c.finetune.lr)},
        {"weight_decay", real_field(c.finetune.weight_decay)},
        {"batch_size", int_field(c.finetune.batch_size)},
        {"patience", int_field(c.finetune.patience)},
        {"max_epochs", int_field(c.finetune.max_epochs)},
        {"freeze_backbone", bool_field(c.finetune.freeze_backbone)},
        {"augment", bool_field(c.finetune.augment)},
    };
    const std::map<std::string, Setter> synth{
        {"n_songs", int_field(c.synth.n_songs)},
        {"notes_per_song", int_field(c.synth.notes_per_song)},
        {"n_styles", int_field(c.synth.n_styles)},
        {"planted_rate", real_field(c.synth.planted_rate)},
        {"plant", string_field(plant)},
        {"seed", u64_field(c.synth.seed)},
    };
    const std::map<std::string, Setter> paths{
        {"midi_dir", string_field(c.paths.midi_dir)},
        {"labels_dir", string_field(c.paths.labels_dir)},
        {"corpus", string_field(c.paths.corpus)},
        {"synth_dir", string_field(c.paths.synth_dir)},
        {"checkpoint_dir", string_field(c.paths.checkpoint_dir)},
        {"metrics", string_field(c.paths.metrics)},
        {"report_dir", string_field(c.paths.report_dir)},
    };
    auto section = [](const std::map<std::string, Setter>& fields, const std::string& name) -> Setter {
        return [&fields, name](const YAML::Node& n, const std::string&) { apply_section(n, name, fields); };
    };
    const std::map<std::string, Setter> top{
        {"preset", [](const YAML::Node&, const std::string&) {}},
        {"seed", u64_field(c.seed)},
        {"model", section(model, "model")},
        {"pretrain", section(pretrain, "pretrain")},
        {"finetune", section(finetune, "finetune")},
        {"synth", section(synth, "synth")},
        {"paths", section(paths, "paths")},
    };
    apply_section(root, "", top);

    if (plant == "velocity")
        c.synth.plant = PlantAttribute::Velocity;
    else if (plant == "pitch")
        c.synth.plant = PlantAttribute::Pitch;
    else
        throw ConfigError(where(root["synth"]["plant"]) + "'synth.plant' must be velocity or pitch");
    if (freeze_policy == "refresh")
        c.pretrain.freeze_policy = FreezePolicy::Refresh;
    else if (freeze_policy == "accumulate")
        c.pretrain.freeze_policy = FreezePolicy::Accumulate;
    else
        throw ConfigError(where(root["pretrain"]["freeze_policy"]) +
                          "'pretrain.freeze_policy' must be refresh or accumulate");

    try {
        c.model.validate();
        c.pretrain.validate();
        c.finetune.validate();
        c.synth.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (c.pretrain_epochs < 0) throw ConfigError("'pretrain.epochs' must be >= 0");
    return c;
}

RunConfig load_config(const std::string& path, std::optional<Preset> preset_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read configuration file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str(), preset_override);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string dump_config(const RunConfig& c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "preset" << YAML::Value << preset_name(c.preset);
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "hidden" << YAML::Value << c.model.hidden;
    out << YAML::Key << "layers" << YAML::Value << c.model.layers;
    out << YAML::Key << "heads" << YAML::Value << c.model.heads;
    out << YAML::Key << "inner" << YAML::Value << c.model.inner;
    out << YAML::Key << "dropout" << YAML::Value << c.model.dropout;
    out << YAML::Key << "input_length" << YAML::Value << c.model.max_len;
    out << YAML::EndMap;
    out << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "p" << YAML::Value << c.pretrain.p;
    out << YAML::Key << "q" << YAML::Value << c.pretrain.q;
    out << YAML::Key << "a" << YAML::Value << c.pretrain.a;
    out << YAML::Key << "b" << YAML::Value << c.pretrain.b;
    out << YAML::Key << "k" << YAML::Value << c.pretrain.k;
    out << YAML::Key << "batch_size" << YAML::Value << c.pretrain.batch_size;
    out << YAML::Key << "lr" << YAML::Value << c.pretrain.lr;
    out << YAML::Key << "masker_lr" << YAML::Value << c.pretrain.masker_lr;
    out << YAML::Key << "weight_decay" << YAML::Value << c.pretrain.weight_decay;
    out << YAML::Key << "augment" << YAML::Value << c.pretrain.augment;
    out << YAML::Key << "shared_backbone" << YAML::Value << c.pretrain.shared_backbone;
    out << YAML::Key << "freeze_policy" << YAML::Value
        << (c.pretrain.freeze_policy == FreezePolicy::Refresh ? "refresh" : "accumulate");
    out << YAML::Key << "epochs" << YAML::Value << c.pretrain_epochs;
    out << YAML::EndMap;
    out << YAML::Key << "finetune" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "p" << YAML::Value << c.finetune.p;
    out << YAML::Key << "lr" << YAML::Value << c.finetune.lr;
    out << YAML::Key << "weight_decay" << YAML::Value << c.finetune.weight_decay;
    out << YAML::Key << "batch_size" << YAML::Value << c.finetune.batch_size;
    out << YAML::Key << "patience" << YAML::Value << c.finetune.patience;
    out << YAML::Key << "max_epochs" << YAML::Value << c.finetune.max_epochs;
    out << YAML::Key << "freeze_backbone" << YAML::Value << c.finetune.freeze_backbone;
    out << YAML::Key << "augment" << YAML::Value << c.finetune.augment;
    out << YAML::EndMap;
    out << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n_songs" << YAML::Value << c.synth.n_songs;
    out << YAML::Key << "notes_per_song" << YAML::Value << c.synth.notes_per_song;
    out << YAML::Key << "n_styles" << YAML::Value << c.synth.n_styles;
    out << YAML::Key << "planted_rate" << YAML::Value << c.synth.planted_rate;
    out << YAML::Key << "plant" << YAML::Value << (c.synth.plant == PlantAttribute::Velocity ? "velocity" : "pitch");
    out << YAML::Key << "seed" << YAML::Value << c.synth.seed;
    out << YAML::EndMap;
    out << YAML::Key << "paths" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "midi_dir" << YAML::Value << c.paths.midi_dir;
    out << YAML::Key << "labels_dir" << YAML::Value << c.paths.labels_dir;
    out << YAML::Key << "corpus" << YAML::Value << c.paths.corpus;
    out << YAML::Key << "synth_dir" << YAML::Value << c.paths.synth_dir;
    out << YAML::Key << "checkpoint_dir" << YAML::Value << c.paths.checkpoint_dir;
    out << YAML::Key << "metrics" << YAML::Value << c.paths.metrics;
    out << YAML::Key << "report_dir" << YAML::Value << c.paths.report_dir;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace advmidi
