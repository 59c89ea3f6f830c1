#include "advmidi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "advmidi/error.hpp"

namespace advmidi {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian float64");

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'M', 'I', 'D', 'I', '\0'};

struct TensorRef {
    std::string name;
    const double* data;
    Eigen::Index rows;
    Eigen::Index cols;
};

}  // namespace

std::string group_name(nn::Group g) {
    switch (g) {
        case nn::Group::Backbone: return "backbone";
        case nn::Group::Masker: return "masker";
        case nn::Group::Recoverer: return "recoverer";
        case nn::Group::TokClassifier: return "tok_cls";
        case nn::Group::SeqClassifier: return "seq_cls";
    }
    return "backbone";
}

nn::Group group_from_name(const std::string& s) {
    for (auto g : {nn::Group::Backbone, nn::Group::Masker, nn::Group::Recoverer, nn::Group::TokClassifier,
                   nn::Group::SeqClassifier})
        if (group_name(g) == s) return g;
    throw FormatError("unknown parameter group '" + s + "'");
}

nlohmann::json config_to_json(const nn::ModelConfig& cfg) {
    return {{"hidden", cfg.hidden},
            {"layers", cfg.layers},
            {"heads", cfg.heads},
            {"inner", cfg.inner},
            {"dropout", cfg.dropout},
            {"max_len", cfg.max_len},
            {"vocab", cfg.vocab.sizes},
            {"n_seq_classes", cfg.n_seq_classes},
            {"n_tok_classes", cfg.n_tok_classes}};
}

nn::ModelConfig config_from_json(const nlohmann::json& j) {
    try {
        nn::ModelConfig cfg;
        cfg.hidden = j.at("hidden").get<int>();
        cfg.layers = j.at("layers").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.inner = j.at("inner").get<int>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.max_len = j.at("max_len").get<int>();
        cfg.vocab.sizes = j.at("vocab").get<std::array<int, kNumAttributes>>();
        cfg.n_seq_classes = j.at("n_seq_classes").get<int>();
        cfg.n_tok_classes = j.at("n_tok_classes").get<int>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid model config in checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<TensorRef> tensors;
    auto add = [&](std::string name, const nn::Matrix& m) {
        tensors.push_back({std::move(name), m.data(), m.rows(), m.cols()});
    };
    ckpt.params.visit([&](const std::string& name, const nn::Matrix& m) { add("param/" + name, m); });

    nlohmann::json header;
    header["format"] = "advmidi-checkpoint";
    header["version"] = kCheckpointVersion;
    header["config"] = config_to_json(ckpt.config);

    nlohmann::json opts = nlohmann::json::object();
    for (const auto& [oname, opt] : ckpt.optimizers) {
        nlohmann::json groups = nlohmann::json::array();
        for (auto g : opt.groups()) groups.push_back(group_name(g));
        const auto& c = opt.config();
        opts[oname] = {{"lr", c.lr},       {"beta1", c.beta1},   {"beta2", c.beta2},
                       {"eps", c.eps},     {"weight_decay", c.weight_decay},
                       {"groups", groups}, {"steps", opt.steps()}};
        for (const auto& [pname, mom] : opt.moments()) {
            add("opt/" + oname + "/m/" + pname, mom.m);
            add("opt/" + oname + "/v/" + pname, mom.v);
        }
    }
    header["optimizers"] = opts;

    nn::Matrix w(1, kNumAttributes), acc(1, kNumAttributes);
    for (int j = 0; j < kNumAttributes; ++j) {
        w(0, j) = ckpt.weights.w[static_cast<std::size_t>(j)];
        acc(0, j) = ckpt.weights.prev_accuracy[static_cast<std::size_t>(j)];
    }
    add("state/attribute_weights", w);
    add("state/prev_accuracy", acc);

    std::vector<nn::Matrix> extra_store;
    extra_store.reserve(ckpt.arrays.size());
    for (const auto& [name, values] : ckpt.arrays) {
        extra_store.emplace_back(1, static_cast<Eigen::Index>(values.size()));
        if (!values.empty()) std::memcpy(extra_store.back().data(), values.data(), values.size() * sizeof(double));
        add("array/" + name, extra_store.back());
    }

    nlohmann::json registry = nlohmann::json::object();
    for (const auto& [song, len] : ckpt.registry.song_length) {
        const auto& fr = ckpt.registry.frozen_of(song);
        registry[song] = {{"length", len}, {"frozen", std::vector<int>(fr.begin(), fr.end())}};
    }
    header["freeze_registry"] = registry;
    header["rng_state"] = ckpt.rng_state;
    header["meta"] = ckpt.meta;

    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        index.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.rows * t.cols) * sizeof(double);
    }
    header["tensors"] = index;

    const std::string text = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp);
        out.write(kMagic, sizeof kMagic);
        std::uint32_t version = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        std::uint64_t hlen = text.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : tensors)
            out.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(t.rows * t.cols * sizeof(double)));
        out.flush();
        if (!out) throw FormatError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path + ": not a checkpoint file");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    if (hlen > (1ull << 32)) throw FormatError(path + ": corrupt header length");
    std::string text(hlen, '\0');
    in.read(text.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw FormatError(path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": corrupt header: " + e.what());
    }

    std::map<std::string, nn::Matrix> tensors;
    try {
        std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        for (const auto& t : header.at("tensors")) {
            auto rows = t.at("rows").get<Eigen::Index>();
            auto cols = t.at("cols").get<Eigen::Index>();
            auto offset = t.at("offset").get<std::uint64_t>();
            std::uint64_t bytes = static_cast<std::uint64_t>(rows * cols) * sizeof(double);
            if (offset + bytes > payload.size()) throw FormatError(path + ": truncated tensor payload");
            nn::Matrix m(rows, cols);
            if (bytes) std::memcpy(m.data(), payload.data() + offset, bytes);
            tensors.emplace(t.at("name").get<std::string>(), std::move(m));
        }

        Checkpoint ckpt;
        ckpt.config = config_from_json(header.at("config"));
        std::mt19937_64 scratch(0);
        ckpt.params = nn::Params::init(ckpt.config, scratch);
        ckpt.params.visit([&](const std::string& name, nn::Matrix& m) {
            auto it = tensors.find("param/" + name);
            if (it == tensors.end()) throw FormatError(path + ": missing parameter " + name);
            if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
                throw FormatError(path + ": shape mismatch for parameter " + name);
            m = std::move(it->second);
        });

        for (const auto& [oname, o] : header.at("optimizers").items()) {
            nn::AdamWConfig c;
            c.lr = o.at("lr").get<double>();
            c.beta1 = o.at("beta1").get<double>();
            c.beta2 = o.at("beta2").get<double>();
            c.eps = o.at("eps").get<double>();
            c.weight_decay = o.at("weight_decay").get<double>();
            std::set<nn::Group> groups;
            for (const auto& g : o.at("groups")) groups.insert(group_from_name(g.get<std::string>()));
            std::map<std::string, nn::Moments> moments;
            const std::string mprefix = "opt/" + oname + "/m/";
            for (auto& [tname, m] : tensors) {
                if (tname.rfind(mprefix, 0) != 0) continue;
                std::string pname = tname.substr(mprefix.size());
                auto vit = tensors.find("opt/" + oname + "/v/" + pname);
                if (vit == tensors.end()) throw FormatError(path + ": missing second moment for " + pname);
                moments[pname] = nn::Moments{m, vit->second};
            }
            nn::AdamW opt(c, groups);
            opt.restore(o.at("steps").get<std::int64_t>(), std::move(moments));
            ckpt.optimizers.emplace(oname, std::move(opt));
        }

        const auto& w = tensors.at("state/attribute_weights");
        const auto& acc = tensors.at("state/prev_accuracy");
        for (int j = 0; j < kNumAttributes; ++j) {
            ckpt.weights.w[static_cast<std::size_t>(j)] = w(0, j);
            ckpt.weights.prev_accuracy[static_cast<std::size_t>(j)] = acc(0, j);
        }
        for (const auto& [tname, m] : tensors) {
            if (tname.rfind("array/", 0) != 0) continue;
            ckpt.arrays[tname.substr(6)] = std::vector<double>(m.data(), m.data() + m.size());
        }
        for (const auto& [song, entry] : header.at("freeze_registry").items()) {
            ckpt.registry.song_length[song] = entry.at("length").get<int>();
            auto fr = entry.at("frozen").get<std::vector<int>>();
            ckpt.registry.frozen[song] = std::set<int>(fr.begin(), fr.end());
        }
        ckpt.rng_state = header.at("rng_state").get<std::string>();
        ckpt.meta = header.at("meta");
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": corrupt header: " + e.what());
    } catch (const std::out_of_range& e) {
        throw FormatError(path + ": missing state tensor: " + e.what());
    }
}

}  // namespace advmidi
