#include "advmidi/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "advmidi/checkpoint.hpp"
#include "advmidi/corpus_io.hpp"
#include "advmidi/error.hpp"
#include "advmidi/midi_io.hpp"

namespace advmidi {

namespace fs = std::filesystem;

namespace {

void say(const RunOptions& opt, const std::string& line) {
    if (opt.log) *opt.log << line << "\n" << std::flush;
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

TokenCorpus load_corpus(const RunConfig& cfg) {
    if (!fs::exists(cfg.paths.corpus)) throw FormatError("corpus '" + cfg.paths.corpus + "' not found (run tokenize first)");
    TokenCorpus c = read_token_corpus(cfg.paths.corpus);
    if (c.windows.empty()) throw FormatError("corpus '" + cfg.paths.corpus + "' holds no windows");
    if (c.window_length != cfg.model.max_len)
        throw MismatchError("corpus window length " + std::to_string(c.window_length) + " differs from model input length " +
                            std::to_string(cfg.model.max_len));
    if (!(c.vocab == cfg.model.vocab)) throw MismatchError("corpus vocabulary sizes differ from the model's");
    return c;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::vector<std::string> out;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

// Keeps the first `n` lines of a metrics file (missing file = empty).
void truncate_lines(const std::string& path, std::size_t n) {
    auto lines = read_lines(path);
    if (lines.size() < n) throw FormatError("metrics file '" + path + "' is shorter than the checkpoint's history");
    lines.resize(n);
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << "\n";
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out << text;
}

std::vector<LabeledWindow> task_data(const RunConfig& cfg, const TaskSpec& task, const TokenCorpus& corpus) {
    LabelMap labels;
    if (task.name != "velocity") {
        const std::string path = (fs::path(cfg.paths.labels_dir) / (task.name + ".labels")).string();
        if (!fs::exists(path)) throw FormatError("label file '" + path + "' not found");
        labels = read_labels(path);
    }
    return label_windows(task, corpus.windows, labels);
}

}  // namespace

std::string pretrain_checkpoint_path(const RunConfig& cfg) {
    return (fs::path(cfg.paths.checkpoint_dir) / "pretrain.ckpt").string();
}

std::string finetune_checkpoint_path(const RunConfig& cfg, const TaskSpec& task) {
    return (fs::path(cfg.paths.checkpoint_dir) / ("finetune_" + task.name + ".ckpt")).string();
}

void check_model_compatible(const nn::ModelConfig& ckpt, const nn::ModelConfig& cfg) {
    if (!(ckpt.vocab == cfg.vocab)) throw MismatchError("checkpoint vocabulary sizes differ from the configuration");
    auto dims = [](const nn::ModelConfig& c) {
        return "hidden " + std::to_string(c.hidden) + ", layers " + std::to_string(c.layers) + ", heads " +
               std::to_string(c.heads) + ", inner " + std::to_string(c.inner) + ", input length " +
               std::to_string(c.max_len);
    };
    if (dims(ckpt) != dims(cfg))
        throw MismatchError("checkpoint model (" + dims(ckpt) + ") differs from the configuration (" + dims(cfg) + ")");
}

TokenizeSummary cmd_tokenize(const RunConfig& cfg, const RunOptions& opt) {
    if (!fs::is_directory(cfg.paths.midi_dir))
        throw FormatError("MIDI directory '" + cfg.paths.midi_dir + "' not found");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cfg.paths.midi_dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && (ext == ".mid" || ext == ".midi")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError("no MIDI files in '" + cfg.paths.midi_dir + "'");

    TokenCorpus corpus;
    corpus.vocab = cfg.model.vocab;
    corpus.window_length = cfg.model.max_len;
    TokenizeSummary s;
    for (const auto& f : files) {
        const std::string id = f.stem().string();
        ParsedMidi midi;
        try {
            midi = parse_midi(read_file_bytes(f.string()));
        } catch (const FormatError& e) {
            throw FormatError(f.string() + ": " + e.what());
        }
        for (const auto& w : midi.warnings) say(opt, f.filename().string() + ": " + w);
        auto tokens = encode_song(midi.meta, midi.notes, corpus.vocab);
        auto windows = window_song(corpus.vocab, tokens, corpus.window_length, id);
        ++s.songs;
        s.tokens += static_cast<long>(tokens.size());
        s.windows += static_cast<int>(windows.size());
        corpus.windows.insert(corpus.windows.end(), windows.begin(), windows.end());
    }
    ensure_parent(cfg.paths.corpus);
    write_token_corpus(cfg.paths.corpus, corpus);
    say(opt, "tokenized " + std::to_string(s.songs) + " songs into " + std::to_string(s.windows) + " windows (" +
                 std::to_string(s.tokens) + " tokens) -> " + cfg.paths.corpus);
    return s;
}

SynthCorpus cmd_synth(const RunConfig& cfg, const RunOptions& opt) {
    SynthCorpus c = generate_synth(cfg.synth);
    write_synth_corpus(cfg.paths.synth_dir, c);
    say(opt, "wrote " + std::to_string(c.songs.size()) + " synthetic songs to " + cfg.paths.synth_dir);
    return c;
}

int cmd_pretrain(const RunConfig& cfg, const RunOptions& opt) {
    const TokenCorpus corpus = load_corpus(cfg);
    const std::string ckpt_path = pretrain_checkpoint_path(cfg);
    fs::create_directories(cfg.paths.checkpoint_dir);
    ensure_parent(cfg.paths.metrics);

    std::optional<Pretrainer> trainer;
    if (opt.resume && fs::exists(ckpt_path)) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        check_model_compatible(ckpt.config, cfg.model);
        trainer.emplace(Pretrainer::resume(ckpt, cfg.pretrain));
        truncate_lines(cfg.paths.metrics, static_cast<std::size_t>(trainer->epoch()));
        say(opt, "resumed pre-training at epoch " + std::to_string(trainer->epoch()));
    } else {
        trainer.emplace(cfg.model, cfg.pretrain, cfg.seed);
        std::ofstream(cfg.paths.metrics, std::ios::trunc);
    }

    int budget = opt.epoch_budget.value_or(cfg.pretrain_epochs);
    while (trainer->epoch() < cfg.pretrain_epochs && budget-- > 0) {
        EpochMetrics m = trainer->run_epoch(corpus.windows);
        {
            std::ofstream out(cfg.paths.metrics, std::ios::app);
            out << m.to_json().dump() << "\n";
        }
        save_checkpoint(ckpt_path, trainer->checkpoint());
        say(opt, m.to_json().dump());
    }
    return trainer->epoch();
}

FinetuneOutcome cmd_finetune(const RunConfig& cfg, const TaskSpec& task, const std::string& pretrained,
                             const RunOptions& opt) {
    const TokenCorpus corpus = load_corpus(cfg);
    auto data = task_data(cfg, task, corpus);
    const std::string out_path = finetune_checkpoint_path(cfg, task);
    const std::string metrics = (fs::path(cfg.paths.report_dir) / ("finetune_" + task.name + ".jsonl")).string();
    fs::create_directories(cfg.paths.checkpoint_dir);
    ensure_parent(metrics);

    std::optional<Finetuner> ft;
    if (opt.resume && fs::exists(out_path)) {
        Checkpoint ckpt = load_checkpoint(out_path);
        check_model_compatible(ckpt.config, cfg.model);
        ft.emplace(Finetuner::resume(ckpt, task, cfg.finetune, std::move(data)));
        truncate_lines(metrics, static_cast<std::size_t>(ft->early_stop().epoch));
        say(opt, "resumed fine-tuning at epoch " + std::to_string(ft->early_stop().epoch));
    } else {
        const std::string src = pretrained.empty() ? pretrain_checkpoint_path(cfg) : pretrained;
        if (!fs::exists(src)) throw FormatError("pre-trained checkpoint '" + src + "' not found");
        Checkpoint ckpt = load_checkpoint(src);
        check_model_compatible(ckpt.config, cfg.model);
        nn::ModelConfig mc = ckpt.config;
        mc.dropout = cfg.model.dropout;
        ft.emplace(nn::Model(mc, ckpt.params), task, cfg.finetune, cfg.seed, std::move(data));
        std::ofstream(metrics, std::ios::trunc);
    }

    int budget = opt.epoch_budget.value_or(cfg.finetune.max_epochs);
    while (!ft->done() && budget-- > 0) {
        FinetuneEpoch e = ft->run_epoch();
        {
            std::ofstream out(metrics, std::ios::app);
            out << e.to_json().dump() << "\n";
        }
        save_checkpoint(out_path, ft->checkpoint());
        say(opt, e.to_json().dump());
    }

    FinetuneOutcome o;
    o.epochs = ft->early_stop().epoch;
    o.best_epoch = ft->early_stop().best_epoch;
    o.best_validation = ft->early_stop().best;
    o.test = ft->evaluate_test();
    const std::string base = (fs::path(cfg.paths.report_dir) / (task.name + ".test")).string();
    write_text(base + ".txt", o.test.to_text(task.name + " test split, best epoch " + std::to_string(o.best_epoch) +
                                             " of " + std::to_string(o.epochs)));
    nlohmann::json j = o.test.to_json();
    j["task"] = task.name;
    j["epochs"] = o.epochs;
    j["best_epoch"] = o.best_epoch;
    j["best_validation"] = o.best_validation;
    write_text(base + ".json", j.dump(2) + "\n");
    say(opt, "test accuracy " + std::to_string(o.test.accuracy));
    return o;
}

EvalReport cmd_evaluate(const RunConfig& cfg, const TaskSpec& task, const std::string& checkpoint,
                        const RunOptions& opt) {
    const std::string path = checkpoint.empty() ? finetune_checkpoint_path(cfg, task) : checkpoint;
    if (!fs::exists(path)) throw FormatError("checkpoint '" + path + "' not found");
    Checkpoint ckpt = load_checkpoint(path);
    check_task_checkpoint(ckpt, task);
    check_model_compatible(ckpt.config, cfg.model);
    const TokenCorpus corpus = load_corpus(cfg);
    auto data = task_data(cfg, task, corpus);
    const Splits splits = split_songs(task, data, ckpt.meta.at("seed").get<std::uint64_t>());
    nn::Model model(ckpt.config, ckpt.params);
    EvalReport r = evaluate(model, task, data, splits.test);
    const std::string base = (fs::path(cfg.paths.report_dir) / (task.name + ".evaluate")).string();
    write_text(base + ".txt", r.to_text(task.name + " test split, " + path));
    nlohmann::json j = r.to_json();
    j["task"] = task.name;
    j["checkpoint"] = path;
    write_text(base + ".json", j.dump(2) + "\n");
    say(opt, r.to_text(task.name + " test split"));
    return r;
}

}  // namespace advmidi
