#include "advmidi/finetune.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "advmidi/error.hpp"
#include "advmidi/pretrain.hpp"

namespace advmidi {

TaskSpec TaskSpec::composer() { return {"composer", TaskLevel::Sequence, 8, true, "composer.labels: one class per song"}; }
TaskSpec TaskSpec::emotion() { return {"emotion", TaskLevel::Sequence, 4, false, "emotion.labels: one class per song"}; }
TaskSpec TaskSpec::melody() { return {"melody", TaskLevel::Token, 3, true, "melody.labels: one role per token"}; }
TaskSpec TaskSpec::velocity() {
    return {"velocity", TaskLevel::Token, 6, true, "derived from each token's velocity attribute"};
}

TaskSpec TaskSpec::by_name(const std::string& name) {
    if (name == "composer") return composer();
    if (name == "emotion") return emotion();
    if (name == "melody") return melody();
    if (name == "velocity") return velocity();
    throw InvalidArgument("unknown task '" + name + "' (expected composer, emotion, melody or velocity)");
}

bool EarlyStopState::observe(double val_accuracy) {
    ++epoch;
    if (val_accuracy > best) {
        best = val_accuracy;
        best_epoch = epoch;
        since_improvement = 0;
        return true;
    }
    ++since_improvement;
    return false;
}

TokenWindow mask_inputs(const TokenWindow& window, double p, std::mt19937_64& rng) {
    TokenWindow out = window;
    const int real = window.real_length();
    const int k = percent_count(p, real);
    if (k == 0) return out;
    std::vector<int> pos(static_cast<std::size_t>(real));
    std::iota(pos.begin(), pos.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, real - 1);
        std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(pick(rng))]);
        out.tokens[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])] = OctupleToken::mask();
    }
    return out;
}

int velocity_class(int velocity) { return (std::clamp(velocity, 1, 127) - 1) * 6 / 127; }

LabeledWindow prepare_velocity_task(const TokenWindow& window) {
    LabeledWindow out{window, {}};
    for (int i = 0; i < window.real_length(); ++i) {
        auto& t = out.window.tokens[static_cast<std::size_t>(i)];
        if (t[kVelocity] < kFirstRealId)
            throw InvalidArgument("token " + std::to_string(i) + " of '" + window.song_id + "' has no velocity value");
        out.labels.push_back(velocity_class(velocity_from_bin(t[kVelocity] - kFirstRealId)));
        t[kVelocity] = kMaskId;
    }
    return out;
}

std::vector<LabeledWindow> label_windows(const TaskSpec& task, const std::vector<TokenWindow>& windows,
                                         const LabelMap& labels) {
    std::vector<LabeledWindow> out;
    if (task.name == "velocity") {
        for (const auto& w : windows) out.push_back(prepare_velocity_task(w));
        return out;
    }
    const auto lengths = song_lengths(windows);
    auto check = [&](int c, const std::string& song) {
        if (c < 0 || c >= task.n_classes)
            throw MismatchError("label " + std::to_string(c) + " of '" + song + "' is outside the " +
                                std::to_string(task.n_classes) + " classes of task " + task.name);
    };
    for (const auto& w : windows) {
        auto it = labels.find(w.song_id);
        if (it == labels.end()) throw MismatchError("no " + task.name + " label for song '" + w.song_id + "'");
        const auto& lab = it->second;
        LabeledWindow lw{w, {}};
        if (task.level == TaskLevel::Sequence) {
            if (lab.size() != 1)
                throw MismatchError("song '" + w.song_id + "' needs exactly one label for task " + task.name);
            lw.labels = lab;
        } else {
            if (static_cast<int>(lab.size()) != lengths.at(w.song_id))
                throw MismatchError("song '" + w.song_id + "' has " + std::to_string(lab.size()) + " token labels but " +
                                    std::to_string(lengths.at(w.song_id)) + " tokens");
            lw.labels.assign(lab.begin() + w.origin_index, lab.begin() + w.origin_index + w.real_length());
        }
        for (int c : lw.labels) check(c, w.song_id);
        out.push_back(std::move(lw));
    }
    return out;
}

Splits split_songs(const TaskSpec& task, const std::vector<LabeledWindow>& data, std::uint64_t seed) {
    std::map<int, std::vector<std::string>> strata;
    std::set<std::string> seen;
    for (const auto& lw : data) {
        if (!seen.insert(lw.window.song_id).second) continue;
        const int key = task.level == TaskLevel::Sequence ? lw.labels.at(0) : 0;
        strata[key].push_back(lw.window.song_id);
    }
    std::mt19937_64 rng(seed);
    Splits s;
    for (auto& [label, songs] : strata) {
        std::sort(songs.begin(), songs.end());
        std::shuffle(songs.begin(), songs.end(), rng);
        const int n = static_cast<int>(songs.size());
        const int n_train = percent_count(80.0, n);
        const int n_val = std::min(percent_count(10.0, n), n - n_train);
        s.train.insert(s.train.end(), songs.begin(), songs.begin() + n_train);
        s.validation.insert(s.validation.end(), songs.begin() + n_train, songs.begin() + n_train + n_val);
        s.test.insert(s.test.end(), songs.begin() + n_train + n_val, songs.end());
    }
    if (s.train.empty() || s.validation.empty() || s.test.empty())
        throw InvalidArgument("corpus too small for a train/validation/test split (" + std::to_string(seen.size()) +
                              " songs)");
    return s;
}

void FinetuneConfig::validate() const {
    if (p < 0.0 || p >= 100.0) throw InvalidArgument("fine-tuning mask percentage must be in [0, 100)");
    if (!(lr > 0.0)) throw InvalidArgument("fine-tuning learning rate must be positive");
    if (weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (patience < 1 || max_epochs < 1) throw InvalidArgument("patience and max epochs must be >= 1");
}

nlohmann::json finetune_config_to_json(const FinetuneConfig& c) {
    return {{"p", c.p},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"patience", c.patience},
            {"max_epochs", c.max_epochs},
            {"freeze_backbone", c.freeze_backbone},
            {"augment", c.augment}};
}

FinetuneConfig finetune_config_from_json(const nlohmann::json& j) {
    FinetuneConfig c;
    c.p = j.at("p").get<double>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.patience = j.at("patience").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.freeze_backbone = j.at("freeze_backbone").get<bool>();
    c.augment = j.at("augment").get<bool>();
    return c;
}

nlohmann::json EvalReport::to_json() const {
    return {{"accuracy", accuracy}, {"support", support}, {"confusion", confusion}};
}

std::string EvalReport::to_text(const std::string& title) const {
    std::ostringstream out;
    out << title << "\n";
    out << "accuracy " << accuracy << " over " << support << " items\n";
    out << "confusion (rows true, columns predicted):\n";
    for (const auto& row : confusion) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "  ") << row[c];
        out << "\n";
    }
    return out.str();
}

EvalReport evaluate(const nn::Model& model, const TaskSpec& task, const std::vector<LabeledWindow>& data,
                    const std::vector<std::string>& songs) {
    const std::set<std::string> wanted(songs.begin(), songs.end());
    EvalReport r;
    r.confusion.assign(static_cast<std::size_t>(task.n_classes), std::vector<long>(static_cast<std::size_t>(task.n_classes), 0));

    std::map<std::string, std::pair<nn::RowVector, int>> song_logits;
    std::map<std::string, int> song_label;
    for (const auto& lw : data) {
        if (!wanted.count(lw.window.song_id)) continue;
        for (const auto& t : lw.window.tokens)
            if (t == OctupleToken::mask()) throw std::logic_error("masked token reached evaluation");
        nn::Matrix h = model.encode(lw.window, nn::Mode::Eval, nullptr, nullptr);
        if (task.level == TaskLevel::Sequence) {
            nn::RowVector logits = model.seq_classifier(h, lw.window.attn_mask);
            auto [it, fresh] = song_logits.try_emplace(lw.window.song_id, nn::RowVector::Zero(logits.size()), 0);
            it->second.first += logits;
            ++it->second.second;
            song_label[lw.window.song_id] = lw.labels.at(0);
        } else {
            nn::Matrix logits = model.tok_classifier(h);
            for (int i = 0; i < lw.window.real_length(); ++i) {
                const int pred = nn::argmax(nn::row_span(logits, i));
                ++r.confusion[static_cast<std::size_t>(lw.labels[static_cast<std::size_t>(i)])][static_cast<std::size_t>(pred)];
            }
        }
    }
    for (const auto& [song, acc] : song_logits) {
        nn::RowVector mean = acc.first / static_cast<double>(acc.second);
        const int pred = nn::argmax({mean.data(), static_cast<std::size_t>(mean.size())});
        ++r.confusion[static_cast<std::size_t>(song_label.at(song))][static_cast<std::size_t>(pred)];
    }
    long correct = 0;
    for (std::size_t c = 0; c < r.confusion.size(); ++c) {
        correct += r.confusion[c][c];
        r.support += std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), 0L);
    }
    r.accuracy = r.support ? static_cast<double>(correct) / static_cast<double>(r.support) : 0.0;
    return r;
}

nlohmann::json FinetuneEpoch::to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_accuracy", val_accuracy}, {"improved", improved}};
}

namespace {

nn::Group head_group(const TaskSpec& task) {
    return task.level == TaskLevel::Sequence ? nn::Group::SeqClassifier : nn::Group::TokClassifier;
}

std::set<nn::Group> trained_groups(const TaskSpec& task, const FinetuneConfig& cfg) {
    if (cfg.freeze_backbone) return {head_group(task)};
    return {nn::Group::Backbone, head_group(task)};
}

nlohmann::json task_json(const TaskSpec& t) {
    return {{"name", t.name},
            {"level", t.level == TaskLevel::Sequence ? "sequence" : "token"},
            {"n_classes", t.n_classes}};
}

}  // namespace

Finetuner::Finetuner(const nn::Model& pretrained, const TaskSpec& task, const FinetuneConfig& cfg, std::uint64_t seed,
                     std::vector<LabeledWindow> data)
    : task_(task), cfg_(cfg), data_(std::move(data)), seed_(seed), model_(pretrained), rng_(seed) {
    cfg_.validate();
    if (data_.empty()) throw InvalidArgument("fine-tuning corpus is empty");
    splits_ = split_songs(task_, data_, seed_);
    if (task_.level == TaskLevel::Sequence)
        model_.ensure_seq_head(task_.n_classes, rng_);
    else
        model_.ensure_tok_head(task_.n_classes, rng_);
    nn::AdamWConfig oc;
    oc.lr = cfg_.lr;
    oc.weight_decay = cfg_.weight_decay;
    opt_ = nn::AdamW(oc, trained_groups(task_, cfg_));
    stop_.patience = cfg_.patience;
    stop_.max_epochs = cfg_.max_epochs;
    best_ = model_;
}

FinetuneEpoch Finetuner::run_epoch() {
    const std::set<std::string> train(splits_.train.begin(), splits_.train.end());
    std::vector<std::size_t> order;
    std::map<std::string, std::vector<OctupleToken>> song_tokens;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const auto& w = data_[i].window;
        if (!train.count(w.song_id)) continue;
        order.push_back(i);
        auto& v = song_tokens[w.song_id];
        v.insert(v.end(), w.tokens.begin(), w.tokens.begin() + w.real_length());
    }
    const bool augment = cfg_.augment && task_.augment;
    std::map<std::string, int> shift;
    if (augment) {
        std::uniform_int_distribution<int> dist(-11, 11);
        for (const auto& [song, toks] : song_tokens) shift[song] = feasible_shift(toks, dist(rng_));
    }
    std::shuffle(order.begin(), order.end(), rng_);

    double loss_sum = 0.0;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    nn::Params grads = model_.params().zeros_like();
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        const double scale = 1.0 / static_cast<double>(end - start);
        grads.set_zero();
        for (std::size_t b = start; b < end; ++b) {
            const LabeledWindow& lw = data_[order[b]];
            TokenWindow input = lw.window;
            if (augment) input.tokens = transpose_exact(input.tokens, shift[input.song_id]);
            input = mask_inputs(input, cfg_.p, rng_);

            nn::EncoderCache cache;
            nn::Matrix h = model_.encode(input, nn::Mode::Train, &rng_, cfg_.freeze_backbone ? nullptr : &cache);
            nn::Matrix dh = nn::Matrix::Zero(h.rows(), h.cols());
            nn::Matrix* dh_ptr = cfg_.freeze_backbone ? nullptr : &dh;
            if (task_.level == TaskLevel::Sequence) {
                nn::RowVector logits = model_.seq_classifier(h, input.attn_mask);
                nn::RowVector d = nn::RowVector::Zero(logits.size());
                loss_sum += nn::cross_entropy({logits.data(), static_cast<std::size_t>(logits.size())}, lw.labels[0],
                                              scale, {d.data(), static_cast<std::size_t>(d.size())});
                model_.seq_classifier_backward(h, input.attn_mask, d, grads, dh_ptr);
            } else {
                nn::Matrix logits = model_.tok_classifier(h);
                nn::Matrix d = nn::Matrix::Zero(logits.rows(), logits.cols());
                const int real = input.real_length();
                double wl = 0.0;
                for (int i = 0; i < real; ++i)
                    wl += nn::cross_entropy(nn::row_span(logits, i), lw.labels[static_cast<std::size_t>(i)],
                                            scale / real, nn::row_span(d, i));
                loss_sum += wl / real;
                model_.tok_classifier_backward(h, d, grads, dh_ptr);
            }
            if (!cfg_.freeze_backbone) model_.backward(cache, dh, grads);
        }
        opt_.step(model_.params(), grads);
    }

    FinetuneEpoch e;
    e.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>((order.size() + bs - 1) / bs);
    e.val_accuracy = evaluate(model_, task_, data_, splits_.validation).accuracy;
    e.improved = stop_.observe(e.val_accuracy);
    e.epoch = stop_.epoch;
    if (e.improved) best_ = model_;
    val_history_.push_back(e.val_accuracy);
    if (!model_.params().all_finite()) throw std::runtime_error("non-finite parameters after fine-tuning epoch");
    return e;
}

Checkpoint Finetuner::checkpoint() const {
    Checkpoint c;
    c.config = best_.config();
    c.params = best_.params();
    c.optimizers.emplace("finetune", opt_);
    std::ostringstream out;
    out << rng_;
    c.rng_state = out.str();
    c.meta = {{"kind", "finetune"},
              {"task", task_json(task_)},
              {"finetune", finetune_config_to_json(cfg_)},
              {"seed", seed_},
              {"early_stop",
               {{"best", stop_.best},
                {"best_epoch", stop_.best_epoch},
                {"since_improvement", stop_.since_improvement},
                {"epoch", stop_.epoch}}},
              {"val_history", val_history_}};
    model_.params().visit([&](const std::string& name, const nn::Matrix& m) {
        c.arrays["current/" + name].assign(m.data(), m.data() + m.size());
    });
    return c;
}

Finetuner Finetuner::resume(const Checkpoint& ckpt, const TaskSpec& task, const FinetuneConfig& cfg,
                            std::vector<LabeledWindow> data) {
    check_task_checkpoint(ckpt, task);
    if (ckpt.meta.at("finetune") != finetune_config_to_json(cfg))
        throw MismatchError("fine-tuning hyperparameters differ from the checkpoint");
    Finetuner t;
    t.task_ = task;
    t.cfg_ = cfg;
    t.data_ = std::move(data);
    t.seed_ = ckpt.meta.at("seed").get<std::uint64_t>();
    t.splits_ = split_songs(t.task_, t.data_, t.seed_);
    t.best_ = nn::Model(ckpt.config, ckpt.params);
    t.model_ = t.best_;
    t.model_.params().visit([&](const std::string& name, nn::Matrix& m) {
        auto it = ckpt.arrays.find("current/" + name);
        if (it == ckpt.arrays.end() || it->second.size() != static_cast<std::size_t>(m.size()))
            throw FormatError("fine-tuning checkpoint lacks the training state of '" + name + "'");
        std::copy(it->second.begin(), it->second.end(), m.data());
    });
    t.opt_ = ckpt.optimizers.at("finetune");
    const auto& es = ckpt.meta.at("early_stop");
    t.stop_.patience = cfg.patience;
    t.stop_.max_epochs = cfg.max_epochs;
    t.stop_.best = es.at("best").get<double>();
    t.stop_.best_epoch = es.at("best_epoch").get<int>();
    t.stop_.since_improvement = es.at("since_improvement").get<int>();
    t.stop_.epoch = es.at("epoch").get<int>();
    t.val_history_ = ckpt.meta.at("val_history").get<std::vector<double>>();
    std::istringstream in(ckpt.rng_state);
    in >> t.rng_;
    if (!in) throw FormatError("corrupt RNG state in checkpoint");
    return t;
}

void check_task_checkpoint(const Checkpoint& ckpt, const TaskSpec& task) {
    if (ckpt.meta.value("kind", "") != "finetune")
        throw MismatchError("checkpoint is not a fine-tuned checkpoint (kind '" + ckpt.meta.value("kind", "") + "')");
    const auto& t = ckpt.meta.at("task");
    if (t.at("level") != task_json(task).at("level"))
        throw MismatchError("checkpoint was fine-tuned for " + t.at("level").get<std::string>() + "-level task '" +
                            t.at("name").get<std::string>() + "', not for " + task.name);
    if (t.at("name") != task.name || t.at("n_classes") != task.n_classes)
        throw MismatchError("checkpoint was fine-tuned for task '" + t.at("name").get<std::string>() + "', not " +
                            task.name);
}

}  // namespace advmidi
