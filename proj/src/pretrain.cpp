#include "advmidi/pretrain.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "advmidi/error.hpp"

namespace advmidi {

void PretrainConfig::validate() const {
    if (!(p > 0.0 && p <= 100.0)) throw InvalidArgument("p must be in (0, 100]");
    if (!(q > 0.0 && q <= 50.0)) throw InvalidArgument("q must be in (0, 50]");
    if (a < 0.0 || a > 100.0) throw InvalidArgument("a must be in [0, 100]");
    if (b < 0.0 || b > 100.0) throw InvalidArgument("b must be in [0, 100]");
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(lr > 0.0) || !(masker_lr > 0.0)) throw InvalidArgument("learning rates must be positive");
    if (weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
}

nlohmann::json pretrain_config_to_json(const PretrainConfig& c) {
    return {{"p", c.p},
            {"q", c.q},
            {"a", c.a},
            {"b", c.b},
            {"k", c.k},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"masker_lr", c.masker_lr},
            {"weight_decay", c.weight_decay},
            {"augment", c.augment},
            {"shared_backbone", c.shared_backbone},
            {"freeze_policy", c.freeze_policy == FreezePolicy::Refresh ? "refresh" : "accumulate"}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
    PretrainConfig c;
    c.p = j.at("p").get<double>();
    c.q = j.at("q").get<double>();
    c.a = j.at("a").get<double>();
    c.b = j.at("b").get<double>();
    c.k = j.at("k").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.masker_lr = j.at("masker_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.augment = j.at("augment").get<bool>();
    c.shared_backbone = j.at("shared_backbone").get<bool>();
    c.freeze_policy = j.at("freeze_policy").get<std::string>() == "refresh" ? FreezePolicy::Refresh : FreezePolicy::Accumulate;
    return c;
}

nlohmann::json EpochMetrics::to_json() const {
    nlohmann::json acc = nlohmann::json::object();
    for (int j = 0; j < kNumAttributes; ++j) acc[kAttrNames[static_cast<std::size_t>(j)]] = accuracy[static_cast<std::size_t>(j)];
    return {{"epoch", epoch},
            {"accuracy", acc},
            {"mean_token_loss", mean_token_loss},
            {"masker_loss", masker_loss},
            {"frozen_fraction", frozen_fraction},
            {"froze", froze},
            {"chosen_tokens", chosen_tokens},
            {"skipped_windows", skipped_windows},
            {"weights", weights.w}};
}

std::map<std::string, int> song_lengths(const std::vector<TokenWindow>& corpus) {
    std::map<std::string, std::vector<std::pair<int, int>>> spans;
    for (const auto& w : corpus) spans[w.song_id].emplace_back(w.origin_index, w.real_length());
    std::map<std::string, int> out;
    for (auto& [song, s] : spans) {
        std::sort(s.begin(), s.end());
        int next = 0;
        for (auto [origin, len] : s) {
            if (origin != next) throw FormatError("windows of song '" + song + "' do not tile it (gap or overlap at " +
                                                  std::to_string(origin) + ")");
            next += len;
        }
        out[song] = next;
    }
    return out;
}

namespace {

std::set<nn::Group> masker_groups(const PretrainConfig& c) {
    if (c.shared_backbone) return {nn::Group::Masker, nn::Group::Backbone};
    return {nn::Group::Masker};
}

nn::AdamWConfig adam_cfg(double lr, double wd) {
    nn::AdamWConfig c;
    c.lr = lr;
    c.weight_decay = wd;
    return c;
}

}  // namespace

Pretrainer::Pretrainer(const nn::ModelConfig& model_cfg, const PretrainConfig& cfg, std::uint64_t seed)
    : model_cfg_(model_cfg), cfg_(cfg), rng_(seed) {
    cfg_.validate();
    model_cfg_.validate();
    model_ = nn::Model::create(model_cfg_, rng_);
    rec_opt_ = nn::AdamW(adam_cfg(cfg_.lr, cfg_.weight_decay), {nn::Group::Backbone, nn::Group::Recoverer});
    masker_opt_ = nn::AdamW(adam_cfg(cfg_.masker_lr, cfg_.weight_decay), masker_groups(cfg_));
}

Pretrainer Pretrainer::resume(const Checkpoint& ckpt, const PretrainConfig& cfg) {
    if (ckpt.meta.value("kind", "") != "pretrain") throw MismatchError("checkpoint is not a pre-training checkpoint");
    if (ckpt.meta.at("pretrain") != pretrain_config_to_json(cfg))
        throw MismatchError("pre-training hyperparameters differ from the checkpoint");
    Pretrainer t;
    t.model_cfg_ = ckpt.config;
    t.cfg_ = cfg;
    t.model_ = nn::Model(ckpt.config, ckpt.params);
    t.rec_opt_ = ckpt.optimizers.at("recoverer");
    t.masker_opt_ = ckpt.optimizers.at("masker");
    t.weights_ = ckpt.weights;
    t.registry_ = ckpt.registry;
    std::istringstream in(ckpt.rng_state);
    in >> t.rng_;
    if (!in) throw FormatError("corrupt RNG state in checkpoint");
    t.epoch_ = ckpt.meta.at("epoch").get<int>();
    t.cycle_epochs_ = ckpt.meta.at("cycle_epochs").get<int>();
    for (const auto& [name, values] : ckpt.arrays)
        if (name.rfind("cycle/", 0) == 0) t.cycle_sum_[name.substr(6)] = values;
    return t;
}

Checkpoint Pretrainer::checkpoint() const {
    Checkpoint c;
    c.config = model_cfg_;
    c.params = model_.params();
    c.optimizers.emplace("recoverer", rec_opt_);
    c.optimizers.emplace("masker", masker_opt_);
    c.weights = weights_;
    c.registry = registry_;
    std::ostringstream out;
    out << rng_;
    c.rng_state = out.str();
    c.meta = {{"kind", "pretrain"},
              {"epoch", epoch_},
              {"cycle_epochs", cycle_epochs_},
              {"pretrain", pretrain_config_to_json(cfg_)}};
    for (const auto& [song, sums] : cycle_sum_) c.arrays["cycle/" + song] = sums;
    return c;
}

struct Pretrainer::EpochTally {
    std::array<long, kNumAttributes> correct{};
    long chosen = 0;
    double loss_sum = 0.0;
    double masker_loss_sum = 0.0;
    long masker_windows = 0;
    int skipped = 0;
};

void Pretrainer::train_batch(const std::vector<TokenWindow>& windows, EpochTally& tally) {
    struct Planned {
        const TokenWindow* window;
        MaskPlan plan;
        std::vector<double> losses;
    };
    std::vector<Planned> planned;

    // Masking probabilities from the current masker, no gradient.
    for (const auto& w : windows) {
        nn::Vector probs = model_.masker_head(model_.encode(w, nn::Mode::Eval, nullptr, nullptr));
        auto& sums = cycle_sum_[w.song_id];
        for (int i = 0; i < w.real_length(); ++i)
            sums[static_cast<std::size_t>(w.origin_index + i)] += probs(i);

        std::set<int> frozen;
        for (int g : registry_.frozen_of(w.song_id))
            if (g >= w.origin_index && g < w.origin_index + w.length()) frozen.insert(g - w.origin_index);

        auto plan = plan_masks({probs.data(), static_cast<std::size_t>(probs.size())}, w, frozen, cfg_.p,
                               model_cfg_.vocab, rng_);
        if (!plan) {
            ++tally.skipped;
            continue;
        }
        for (int pos : plan->chosen)
            if (frozen.count(pos)) throw std::logic_error("frozen position selected for masking");
        planned.push_back({&w, std::move(*plan), {}});
    }
    if (planned.empty()) return;

    // Recovery step on backbone + recoverer.
    const double scale = 1.0 / static_cast<double>(planned.size());
    nn::Params grads = model_.params().zeros_like();
    for (auto& pw : planned) {
        TokenWindow input = apply_plan(*pw.window, pw.plan);
        nn::EncoderCache cache;
        nn::Matrix h = model_.encode(input, nn::Mode::Train, &rng_, &cache);
        auto logits = model_.recoverer_head(h, pw.plan.chosen);
        RecoveryLoss rl = recovery_loss(logits, pw.plan.originals, weights_);
        for (auto& d : rl.d_logits) d *= scale;
        nn::Matrix dh = nn::Matrix::Zero(h.rows(), h.cols());
        model_.recoverer_backward(h, pw.plan.chosen, rl.d_logits, grads, &dh);
        model_.backward(cache, dh, grads);

        for (int j = 0; j < kNumAttributes; ++j) tally.correct[static_cast<std::size_t>(j)] += rl.correct[static_cast<std::size_t>(j)];
        tally.chosen += static_cast<long>(pw.plan.chosen.size());
        tally.loss_sum += rl.total;
        pw.losses = std::move(rl.per_token);
    }
    rec_opt_.step(model_.params(), grads);

    // Masker step against the updated backbone.
    struct MaskerWork {
        nn::Matrix h;
        nn::EncoderCache cache;
        nn::Vector probs;
        nn::Vector d_probs;
    };
    std::vector<MaskerWork> work;
    double masker_loss_sum = 0.0;
    for (auto& pw : planned) {
        MaskerTargets t = masker_targets(pw.losses, cfg_.q);
        if (t.ones.empty()) continue;
        MaskerWork mw;
        mw.h = model_.encode(*pw.window, nn::Mode::Eval, nullptr, cfg_.shared_backbone ? &mw.cache : nullptr);
        mw.probs = model_.masker_head(mw.h);
        mw.d_probs = nn::Vector::Zero(mw.probs.size());
        std::vector<int> ones, zeros;
        for (int i : t.ones) ones.push_back(pw.plan.chosen[static_cast<std::size_t>(i)]);
        for (int i : t.zeros) zeros.push_back(pw.plan.chosen[static_cast<std::size_t>(i)]);
        masker_loss_sum += masker_loss({mw.probs.data(), static_cast<std::size_t>(mw.probs.size())}, ones, zeros,
                                       {mw.d_probs.data(), static_cast<std::size_t>(mw.d_probs.size())});
        work.push_back(std::move(mw));
    }
    if (work.empty()) return;
    tally.masker_loss_sum += masker_loss_sum;
    tally.masker_windows += static_cast<long>(work.size());

    const double mscale = 1.0 / static_cast<double>(work.size());
    grads.set_zero();
    for (auto& mw : work) {
        mw.d_probs *= mscale;
        if (cfg_.shared_backbone) {
            nn::Matrix dh = nn::Matrix::Zero(mw.h.rows(), mw.h.cols());
            model_.masker_backward(mw.h, mw.probs, mw.d_probs, grads, &dh);
            model_.backward(mw.cache, dh, grads);
        } else {
            model_.masker_backward(mw.h, mw.probs, mw.d_probs, grads, nullptr);
        }
    }
    masker_opt_.step(model_.params(), grads);
}

EpochMetrics Pretrainer::run_epoch(const std::vector<TokenWindow>& corpus) {
    if (corpus.empty()) throw InvalidArgument("pre-training corpus is empty");
    for (const auto& w : corpus)
        if (w.length() > model_cfg_.max_len)
            throw MismatchError("window length " + std::to_string(w.length()) + " exceeds model input length " +
                                std::to_string(model_cfg_.max_len));

    const auto lengths = song_lengths(corpus);
    for (const auto& [song, len] : lengths) {
        auto it = registry_.song_length.find(song);
        if (it != registry_.song_length.end() && it->second != len)
            throw MismatchError("song '" + song + "' changed length since the freeze registry was built");
        registry_.song_length[song] = len;
        auto& sums = cycle_sum_[song];
        if (sums.empty()) sums.assign(static_cast<std::size_t>(len), 0.0);
        if (static_cast<int>(sums.size()) != len) throw MismatchError("cycle statistics do not match song '" + song + "'");
    }

    // Fresh transposition per song for this epoch.
    std::map<std::string, int> shift;
    if (cfg_.augment) {
        std::map<std::string, std::vector<OctupleToken>> song_tokens;
        for (const auto& w : corpus) {
            auto& v = song_tokens[w.song_id];
            v.insert(v.end(), w.tokens.begin(), w.tokens.end());
        }
        std::uniform_int_distribution<int> dist(-11, 11);
        for (const auto& [song, toks] : song_tokens) shift[song] = feasible_shift(toks, dist(rng_));
    }

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);

    EpochTally tally;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<TokenWindow> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
            TokenWindow w = corpus[order[i]];
            if (cfg_.augment) w.tokens = transpose_exact(w.tokens, shift[w.song_id]);
            batch.push_back(std::move(w));
        }
        train_batch(batch, tally);
    }

    ++epoch_;
    ++cycle_epochs_;
    EpochMetrics m;
    m.epoch = epoch_;
    m.chosen_tokens = tally.chosen;
    m.skipped_windows = tally.skipped;
    if (tally.chosen > 0) {
        for (std::size_t j = 0; j < m.accuracy.size(); ++j)
            m.accuracy[j] = static_cast<double>(tally.correct[j]) / static_cast<double>(tally.chosen);
        m.mean_token_loss = tally.loss_sum / static_cast<double>(tally.chosen);
        weights_ = update_weights(m.accuracy);
    }
    if (tally.masker_windows > 0) m.masker_loss = tally.masker_loss_sum / static_cast<double>(tally.masker_windows);

    if (epoch_ % cfg_.k == 0) {
        std::map<std::string, std::vector<double>> means;
        for (auto& [song, sums] : cycle_sum_) {
            auto& v = means[song];
            v.resize(sums.size());
            for (std::size_t i = 0; i < sums.size(); ++i) v[i] = sums[i] / cycle_epochs_;
            std::fill(sums.begin(), sums.end(), 0.0);
        }
        freeze_update(registry_, means, cfg_.a, cfg_.b, rng_, cfg_.freeze_policy);
        cycle_epochs_ = 0;
        m.froze = true;
    }
    m.frozen_fraction = registry_.frozen_fraction();
    m.weights = weights_;
    if (!model_.params().all_finite()) throw std::runtime_error("non-finite parameters after epoch " + std::to_string(epoch_));
    return m;
}

}  // namespace advmidi
