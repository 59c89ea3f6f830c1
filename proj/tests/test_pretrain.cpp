#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "advmidi/checkpoint.hpp"
#include "advmidi/error.hpp"
#include "advmidi/pretrain.hpp"
#include "advmidi/synth.hpp"
#include "support.hpp"

using namespace advmidi;

namespace {

nn::ModelConfig tiny_model() {
    nn::ModelConfig m;
    m.hidden = 16;
    m.layers = 1;
    m.heads = 2;
    m.inner = 32;
    m.max_len = 32;
    return m;
}

PretrainConfig tiny_cfg() {
    PretrainConfig c;
    c.k = 2;
    c.batch_size = 4;
    c.lr = 1e-3;
    c.masker_lr = 1e-3;
    return c;
}

const std::vector<TokenWindow>& corpus() {
    static const std::vector<TokenWindow> w = [] {
        SynthSpec s;
        s.n_songs = 6;
        s.notes_per_song = 48;
        s.seed = 3;
        return testing::synth_windows(generate_synth(s), 32);
    }();
    return w;
}

std::vector<std::pair<std::string, nn::Matrix>> flat(const nn::Params& p) {
    std::vector<std::pair<std::string, nn::Matrix>> out;
    p.visit([&](const std::string& name, const nn::Matrix& m) { out.emplace_back(name, m); });
    return out;
}

bool same_params(const nn::Params& a, const nn::Params& b) { return flat(a) == flat(b); }

}  // namespace

TEST_CASE("pretrain config validation and JSON", "[pretrain]") {
    PretrainConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.p = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.q = 51;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.k = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    c.freeze_policy = FreezePolicy::Accumulate;
    c.shared_backbone = true;
    c.b = 12.5;
    auto back = pretrain_config_from_json(pretrain_config_to_json(c));
    CHECK(back.freeze_policy == FreezePolicy::Accumulate);
    CHECK(back.shared_backbone);
    CHECK(back.b == 12.5);
}

TEST_CASE("song_lengths checks tiling", "[pretrain]") {
    auto w = corpus();
    auto lengths = song_lengths(w);
    CHECK(lengths.size() == 6);
    for (const auto& [id, len] : lengths) CHECK(len == 48);
    // Drop the first window of the first song: a gap at the start.
    auto gappy = w;
    gappy.erase(gappy.begin());
    CHECK_THROWS_AS(song_lengths(gappy), FormatError);
}

TEST_CASE("one epoch produces sane metrics", "[pretrain]") {
    Pretrainer t(tiny_model(), tiny_cfg(), 1);
    auto m = t.run_epoch(corpus());
    CHECK(m.epoch == 1);
    CHECK_FALSE(m.froze);
    CHECK(m.frozen_fraction == 0.0);
    // 12 windows of 16 or 32 real tokens: round(15%) each.
    long expect = 0;
    for (const auto& w : corpus()) expect += std::max(1, percent_count(15, w.real_length()));
    CHECK(m.chosen_tokens == expect);
    for (double a : m.accuracy) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    double sum = 0.0;
    for (double x : m.weights.w) sum += x;
    CHECK(sum == Catch::Approx(1.0));
    CHECK(std::isfinite(m.mean_token_loss));
    auto j = m.to_json();
    CHECK(j.at("epoch") == 1);
    CHECK(j.at("accuracy").size() == 8);
}

TEST_CASE("freeze happens every k epochs at about a percent", "[pretrain]") {
    Pretrainer t(tiny_model(), tiny_cfg(), 2);
    auto m1 = t.run_epoch(corpus());
    auto m2 = t.run_epoch(corpus());
    CHECK_FALSE(m1.froze);
    CHECK(m2.froze);
    // 6 songs of 48 tokens: round(14.4) = 14 each.
    CHECK(t.registry().total_frozen() == 6 * 14);
    CHECK(m2.frozen_fraction == Catch::Approx(14.0 / 48.0));
    auto m4 = (t.run_epoch(corpus()), t.run_epoch(corpus()));
    CHECK(m4.froze);
    CHECK(t.registry().total_frozen() == 6 * 14);
    // Frozen tokens are not candidates, so fewer tokens are chosen.
    CHECK(m4.chosen_tokens < m1.chosen_tokens);
}

TEST_CASE("same seed gives bit-identical training", "[pretrain]") {
    Pretrainer a(tiny_model(), tiny_cfg(), 7), b(tiny_model(), tiny_cfg(), 7), c(tiny_model(), tiny_cfg(), 8);
    for (int e = 0; e < 3; ++e) {
        auto ma = a.run_epoch(corpus());
        auto mb = b.run_epoch(corpus());
        c.run_epoch(corpus());
        CHECK(ma.to_json() == mb.to_json());
    }
    CHECK(same_params(a.model().params(), b.model().params()));
    CHECK(a.registry() == b.registry());
    CHECK_FALSE(same_params(a.model().params(), c.model().params()));
}

TEST_CASE("checkpoint round trip and resume equivalence", "[pretrain]") {
    testing::TempDir dir("pretrain");
    const auto path = dir.str("p.ckpt");

    Pretrainer straight(tiny_model(), tiny_cfg(), 11);
    std::vector<nlohmann::json> straight_metrics;
    for (int e = 0; e < 5; ++e) straight_metrics.push_back(straight.run_epoch(corpus()).to_json());

    Pretrainer first(tiny_model(), tiny_cfg(), 11);
    for (int e = 0; e < 3; ++e) CHECK(first.run_epoch(corpus()).to_json() == straight_metrics[static_cast<std::size_t>(e)]);
    save_checkpoint(path, first.checkpoint());

    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.config == first.checkpoint().config);
    CHECK(same_params(loaded.params, first.model().params()));
    CHECK(loaded.registry == first.registry());
    CHECK(loaded.rng_state == first.checkpoint().rng_state);
    CHECK(loaded.arrays == first.checkpoint().arrays);

    Pretrainer resumed = Pretrainer::resume(loaded, tiny_cfg());
    CHECK(resumed.epoch() == 3);
    for (int e = 3; e < 5; ++e) CHECK(resumed.run_epoch(corpus()).to_json() == straight_metrics[static_cast<std::size_t>(e)]);
    CHECK(same_params(resumed.model().params(), straight.model().params()));
    CHECK(resumed.registry() == straight.registry());
}

TEST_CASE("resume rejects different hyperparameters", "[pretrain]") {
    Pretrainer t(tiny_model(), tiny_cfg(), 1);
    t.run_epoch(corpus());
    auto other = tiny_cfg();
    other.a = 20;
    CHECK_THROWS_AS(Pretrainer::resume(t.checkpoint(), other), MismatchError);
}

TEST_CASE("corrupt checkpoints are rejected", "[pretrain]") {
    testing::TempDir dir("ckpt");
    Pretrainer t(tiny_model(), tiny_cfg(), 1);
    save_checkpoint(dir.str("a.ckpt"), t.checkpoint());
    auto bytes = read_file_bytes(dir.str("a.ckpt"));
    {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
        std::ofstream(dir.str("cut.ckpt"), std::ios::binary).write(reinterpret_cast<const char*>(cut.data()),
                                                                    static_cast<std::streamsize>(cut.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.str("cut.ckpt")), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir.str("missing.ckpt")), FormatError);
}

TEST_CASE("windows longer than the model input are rejected", "[pretrain]") {
    auto m = tiny_model();
    m.max_len = 16;
    Pretrainer t(m, tiny_cfg(), 1);
    CHECK_THROWS_AS(t.run_epoch(corpus()), MismatchError);
    CHECK_THROWS_AS(t.run_epoch({}), InvalidArgument);
}
