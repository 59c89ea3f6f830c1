#include <catch_amalgamated.hpp>

#include <cmath>

#include "advmidi/error.hpp"
#include "advmidi/tokenizer.hpp"
#include "support.hpp"

using namespace advmidi;

namespace {

const Vocabulary kVocab = Vocabulary::standard();

// Hand-written quantization oracles, independent of the library tables.
int oracle_tempo_id(double bpm) {
    double bin = std::floor((bpm - 32.0) / 4.0 + 0.5);
    return 2 + static_cast<int>(std::min(48.0, std::max(0.0, bin)));
}
int oracle_velocity_id(int v) {
    // 32 equal bins over 1..127: bin b covers [1 + 127b/32, 1 + 127(b+1)/32).
    for (int b = 0; b < 32; ++b)
        if (v - 1 < 127.0 * (b + 1) / 32.0) return 2 + b;
    return 2 + 31;
}

std::vector<OctupleToken> line_of_notes(int n, int bars_per_note = 0) {
    SongMeta meta;
    std::vector<NoteEvent> notes;
    for (int i = 0; i < n; ++i)
        notes.push_back(NoteEvent{static_cast<std::int64_t>(i) * (bars_per_note ? 1920 * bars_per_note : 120), 120,
                                  40 + i % 40, 80, 0, 0});
    return encode_song(meta, notes);
}

}  // namespace

TEST_CASE("vocabulary sizes", "[tokenizer]") {
    CHECK(kVocab.sizes == std::array<int, 8>{2 + 17 + 1, 2 + 49, 2 + 256, 2 + 64, 2 + 129, 2 + 128, 2 + 64, 2 + 32});
}

TEST_CASE("quarter-note C4 at 120 BPM in 4/4", "[tokenizer]") {
    SongMeta meta;
    meta.ticks_per_quarter = 480;
    meta.tempo_changes = {{0, 500000}};
    auto toks = encode_song(meta, {NoteEvent{0, 480, 60, 64, 0, 0}});
    REQUIRE(toks.size() == 1);
    const auto& t = toks[0];
    CHECK(t[kTimeSig] == 2 + 3);  // 4/4 is the fourth known signature
    CHECK(t[kTempo] == oracle_tempo_id(120.0));
    CHECK(t[kTempo] == 24);
    CHECK(t[kBar] == 2);
    CHECK(t[kPosition] == 2);
    CHECK(t[kInstrument] == 2);
    CHECK(t[kPitch] == 62);
    CHECK(t[kDuration] == 2 + 4 - 1);  // four sixteenths
    CHECK(t[kVelocity] == oracle_velocity_id(64));
}

TEST_CASE("empty song encodes to nothing and decodes to nothing", "[tokenizer]") {
    CHECK(encode_song(SongMeta{}, {}).empty());
    CHECK(decode_song(kVocab, {}).notes.empty());
}

TEST_CASE("simultaneous notes differ only in pitch and are ordered by pitch", "[tokenizer]") {
    auto toks = encode_song(SongMeta{}, {NoteEvent{0, 480, 64, 64, 0, 0}, NoteEvent{0, 480, 60, 64, 0, 0}});
    REQUIRE(toks.size() == 2);
    CHECK(toks[0][kPitch] == 62);
    CHECK(toks[1][kPitch] == 66);
    for (int j = 0; j < kNumAttributes; ++j)
        if (j != kPitch) CHECK(toks[0][j] == toks[1][j]);
}

TEST_CASE("bar and position follow the active time signature", "[tokenizer]") {
    SongMeta meta;
    meta.timesig_changes = {{0, 3, 4}};
    // 3/4 bar = 12 sixteenths = 1440 ticks; onset 1560 -> bar 1, position 1.
    auto toks = encode_song(meta, {NoteEvent{1560, 120, 60, 64, 0, 0}});
    CHECK(toks[0][kBar] == 3);
    CHECK(toks[0][kPosition] == 3);
    CHECK(toks[0][kTimeSig] == 2 + 2);
}

TEST_CASE("unknown time signature maps to the fallback id", "[tokenizer]") {
    SongMeta meta;
    meta.timesig_changes = {{0, 11, 16}};
    // 11/16 = 11 sixteenths per bar, fits the grid.
    auto toks = encode_song(meta, {NoteEvent{0, 120, 60, 64, 0, 0}});
    CHECK(toks[0][kTimeSig] == kVocab.size(kTimeSig) - 1);
}

TEST_CASE("durations and tempi are clamped", "[tokenizer]") {
    SongMeta meta;
    meta.tempo_changes = {{0, 60000000 / 400}};
    auto toks = encode_song(meta, {NoteEvent{0, 480 * 100, 60, 64, 0, 0}, NoteEvent{0, 1, 61, 64, 0, 0}});
    CHECK(toks[0][kDuration] == 2 + 63);
    CHECK(toks[1][kDuration] == 2);
    CHECK(toks[0][kTempo] == 2 + 48);
}

TEST_CASE("velocity bins match the equal-width oracle everywhere", "[tokenizer]") {
    for (int v = 1; v <= 127; ++v) CHECK(2 + velocity_bin(v) == oracle_velocity_id(v));
    for (int b = 0; b < 32; ++b) CHECK(velocity_bin(velocity_from_bin(b)) == b);
}

TEST_CASE("decode then encode reproduces the tokens", "[tokenizer]") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        auto s = testing::random_song(rng, 80);
        if (trial % 3 == 1) s.meta.timesig_changes.push_back({1920 * 2, 6, 8});
        if (trial % 4 == 2) s.meta.tempo_changes.push_back({960, 400000});
        auto toks = encode_song(s.meta, s.notes);
        auto dec = decode_song(kVocab, toks);
        REQUIRE(encode_song(dec.meta, dec.notes) == toks);
    }
}

TEST_CASE("songs longer than 256 bars re-base bar ids", "[tokenizer]") {
    auto toks = line_of_notes(300, 1);  // one note per bar
    REQUIRE(toks.size() == 300);
    CHECK(toks[255][kBar] == 2 + 255);
    CHECK(toks[256][kBar] == 2);
    auto dec = decode_song(kVocab, toks);
    CHECK(dec.notes[299].onset_ticks == 299LL * 1920);
    CHECK(encode_song(dec.meta, dec.notes) == toks);
}

TEST_CASE("a gap of 256 bars is an error", "[tokenizer]") {
    CHECK_THROWS_AS(encode_song(SongMeta{}, {NoteEvent{0, 120, 60, 64, 0, 0}, NoteEvent{1920LL * 256, 120, 60, 64, 0, 0}}),
                    FormatError);
}

TEST_CASE("decode rejects PAD and MASK attributes with the position", "[tokenizer]") {
    auto toks = line_of_notes(5);
    toks[3][kVelocity] = kMaskId;
    try {
        decode_song(kVocab, toks);
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("token 3") != std::string::npos);
    }
}

TEST_CASE("transpose", "[tokenizer]") {
    auto toks = line_of_notes(10);
    SECTION("shifts pitch only") {
        auto up = transpose(toks, 3);
        for (std::size_t i = 0; i < toks.size(); ++i) {
            CHECK(up[i][kPitch] == toks[i][kPitch] + 3);
            for (int j = 0; j < kNumAttributes; ++j)
                if (j != kPitch) CHECK(up[i][j] == toks[i][j]);
        }
    }
    SECTION("zero is the identity") { CHECK(transpose(toks, 0) == toks); }
    SECTION("out of range shifts fall back to the nearest feasible one") {
        auto high = encode_song(SongMeta{}, {NoteEvent{0, 120, 127, 64, 0, 0}, NoteEvent{0, 120, 100, 64, 0, 0}});
        CHECK(transpose(high, 5) == high);
        auto low = encode_song(SongMeta{}, {NoteEvent{0, 120, 2, 64, 0, 0}});
        CHECK(transpose(low, -5)[0][kPitch] == 2);  // shift -2 reaches pitch 0
    }
    SECTION("preserves pairwise intervals") {
        std::mt19937_64 rng(5);
        auto s = testing::random_song(rng, 50);
        auto t0 = encode_song(s.meta, s.notes);
        for (int k = -11; k <= 11; ++k) {
            auto t1 = transpose(t0, k);
            for (std::size_t i = 1; i < t0.size(); ++i)
                CHECK(t1[i][kPitch] - t1[0][kPitch] == t0[i][kPitch] - t0[0][kPitch]);
        }
    }
    SECTION("rejects more than 11 semitones") {
        CHECK_THROWS_AS(transpose(toks, 12), InvalidArgument);
        CHECK_THROWS_AS(transpose(toks, -12), InvalidArgument);
    }
}

TEST_CASE("window_song", "[tokenizer]") {
    SECTION("2050 tokens with L = 1024") {
        auto toks = line_of_notes(2050);
        auto w = window_song(kVocab, toks, 1024, "s");
        REQUIRE(w.size() == 3);
        CHECK(w[0].real_length() == 1024);
        CHECK(w[1].real_length() == 1024);
        CHECK(w[2].real_length() == 2);
        CHECK(w[2].origin_index == 2048);
        for (int i = 2; i < 1024; ++i) {
            CHECK(w[2].tokens[static_cast<std::size_t>(i)].is_pad());
            CHECK(w[2].attn_mask[static_cast<std::size_t>(i)] == 0);
        }
    }
    SECTION("no tokens, no windows") { CHECK(window_song(kVocab, {}, 16).empty()); }
    SECTION("bars re-based per window") {
        // One note per bar: window 2 (tokens 40..79 with L = 40) starts at bar 40.
        auto toks = line_of_notes(100, 1);
        auto w = window_song(kVocab, toks, 40, "s");
        REQUIRE(w.size() == 3);
        CHECK(toks[40][kBar] == 2 + 40);
        CHECK(w[1].tokens[0][kBar] == 2);
        CHECK(w[1].tokens[5][kBar] == 2 + 5);
        for (std::size_t i = 0; i < 40; ++i)
            for (int j = 0; j < kNumAttributes; ++j)
                if (j != kBar) CHECK(w[1].tokens[i][j] == toks[40 + i][j]);
    }
    SECTION("transposition commutes with windowing") {
        std::mt19937_64 rng(9);
        auto s = testing::random_song(rng, 90);
        auto toks = encode_song(s.meta, s.notes);
        const int shift = feasible_shift(toks, 7);
        auto a = window_song(kVocab, transpose_exact(toks, shift), 16);
        auto b = window_song(kVocab, toks, 16);
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            auto tb = b[k];
            for (int i = 0; i < tb.real_length(); ++i) tb.tokens[static_cast<std::size_t>(i)][kPitch] += shift;
            CHECK(a[k] == tb);
        }
    }
}

TEST_CASE("fuzzed songs emit in-range ids", "[tokenizer]") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = testing::random_song(rng, 100);
        for (const auto& t : encode_song(s.meta, s.notes)) {
            REQUIRE_NOTHROW(validate_token(kVocab, t));
            for (int j = 0; j < kNumAttributes; ++j) REQUIRE(t[j] >= kFirstRealId);
        }
    }
}
