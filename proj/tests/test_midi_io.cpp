#include <catch_amalgamated.hpp>

#include "advmidi/error.hpp"
#include "advmidi/midi_io.hpp"
#include "support.hpp"

using namespace advmidi;
using testing::cat;
using testing::smf_header;
using testing::smf_track;
using testing::vlq;

namespace {

std::vector<std::uint8_t> end_of_track() { return {0x00, 0xFF, 0x2F, 0x00}; }

}  // namespace

TEST_CASE("single note on and off gives one event", "[midi_io]") {
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0x90, 60, 64}, vlq(480), {0x80, 60, 0}, end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 1);
    const NoteEvent& n = parsed.notes[0];
    CHECK(n.onset_ticks == 0);
    CHECK(n.duration_ticks == 480);
    CHECK(n.pitch == 60);
    CHECK(n.velocity == 64);
    CHECK(n.instrument == 0);
    CHECK(parsed.meta.ticks_per_quarter == 480);
}

TEST_CASE("note-on with velocity zero ends the note", "[midi_io]") {
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0x90, 60, 64}, vlq(240), {0x90, 60, 0}, end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 1);
    CHECK(parsed.notes[0].duration_ticks == 240);
}

TEST_CASE("missing tempo and time signature get defaults at tick 0", "[midi_io]") {
    auto bytes = cat({smf_header(0, 1, 96), smf_track(cat({{0x00, 0x90, 62, 10}, vlq(10), {0x80, 62, 0}, end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.meta.tempo_changes.size() == 1);
    CHECK(parsed.meta.tempo_changes[0] == TempoChange{0, 500000});
    REQUIRE(parsed.meta.timesig_changes.size() == 1);
    CHECK(parsed.meta.timesig_changes[0] == TimeSigChange{0, 4, 4});
}

TEST_CASE("tempo and time signature meta events are read", "[midi_io]") {
    // 3/8 at tick 0 (denominator as power of two: 3), tempo 400000 at tick 0.
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0xFF, 0x51, 0x03, 0x06, 0x1A, 0x80},
                                     {0x00, 0xFF, 0x58, 0x04, 3, 3, 24, 8},
                                     {0x00, 0x90, 60, 64},
                                     vlq(100),
                                     {0x80, 60, 0},
                                     end_of_track()}))});
    auto parsed = parse_midi(bytes);
    CHECK(parsed.meta.tempo_changes[0] == TempoChange{0, 400000});
    CHECK(parsed.meta.timesig_changes[0] == TimeSigChange{0, 3, 8});
}

TEST_CASE("running status is honored", "[midi_io]") {
    // Second and third events reuse status 0x90.
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0x90, 60, 64}, {0x00, 64, 70}, vlq(120), {60, 0}, vlq(120), {64, 0},
                                     end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 2);
    CHECK(parsed.notes[0].pitch == 60);
    CHECK(parsed.notes[0].duration_ticks == 120);
    CHECK(parsed.notes[1].pitch == 64);
    CHECK(parsed.notes[1].velocity == 70);
    CHECK(parsed.notes[1].duration_ticks == 240);
}

TEST_CASE("program change sets the instrument and channel 9 is percussion", "[midi_io]") {
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0xC1, 40},
                                     {0x00, 0x91, 70, 50},
                                     {0x00, 0x99, 36, 90},
                                     vlq(60),
                                     {0x81, 70, 0},
                                     {0x00, 0x89, 36, 0},
                                     end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 2);
    // Sorted by onset then pitch: 36 (drum) first.
    CHECK(parsed.notes[0].pitch == 36);
    CHECK(parsed.notes[0].instrument == kPercussionInstrument);
    CHECK(parsed.notes[1].instrument == 40);
}

TEST_CASE("overlapping same-pitch notes resolve first-on first-off", "[midi_io]") {
    // on@0 v10, on@100 v20, off@200, off@300
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0x90, 60, 10}, vlq(100), {0x90, 60, 20}, vlq(100), {0x80, 60, 0}, vlq(100),
                                     {0x80, 60, 0}, end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 2);
    CHECK(parsed.notes[0] == NoteEvent{0, 200, 60, 10, 0, 0});
    CHECK(parsed.notes[1] == NoteEvent{100, 200, 60, 20, 0, 0});
}

TEST_CASE("unmatched note-on is closed at the end of the track with a warning", "[midi_io]") {
    auto bytes = cat({smf_header(0, 1, 480),
                      smf_track(cat({{0x00, 0x90, 60, 64}, vlq(300), {0xFF, 0x2F, 0x00}}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 1);
    CHECK(parsed.notes[0].duration_ticks == 300);
    CHECK_FALSE(parsed.warnings.empty());
}

TEST_CASE("format 1 tracks are merged and keep their track index", "[midi_io]") {
    auto bytes = cat({smf_header(1, 2, 480), smf_track(cat({{0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20}, end_of_track()})),
                      smf_track(cat({{0x00, 0x90, 67, 80}, vlq(480), {0x80, 67, 0}, end_of_track()}))});
    auto parsed = parse_midi(bytes);
    REQUIRE(parsed.notes.size() == 1);
    CHECK(parsed.notes[0].track == 1);
}

TEST_CASE("format 2, bad header and truncation are rejected", "[midi_io]") {
    auto good = cat({smf_header(0, 1, 480), smf_track(cat({{0x00, 0x90, 60, 64}, vlq(480), {0x80, 60, 0}, end_of_track()}))});
    auto fmt2 = cat({smf_header(2, 1, 480), smf_track(end_of_track())});
    CHECK_THROWS_AS(parse_midi(fmt2), FormatError);
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_midi(bad), FormatError);
    // Every strict prefix either errors cleanly or parses; never crashes.
    for (std::size_t n = 0; n < good.size(); ++n) {
        std::vector<std::uint8_t> prefix(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
        try {
            (void)parse_midi(prefix);
        } catch (const FormatError&) {
        }
    }
    CHECK_THROWS_AS(parse_midi(std::vector<std::uint8_t>(good.begin(), good.begin() + 20)), FormatError);
}

TEST_CASE("random byte corruption never crashes the parser", "[midi_io]") {
    std::mt19937_64 rng(7);
    auto song = testing::random_song(rng, 40);
    auto bytes = write_midi(song.meta, song.notes);
    std::uniform_int_distribution<std::size_t> pos(0, bytes.size() - 1);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int trial = 0; trial < 300; ++trial) {
        auto b = bytes;
        for (int k = 0; k < 3; ++k) b[pos(rng)] = static_cast<std::uint8_t>(byte(rng));
        try {
            (void)parse_midi(b);
        } catch (const FormatError&) {
        }
    }
    SUCCEED();
}

TEST_CASE("write then parse is the identity", "[midi_io]") {
    SECTION("empty note list gives a valid file") {
        SongMeta meta;
        auto parsed = parse_midi(write_midi(meta, {}));
        CHECK(parsed.notes.empty());
        CHECK(parsed.meta == meta);
    }
    SECTION("percussion goes to channel 9") {
        SongMeta meta;
        auto bytes = write_midi(meta, {NoteEvent{0, 120, 38, 100, kPercussionInstrument, 0}});
        // Find a note-on status byte on channel 9.
        bool found = false;
        for (std::size_t i = 0; i + 2 < bytes.size(); ++i)
            if (bytes[i] == 0x99 && bytes[i + 1] == 38 && bytes[i + 2] == 100) found = true;
        CHECK(found);
        CHECK(parse_midi(bytes).notes[0].instrument == kPercussionInstrument);
    }
    SECTION("random songs with tempo and meter changes") {
        std::mt19937_64 rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            auto s = testing::random_song(rng, 60);
            s.meta.tempo_changes.push_back({960, 300000});
            s.meta.timesig_changes.push_back({1920, 3, 4});
            for (std::size_t i = 0; i < s.notes.size(); ++i) s.notes[i].track = static_cast<int>(i % 3);
            sort_notes(s.notes);
            auto parsed = parse_midi(write_midi(s.meta, s.notes));
            REQUIRE(parsed.meta == s.meta);
            REQUIRE(parsed.notes == s.notes);
        }
    }
}

TEST_CASE("invalid notes are rejected by the writer", "[midi_io]") {
    SongMeta meta;
    CHECK_THROWS_AS(write_midi(meta, {NoteEvent{0, 0, 60, 64, 0, 0}}), InvalidArgument);
    CHECK_THROWS_AS(write_midi(meta, {NoteEvent{0, 10, 128, 64, 0, 0}}), InvalidArgument);
    CHECK_THROWS_AS(write_midi(meta, {NoteEvent{0, 10, 60, 0, 0, 0}}), InvalidArgument);
}
