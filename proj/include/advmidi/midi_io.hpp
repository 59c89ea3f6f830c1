#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace advmidi {

inline constexpr int kPercussionInstrument = 128;
inline constexpr int kPercussionChannel = 9;
inline constexpr std::int64_t kDefaultTempo = 500000;  // microseconds per quarter

struct NoteEvent {
    std::int64_t onset_ticks = 0;
    std::int64_t duration_ticks = 1;
    int pitch = 60;
    int velocity = 64;
    int instrument = 0;  // 0..127 GM program, 128 = percussion
    int track = 0;

    friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

// Canonical note order used by the parser and expected by the tokenizer.
bool note_less(const NoteEvent& a, const NoteEvent& b);
void sort_notes(std::vector<NoteEvent>& notes);

struct TempoChange {
    std::int64_t tick = 0;
    std::int64_t us_per_quarter = kDefaultTempo;
    friend bool operator==(const TempoChange&, const TempoChange&) = default;
};

struct TimeSigChange {
    std::int64_t tick = 0;
    int numerator = 4;
    int denominator = 4;
    friend bool operator==(const TimeSigChange&, const TimeSigChange&) = default;
};

struct SongMeta {
    int ticks_per_quarter = 480;
    std::vector<TempoChange> tempo_changes{TempoChange{}};
    std::vector<TimeSigChange> timesig_changes{TimeSigChange{}};

    friend bool operator==(const SongMeta&, const SongMeta&) = default;
};

struct ParsedMidi {
    SongMeta meta;
    std::vector<NoteEvent> notes;
    // Non-fatal oddities, e.g. note-ons closed at end of track.
    std::vector<std::string> warnings;
};

/// Parses an SMF format 0 or 1 file. Throws FormatError on malformed or
/// truncated input and on format-2 files.
ParsedMidi parse_midi(std::span<const std::uint8_t> bytes);

/// Writes a format-1 SMF. Track 0 carries tempo and time-signature meta events
/// plus the notes whose track is 0; track t > 0 carries the notes of track t.
/// Throws InvalidArgument if a note violates the NoteEvent ranges or a single
/// track needs more than 15 melodic channels.
std::vector<std::uint8_t> write_midi(const SongMeta& meta, const std::vector<NoteEvent>& notes);

void validate_note(const NoteEvent& n);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace advmidi
