#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advmidi/midi_io.hpp"

namespace advmidi {

enum Attr : int {
    kTimeSig = 0,
    kTempo,
    kBar,
    kPosition,
    kInstrument,
    kPitch,
    kDuration,
    kVelocity,
};
inline constexpr int kNumAttributes = 8;
inline constexpr std::array<const char*, kNumAttributes> kAttrNames{
    "ts", "tempo", "bar", "position", "instrument", "pitch", "duration", "velocity"};

inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kFirstRealId = 2;

// Quantization grid shared by position and duration.
inline constexpr int kPositionsPerQuarter = 4;
inline constexpr int kMaxPositions = 64;
inline constexpr int kMaxDurationUnits = 64;
inline constexpr int kMaxBars = 256;
inline constexpr int kTempoBins = 49;
inline constexpr int kTempoMinBpm = 32;
inline constexpr int kTempoBinWidth = 4;
inline constexpr int kVelocityBins = 32;
inline constexpr int kDecodeTicksPerQuarter = 480;

struct TimeSignature {
    int numerator;
    int denominator;
    friend bool operator==(const TimeSignature&, const TimeSignature&) = default;
};

// The 17 signatures with dedicated ids; anything else maps to the fallback id.
inline constexpr std::array<TimeSignature, 17> kKnownTimeSignatures{{
    {1, 4}, {2, 4}, {3, 4}, {4, 4}, {5, 4}, {6, 4}, {7, 4}, {8, 4},
    {3, 8}, {5, 8}, {6, 8}, {7, 8}, {9, 8}, {12, 8},
    {2, 2}, {3, 2}, {4, 2},
}};

struct Vocabulary {
    std::array<int, kNumAttributes> sizes{};

    static Vocabulary standard();
    int size(int attr) const { return sizes[static_cast<std::size_t>(attr)]; }
    int fallback_time_sig_id() const { return sizes[kTimeSig] - 1; }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

struct OctupleToken {
    std::array<int, kNumAttributes> a{};

    static OctupleToken pad() { return {}; }
    static OctupleToken mask() {
        OctupleToken t;
        t.a.fill(kMaskId);
        return t;
    }
    bool is_pad() const;
    int& operator[](int j) { return a[static_cast<std::size_t>(j)]; }
    int operator[](int j) const { return a[static_cast<std::size_t>(j)]; }

    friend bool operator==(const OctupleToken&, const OctupleToken&) = default;
    friend auto operator<=>(const OctupleToken&, const OctupleToken&) = default;
};

struct TokenWindow {
    std::vector<OctupleToken> tokens;
    std::vector<std::uint8_t> attn_mask;  // 1 = real token, right padded
    std::string song_id;
    int origin_index = 0;  // index of tokens[0] within the song

    int length() const { return static_cast<int>(tokens.size()); }
    int real_length() const;

    friend bool operator==(const TokenWindow&, const TokenWindow&) = default;
};

// Quantization tables.
int time_sig_id(const Vocabulary& vocab, int numerator, int denominator);
TimeSignature time_sig_from_id(const Vocabulary& vocab, int id);
int tempo_bin(double bpm);
std::int64_t tempo_us_from_bin(int bin);
int velocity_bin(int velocity);
int velocity_from_bin(int bin);

/// One token per note, sorted by (bar, position, pitch). Bars are re-based to 0
/// whenever a note lies 256 or more bars past the current base. Throws
/// FormatError when consecutive notes are 256+ bars apart or a time signature
/// has a bar that does not fit the 64-position grid.
std::vector<OctupleToken> encode_song(const SongMeta& meta, std::vector<NoteEvent> notes,
                                      const Vocabulary& vocab = Vocabulary::standard());

struct DecodedSong {
    SongMeta meta;
    std::vector<NoteEvent> notes;
};

/// Inverse of encode_song up to quantization. Throws InvalidArgument naming the
/// first position holding a PAD or MASK attribute.
DecodedSong decode_song(const Vocabulary& vocab, const std::vector<OctupleToken>& tokens);

/// Largest shift of the same sign as `semitones` (|shift| <= |semitones|) that
/// keeps every pitch inside 0..127.
int feasible_shift(const std::vector<OctupleToken>& tokens, int semitones);

/// Shifts every pitch by the feasible shift for `semitones` in [-11, 11].
std::vector<OctupleToken> transpose(const std::vector<OctupleToken>& tokens, int semitones);
std::vector<OctupleToken> transpose_exact(const std::vector<OctupleToken>& tokens, int shift);

/// Non-overlapping windows of length L, right padded; bars re-based per window.
std::vector<TokenWindow> window_song(const Vocabulary& vocab, const std::vector<OctupleToken>& tokens, int L,
                                     const std::string& song_id = {});

void validate_token(const Vocabulary& vocab, const OctupleToken& t);

}  // namespace advmidi
