#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advmidi/midi_io.hpp"
#include "advmidi/tokenizer.hpp"

namespace advmidi {

enum class PlantAttribute { Velocity, Pitch };

struct SynthSpec {
    int n_songs = 200;
    int notes_per_song = 256;
    int n_styles = 8;  // 1..8
    double planted_rate = 0.1;
    PlantAttribute plant = PlantAttribute::Velocity;
    std::uint64_t seed = 0;

    void validate() const;
};

// Voice roles, also the melody-task classes.
inline constexpr int kRoleMelody = 0;
inline constexpr int kRoleBridge = 1;
inline constexpr int kRoleAccompaniment = 2;

// Skewed categorical distribution for planted values.
inline constexpr std::array<int, 4> kPlantedVelocities{8, 24, 112, 124};
inline constexpr std::array<int, 4> kPlantedPitches{21, 27, 104, 110};
inline constexpr std::array<double, 4> kPlantedProbs{0.55, 0.25, 0.12, 0.08};

struct SynthSong {
    std::string id;
    SongMeta meta;
    std::vector<NoteEvent> notes;  // sorted; note i becomes token i
    int style = 0;
    int emotion = 0;
    std::vector<int> roles;    // per note
    std::vector<int> planted;  // ascending note indices
};

struct SynthCorpus {
    SynthSpec spec;
    std::vector<SynthSong> songs;
};

/// Deterministic in (spec, seed). Song i has style i % n_styles.
SynthCorpus generate_synth(const SynthSpec& spec);

/// Generates song `index` alone with the same result it has inside the corpus.
SynthSong generate_synth_song(const SynthSpec& spec, int index);

// The generative rule. Every bar holds one note per sixteenth step; a
// non-planted note is fully determined by (style, step) plus the song's root.
int style_role(int style, int step);
int style_pitch_offset(int style, int step);  // pitch = 48 + root + offset
int style_duration(int style, int step);      // in sixteenths
int style_velocity(int style, int step);

/// Writes midi/<id>.mid, composer.labels, emotion.labels, melody.labels and
/// planted.manifest under `dir`.
void write_synth_corpus(const std::string& dir, const SynthCorpus& corpus);

struct ChiSquaredResult {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
};

/// Pearson chi-squared test of independence on a contingency table (rows x
/// cols of counts). Rows or columns that are entirely zero are dropped.
ChiSquaredResult chi_squared_independence(const std::vector<std::vector<long>>& table);

}  // namespace advmidi
