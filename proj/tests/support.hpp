#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "advmidi/midi_io.hpp"
#include "advmidi/nn/model.hpp"
#include "advmidi/synth.hpp"
#include "advmidi/tokenizer.hpp"

namespace testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& child = "") const;

private:
    std::filesystem::path path_;
};

// Byte-level SMF assembly for hand-written fixtures.
std::vector<std::uint8_t> smf_header(int format, int ntracks, int division);
std::vector<std::uint8_t> smf_track(const std::vector<std::uint8_t>& events);
std::vector<std::uint8_t> vlq(std::uint32_t v);
std::vector<std::uint8_t> cat(std::initializer_list<std::vector<std::uint8_t>> parts);

// Random valid song: notes on a 480-tpq grid, 4/4 unless `timesig` given.
struct RandomSong {
    advmidi::SongMeta meta;
    std::vector<advmidi::NoteEvent> notes;
};
RandomSong random_song(std::mt19937_64& rng, int max_notes);

// Windows of a small synthetic corpus.
std::vector<advmidi::TokenWindow> synth_windows(const advmidi::SynthCorpus& c, int L);

// Central finite differences against the analytic gradient of a loss that
// touches every head (recoverer, masker, token and sequence classifiers) on a
// hidden-16, one-layer, L = 8 model.
struct GradCheckResult {
    std::map<advmidi::nn::Group, int> checked, passed;
    double worst = 0.0;
    std::string worst_name;
};
GradCheckResult gradient_check(int coords_per_group, double tolerance, std::uint64_t seed);

}  // namespace testing
