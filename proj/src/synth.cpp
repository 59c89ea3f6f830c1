#include "advmidi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "advmidi/corpus_io.hpp"
#include "advmidi/error.hpp"

namespace advmidi {

namespace {

constexpr int kGrid = 120;  // ticks per sixteenth at 480 tpq
constexpr int kStepsPerBar = 16;
constexpr std::array<int, 3> kTempi{96, 120, 144};

struct Style {
    std::array<int, 7> scale;
    bool minor;
    const char* roles;  // one of M(elody), B(ridge), A(ccompaniment) per sixteenth
    int bridge_period;
};

const std::array<Style, 8>& styles() {
    static const std::array<Style, 8> s{{
        {{0, 2, 4, 5, 7, 9, 11}, false, "MABAMABAMABAMABA", 8},
        {{0, 2, 3, 5, 7, 9, 10}, true, "MMAABBAAMMAABBAA", 16},
        {{0, 1, 3, 5, 7, 8, 10}, true, "MAAMAAMBMAAMAAMB", 4},
        {{0, 2, 4, 6, 7, 9, 11}, false, "MBBBMAAAMBBBMAAA", 8},
        {{0, 2, 4, 5, 7, 9, 10}, false, "AMAMBMAMAMAMBMAM", 16},
        {{0, 2, 3, 5, 7, 8, 10}, true, "MMMBAAAAMMMBAAAA", 8},
        {{0, 2, 3, 5, 7, 8, 11}, true, "BAMABAMABAMABAMA", 4},
        {{0, 1, 3, 5, 6, 8, 10}, true, "MMMMAABBMMMMAABB", 16},
    }};
    return s;
}

struct RawNote {
    NoteEvent note;
    int role;
};

}  // namespace

void SynthSpec::validate() const {
    if (n_songs < 1) throw InvalidArgument("n_songs must be >= 1");
    if (notes_per_song < 1) throw InvalidArgument("notes_per_song must be >= 1");
    if (n_styles < 1 || n_styles > static_cast<int>(styles().size()))
        throw InvalidArgument("n_styles must be in 1..8");
    if (!(planted_rate >= 0.0 && planted_rate <= 1.0)) throw InvalidArgument("planted rate must be in [0, 1]");
}

int style_velocity(int style, int step) { return 48 + (style * 11 + step * 7) % 53; }

int style_role(int style, int step) {
    switch (styles()[static_cast<std::size_t>(style)].roles[step]) {
        case 'M': return kRoleMelody;
        case 'B': return kRoleBridge;
        default: return kRoleAccompaniment;
    }
}

int style_pitch_offset(int style, int step) {
    const Style& st = styles()[static_cast<std::size_t>(style)];
    auto deg = [&](int d) { return st.scale[static_cast<std::size_t>(d % 7)]; };
    switch (style_role(style, step)) {
        case kRoleMelody: return 24 + deg(style * 3 + step * step + step);
        case kRoleBridge: return 12 + deg(step / st.bridge_period + 2);
        default: return deg(2 * (step % 3));
    }
}

int style_duration(int style, int step) { return step + 1 < kStepsPerBar && (style + step) % 3 == 0 ? 2 : 1; }

SynthSong generate_synth_song(const SynthSpec& spec, int index) {
    spec.validate();
    if (index < 0 || index >= spec.n_songs) throw InvalidArgument("song index out of range");
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);

    SynthSong song;
    char id[32];
    std::snprintf(id, sizeof id, "song_%04d", index);
    song.id = id;
    song.style = index % spec.n_styles;
    const Style& st = styles()[static_cast<std::size_t>(song.style)];
    const int bpm = kTempi[std::uniform_int_distribution<std::size_t>(0, kTempi.size() - 1)(rng)];
    const int root = std::uniform_int_distribution<int>(0, 11)(rng);
    song.emotion = 2 * static_cast<int>(st.minor) + static_cast<int>(bpm >= 120);
    song.meta.ticks_per_quarter = 480;
    song.meta.tempo_changes = {{0, static_cast<std::int64_t>(std::lround(60e6 / bpm))}};
    song.meta.timesig_changes = {{0, 4, 4}};

    // One note per sixteenth; every bar repeats the style's template.
    std::vector<RawNote> raw;
    const auto n = static_cast<std::size_t>(spec.notes_per_song);
    for (std::size_t i = 0; i < n; ++i) {
        const int step = static_cast<int>(i % kStepsPerBar);
        NoteEvent e;
        e.onset_ticks = static_cast<std::int64_t>(i) * kGrid;
        e.duration_ticks = style_duration(song.style, step) * kGrid;
        e.pitch = 48 + root + style_pitch_offset(song.style, step);
        e.velocity = style_velocity(song.style, step);
        raw.push_back({e, style_role(song.style, step)});
    }
    // Planted context-free values.
    const auto k = static_cast<std::size_t>(std::lround(spec.planted_rate * static_cast<double>(n)));
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> planted(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(planted.begin(), planted.end());
    std::discrete_distribution<std::size_t> category(kPlantedProbs.begin(), kPlantedProbs.end());

    std::vector<char> is_planted(n, 0);
    if (spec.plant == PlantAttribute::Velocity) {
        for (int i : planted) {
            raw[static_cast<std::size_t>(i)].note.velocity = kPlantedVelocities[category(rng)];
            is_planted[static_cast<std::size_t>(i)] = 1;
        }
    } else {
        // A drawn pitch is redrawn when it would collide with a note of the
        // same pitch that overlaps in time (not representable in MIDI).
        for (int i : planted) {
            auto& e = raw[static_cast<std::size_t>(i)].note;
            for (int attempt = 0; attempt < 64; ++attempt) {
                int pitch = kPlantedPitches[category(rng)];
                bool clash = std::any_of(raw.begin(), raw.end(), [&](const RawNote& o) {
                    return &o.note != &e && o.note.pitch == pitch && o.note.onset_ticks < e.onset_ticks + e.duration_ticks &&
                           e.onset_ticks < o.note.onset_ticks + o.note.duration_ticks;
                });
                if (!clash) {
                    e.pitch = pitch;
                    is_planted[static_cast<std::size_t>(i)] = 1;
                    break;
                }
            }
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return std::make_pair(raw[x].note.onset_ticks, raw[x].note.pitch) <
                   std::make_pair(raw[y].note.onset_ticks, raw[y].note.pitch);
        });
        std::vector<RawNote> sorted;
        std::vector<char> flags;
        for (auto o : order) {
            sorted.push_back(raw[o]);
            flags.push_back(is_planted[o]);
        }
        raw = std::move(sorted);
        is_planted = std::move(flags);
    }

    for (std::size_t i = 0; i < n; ++i) {
        song.notes.push_back(raw[i].note);
        song.roles.push_back(raw[i].role);
        if (is_planted[i]) song.planted.push_back(static_cast<int>(i));
    }
    return song;
}

SynthCorpus generate_synth(const SynthSpec& spec) {
    spec.validate();
    SynthCorpus c;
    c.spec = spec;
    for (int i = 0; i < spec.n_songs; ++i) c.songs.push_back(generate_synth_song(spec, i));
    return c;
}

void write_synth_corpus(const std::string& dir, const SynthCorpus& corpus) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "midi");
    LabelMap composer, emotion, melody;
    IndexMap planted;
    for (const auto& s : corpus.songs) {
        write_file_bytes((fs::path(dir) / "midi" / (s.id + ".mid")).string(), write_midi(s.meta, s.notes));
        composer[s.id] = {s.style};
        emotion[s.id] = {s.emotion};
        melody[s.id] = s.roles;
        planted[s.id] = s.planted;
    }
    write_labels((fs::path(dir) / "composer.labels").string(), composer);
    write_labels((fs::path(dir) / "emotion.labels").string(), emotion);
    write_labels((fs::path(dir) / "melody.labels").string(), melody);
    write_index_manifest((fs::path(dir) / "planted.manifest").string(), planted);
}

ChiSquaredResult chi_squared_independence(const std::vector<std::vector<long>>& table) {
    std::vector<std::size_t> rows, cols;
    const std::size_t ncols = table.empty() ? 0 : table[0].size();
    for (const auto& r : table)
        if (r.size() != ncols) throw InvalidArgument("contingency table rows differ in length");
    for (std::size_t r = 0; r < table.size(); ++r)
        if (std::accumulate(table[r].begin(), table[r].end(), 0L) > 0) rows.push_back(r);
    for (std::size_t c = 0; c < ncols; ++c) {
        long s = 0;
        for (const auto& r : table) s += r[c];
        if (s > 0) cols.push_back(c);
    }
    ChiSquaredResult out;
    if (rows.size() < 2 || cols.size() < 2) return out;

    double total = 0.0;
    std::vector<double> rsum(rows.size(), 0.0), csum(cols.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            double v = static_cast<double>(table[rows[i]][cols[j]]);
            rsum[i] += v;
            csum[j] += v;
            total += v;
        }
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            double expected = rsum[i] * csum[j] / total;
            double d = static_cast<double>(table[rows[i]][cols[j]]) - expected;
            out.statistic += d * d / expected;
        }
    out.dof = static_cast<int>((rows.size() - 1) * (cols.size() - 1));
    boost::math::chi_squared dist(out.dof);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
    return out;
}

}  // namespace advmidi
