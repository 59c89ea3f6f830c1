#include "advmidi/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "advmidi/error.hpp"

namespace advmidi {

Vocabulary Vocabulary::standard() {
    Vocabulary v;
    v.sizes = {
        kFirstRealId + static_cast<int>(kKnownTimeSignatures.size()) + 1,  // + fallback
        kFirstRealId + kTempoBins,
        kFirstRealId + kMaxBars,
        kFirstRealId + kMaxPositions,
        kFirstRealId + 129,
        kFirstRealId + 128,
        kFirstRealId + kMaxDurationUnits,
        kFirstRealId + kVelocityBins,
    };
    return v;
}

bool OctupleToken::is_pad() const {
    return std::all_of(a.begin(), a.end(), [](int x) { return x == kPadId; });
}

int TokenWindow::real_length() const {
    return static_cast<int>(std::count(attn_mask.begin(), attn_mask.end(), std::uint8_t{1}));
}

int time_sig_id(const Vocabulary& vocab, int numerator, int denominator) {
    for (std::size_t i = 0; i < kKnownTimeSignatures.size(); ++i) {
        if (kKnownTimeSignatures[i] == TimeSignature{numerator, denominator})
            return kFirstRealId + static_cast<int>(i);
    }
    return vocab.fallback_time_sig_id();
}

TimeSignature time_sig_from_id(const Vocabulary& vocab, int id) {
    int idx = id - kFirstRealId;
    if (id == vocab.fallback_time_sig_id() || idx < 0 || idx >= static_cast<int>(kKnownTimeSignatures.size()))
        return {4, 4};
    return kKnownTimeSignatures[static_cast<std::size_t>(idx)];
}

int tempo_bin(double bpm) {
    auto bin = std::lround((bpm - kTempoMinBpm) / kTempoBinWidth);
    return static_cast<int>(std::clamp<long>(bin, 0, kTempoBins - 1));
}

std::int64_t tempo_us_from_bin(int bin) {
    double bpm = kTempoMinBpm + kTempoBinWidth * bin;
    return std::llround(60e6 / bpm);
}

int velocity_bin(int velocity) {
    int v = std::clamp(velocity, 1, 127);
    return (v - 1) * kVelocityBins / 127;
}

int velocity_from_bin(int bin) {
    // Smallest velocity whose bin is `bin`.
    return 1 + (bin * 127 + kVelocityBins - 1) / kVelocityBins;
}

void validate_token(const Vocabulary& vocab, const OctupleToken& t) {
    for (int j = 0; j < kNumAttributes; ++j) {
        if (t[j] < 0 || t[j] >= vocab.size(j))
            throw InvalidArgument(std::string("attribute ") + kAttrNames[static_cast<std::size_t>(j)] +
                                  " id " + std::to_string(t[j]) + " out of vocabulary range");
    }
}

namespace {

std::int64_t ticks_to_grid(std::int64_t ticks, int tpq) {
    // round half away from zero; ticks are non-negative
    return (2 * ticks * kPositionsPerQuarter + tpq) / (2 * static_cast<std::int64_t>(tpq));
}

int bar_length(int numerator, int denominator) {
    int quarter_units = numerator * kPositionsPerQuarter * 4;
    if (quarter_units % denominator != 0)
        throw FormatError("time signature " + std::to_string(numerator) + "/" + std::to_string(denominator) +
                          " does not align with the position grid");
    int len = quarter_units / denominator;
    if (len < 1 || len > kMaxPositions)
        throw FormatError("time signature " + std::to_string(numerator) + "/" + std::to_string(denominator) +
                          " has more than 64 positions per bar");
    return len;
}

struct TsSegment {
    std::int64_t start_grid;
    std::int64_t start_bar;
    int bar_len;
    int ts_id;
};

struct AbsToken {
    std::int64_t bar;
    OctupleToken token;
};

}  // namespace

std::vector<OctupleToken> encode_song(const SongMeta& meta, std::vector<NoteEvent> notes, const Vocabulary& vocab) {
    if (notes.empty()) return {};
    if (meta.ticks_per_quarter < 1) throw InvalidArgument("ticks_per_quarter must be >= 1");
    const int tpq = meta.ticks_per_quarter;

    std::vector<TimeSigChange> ts_changes = meta.timesig_changes;
    if (ts_changes.empty() || ts_changes.front().tick != 0) ts_changes.insert(ts_changes.begin(), TimeSigChange{});
    std::vector<TempoChange> tempo_changes = meta.tempo_changes;
    if (tempo_changes.empty() || tempo_changes.front().tick != 0) tempo_changes.insert(tempo_changes.begin(), TempoChange{});

    std::vector<TsSegment> segments;
    for (const auto& ts : ts_changes) {
        TsSegment seg{ticks_to_grid(ts.tick, tpq), 0, bar_length(ts.numerator, ts.denominator),
                      time_sig_id(vocab, ts.numerator, ts.denominator)};
        if (!segments.empty()) {
            const auto& prev = segments.back();
            std::int64_t elapsed = seg.start_grid - prev.start_grid;
            seg.start_bar = prev.start_bar + (elapsed + prev.bar_len - 1) / prev.bar_len;
            if (elapsed == 0) segments.pop_back();
        }
        segments.push_back(seg);
    }

    std::vector<AbsToken> abs;
    abs.reserve(notes.size());
    for (const auto& n : notes) {
        validate_note(n);
        std::int64_t g = ticks_to_grid(n.onset_ticks, tpq);
        auto seg_it = std::upper_bound(segments.begin(), segments.end(), g,
                                       [](std::int64_t v, const TsSegment& s) { return v < s.start_grid; });
        const TsSegment& seg = *std::prev(seg_it);
        std::int64_t rel = g - seg.start_grid;

        auto tempo_it = std::upper_bound(tempo_changes.begin(), tempo_changes.end(), n.onset_ticks,
                                         [](std::int64_t v, const TempoChange& t) { return v < t.tick; });
        double bpm = 60e6 / static_cast<double>(std::prev(tempo_it)->us_per_quarter);

        std::int64_t dur_units = std::clamp<std::int64_t>(ticks_to_grid(n.duration_ticks, tpq), 1, kMaxDurationUnits);

        AbsToken t;
        t.bar = seg.start_bar + rel / seg.bar_len;
        t.token[kTimeSig] = seg.ts_id;
        t.token[kTempo] = kFirstRealId + tempo_bin(bpm);
        t.token[kPosition] = kFirstRealId + static_cast<int>(rel % seg.bar_len);
        t.token[kInstrument] = kFirstRealId + n.instrument;
        t.token[kPitch] = kFirstRealId + n.pitch;
        t.token[kDuration] = kFirstRealId + static_cast<int>(dur_units) - 1;
        t.token[kVelocity] = kFirstRealId + velocity_bin(n.velocity);
        abs.push_back(t);
    }

    std::sort(abs.begin(), abs.end(), [](const AbsToken& x, const AbsToken& y) {
        return std::make_tuple(x.bar, x.token[kPosition], x.token[kPitch], x.token.a) <
               std::make_tuple(y.bar, y.token[kPosition], y.token[kPitch], y.token.a);
    });

    std::vector<OctupleToken> out;
    out.reserve(abs.size());
    std::int64_t base = 0;
    std::int64_t prev_bar = 0;
    for (auto& t : abs) {
        if (t.bar - prev_bar >= kMaxBars)
            throw FormatError("note at bar " + std::to_string(t.bar) + " is 256 or more bars after the previous note");
        if (t.bar - base >= kMaxBars) base = t.bar;
        t.token[kBar] = kFirstRealId + static_cast<int>(t.bar - base);
        prev_bar = t.bar;
        out.push_back(t.token);
    }
    return out;
}

DecodedSong decode_song(const Vocabulary& vocab, const std::vector<OctupleToken>& tokens) {
    DecodedSong out;
    out.meta.ticks_per_quarter = kDecodeTicksPerQuarter;
    if (tokens.empty()) return out;

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        for (int j = 0; j < kNumAttributes; ++j) {
            int id = tokens[i][j];
            if (id == kPadId || id == kMaskId)
                throw InvalidArgument("token " + std::to_string(i) + " attribute " +
                                      kAttrNames[static_cast<std::size_t>(j)] + " is " +
                                      (id == kPadId ? "PAD" : "MASK"));
        }
        validate_token(vocab, tokens[i]);
    }

    const std::int64_t grid_ticks = kDecodeTicksPerQuarter / kPositionsPerQuarter;
    std::map<std::int64_t, std::int64_t> tempos;
    out.meta.timesig_changes.clear();

    TimeSignature cur_ts = time_sig_from_id(vocab, tokens.front()[kTimeSig]);
    int cur_ts_id = tokens.front()[kTimeSig];
    out.meta.timesig_changes.push_back({0, cur_ts.numerator, cur_ts.denominator});
    int bar_len = bar_length(cur_ts.numerator, cur_ts.denominator);

    std::int64_t cur_bar = 0;
    std::int64_t cur_bar_grid = 0;
    std::int64_t base = 0;
    int prev_id = 0;
    int prev_tempo_id = -1;

    for (const auto& t : tokens) {
        int bar_id = t[kBar] - kFirstRealId;
        if (bar_id < prev_id) base += kMaxBars;  // the encoder re-based here
        prev_id = bar_id;
        std::int64_t bar = base + bar_id;

        cur_bar_grid += (bar - cur_bar) * bar_len;
        cur_bar = bar;
        if (t[kTimeSig] != cur_ts_id) {
            cur_ts_id = t[kTimeSig];
            cur_ts = time_sig_from_id(vocab, cur_ts_id);
            bar_len = bar_length(cur_ts.numerator, cur_ts.denominator);
            std::int64_t tick = cur_bar_grid * grid_ticks;
            if (!out.meta.timesig_changes.empty() && out.meta.timesig_changes.back().tick == tick)
                out.meta.timesig_changes.back() = {tick, cur_ts.numerator, cur_ts.denominator};
            else
                out.meta.timesig_changes.push_back({tick, cur_ts.numerator, cur_ts.denominator});
        }

        NoteEvent n;
        n.onset_ticks = (cur_bar_grid + (t[kPosition] - kFirstRealId)) * grid_ticks;
        n.duration_ticks = (t[kDuration] - kFirstRealId + 1) * grid_ticks;
        n.pitch = t[kPitch] - kFirstRealId;
        n.velocity = velocity_from_bin(t[kVelocity] - kFirstRealId);
        n.instrument = t[kInstrument] - kFirstRealId;
        n.track = 0;
        out.notes.push_back(n);

        if (t[kTempo] != prev_tempo_id) {
            tempos[prev_tempo_id < 0 ? 0 : n.onset_ticks] = tempo_us_from_bin(t[kTempo] - kFirstRealId);
            prev_tempo_id = t[kTempo];
        }
    }

    out.meta.tempo_changes.clear();
    for (auto [tick, us] : tempos) out.meta.tempo_changes.push_back({tick, us});
    return out;
}

int feasible_shift(const std::vector<OctupleToken>& tokens, int semitones) {
    int lo = 127, hi = 0;
    bool any = false;
    for (const auto& t : tokens) {
        if (t[kPitch] < kFirstRealId) continue;
        int p = t[kPitch] - kFirstRealId;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
        any = true;
    }
    if (!any) return semitones;
    if (semitones > 0) return std::min(semitones, 127 - hi);
    if (semitones < 0) return std::max(semitones, -lo);
    return 0;
}

std::vector<OctupleToken> transpose_exact(const std::vector<OctupleToken>& tokens, int shift) {
    std::vector<OctupleToken> out(tokens);
    for (auto& t : out) {
        if (t[kPitch] < kFirstRealId) continue;
        t[kPitch] += shift;
        if (t[kPitch] < kFirstRealId || t[kPitch] > kFirstRealId + 127)
            throw InvalidArgument("transposition moves a pitch outside 0..127");
    }
    return out;
}

std::vector<OctupleToken> transpose(const std::vector<OctupleToken>& tokens, int semitones) {
    if (semitones < -11 || semitones > 11) throw InvalidArgument("transposition must be within [-11, 11] semitones");
    return transpose_exact(tokens, feasible_shift(tokens, semitones));
}

std::vector<TokenWindow> window_song(const Vocabulary& vocab, const std::vector<OctupleToken>& tokens, int L,
                                     const std::string& song_id) {
    (void)vocab;
    if (L < 1) throw InvalidArgument("window length must be >= 1");
    std::vector<TokenWindow> out;
    const int n = static_cast<int>(tokens.size());
    for (int start = 0; start < n; start += L) {
        TokenWindow w;
        w.song_id = song_id;
        w.origin_index = start;
        w.tokens.assign(static_cast<std::size_t>(L), OctupleToken::pad());
        w.attn_mask.assign(static_cast<std::size_t>(L), 0);
        const int end = std::min(n, start + L);

        // Relative bar: consecutive within an encoder segment; a segment change
        // (bar id decreasing) continues one bar after the previous token.
        int first_bar = tokens[static_cast<std::size_t>(start)][kBar];
        int offset = -first_bar;
        int prev = first_bar;
        for (int i = start; i < end; ++i) {
            OctupleToken t = tokens[static_cast<std::size_t>(i)];
            if (t[kBar] >= kFirstRealId) {
                if (t[kBar] < prev) offset = (prev + offset) + 1 - t[kBar];
                prev = t[kBar];
                int rel = std::min(t[kBar] + offset, kMaxBars - 1);
                t[kBar] = kFirstRealId + rel;
            }
            w.tokens[static_cast<std::size_t>(i - start)] = t;
            w.attn_mask[static_cast<std::size_t>(i - start)] = 1;
        }
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace advmidi
