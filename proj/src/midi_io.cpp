#include "advmidi/midi_io.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

#include "advmidi/error.hpp"

namespace advmidi {

bool note_less(const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_ticks, a.pitch, a.track, a.instrument, a.duration_ticks, a.velocity) <
           std::tie(b.onset_ticks, b.pitch, b.track, b.instrument, b.duration_ticks, b.velocity);
}

void sort_notes(std::vector<NoteEvent>& notes) { std::sort(notes.begin(), notes.end(), note_less); }

void validate_note(const NoteEvent& n) {
    if (n.onset_ticks < 0) throw InvalidArgument("note onset must be >= 0");
    if (n.duration_ticks < 1) throw InvalidArgument("note duration must be >= 1 tick");
    if (n.pitch < 0 || n.pitch > 127) throw InvalidArgument("note pitch out of range 0..127");
    if (n.velocity < 1 || n.velocity > 127) throw InvalidArgument("note velocity out of range 1..127");
    if (n.instrument < 0 || n.instrument > 128) throw InvalidArgument("instrument out of range 0..128");
    if (n.track < 0) throw InvalidArgument("track must be >= 0");
}

namespace {

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::size_t begin, std::size_t end)
        : data_(data), pos_(begin), end_(end) {}

    bool done() const { return pos_ >= end_; }
    std::size_t pos() const { return pos_; }

    std::uint8_t u8() {
        if (pos_ >= end_) throw FormatError("truncated MIDI data at byte " + std::to_string(pos_));
        return data_[pos_++];
    }
    std::uint8_t peek() const {
        if (pos_ >= end_) throw FormatError("truncated MIDI data at byte " + std::to_string(pos_));
        return data_[pos_];
    }
    std::uint32_t be(int nbytes) {
        std::uint32_t v = 0;
        for (int i = 0; i < nbytes; ++i) v = (v << 8) | u8();
        return v;
    }
    std::uint32_t vlq() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t b = u8();
            v = (v << 7) | (b & 0x7F);
            if (!(b & 0x80)) return v;
        }
        throw FormatError("variable-length quantity longer than 4 bytes at byte " + std::to_string(pos_));
    }
    void skip(std::size_t n) {
        if (n > end_ - pos_) throw FormatError("truncated MIDI data at byte " + std::to_string(pos_));
        pos_ += n;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (n > end_ - pos_) throw FormatError("truncated MIDI data at byte " + std::to_string(pos_));
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_;
    std::size_t end_;
};

struct OpenNote {
    std::int64_t onset;
    int velocity;
    int instrument;
};

void parse_track(Reader& r, int track, ParsedMidi& out, std::map<std::int64_t, std::int64_t>& tempos,
                 std::map<std::int64_t, std::pair<int, int>>& timesigs) {
    std::int64_t tick = 0;
    std::uint8_t running = 0;
    std::array<int, 16> program{};
    // FIFO per (channel, pitch): first note-on is closed by the first note-off.
    std::map<std::pair<int, int>, std::deque<OpenNote>> open;

    auto close_note = [&](int channel, int pitch, std::int64_t at) {
        auto it = open.find({channel, pitch});
        if (it == open.end() || it->second.empty()) return;  // stray note-off
        OpenNote on = it->second.front();
        it->second.pop_front();
        NoteEvent n;
        n.onset_ticks = on.onset;
        n.duration_ticks = std::max<std::int64_t>(1, at - on.onset);
        n.pitch = pitch;
        n.velocity = on.velocity;
        n.instrument = on.instrument;
        n.track = track;
        out.notes.push_back(n);
    };

    bool ended = false;
    while (!r.done() && !ended) {
        tick += r.vlq();
        std::uint8_t status = r.peek();
        if (status & 0x80) {
            r.u8();
        } else {
            if (running == 0) throw FormatError("data byte without running status at byte " + std::to_string(r.pos()));
            status = running;
        }

        if (status == 0xFF) {
            std::uint8_t type = r.u8();
            std::uint32_t len = r.vlq();
            auto payload = r.take(len);
            if (type == 0x51) {
                if (len != 3) throw FormatError("tempo meta event must have length 3");
                std::int64_t us = (payload[0] << 16) | (payload[1] << 8) | payload[2];
                if (us == 0) throw FormatError("tempo of 0 microseconds per quarter");
                tempos[tick] = us;
            } else if (type == 0x58) {
                if (len < 2) throw FormatError("time signature meta event too short");
                int num = payload[0];
                int pow2 = payload[1];
                if (num == 0 || pow2 > 6) throw FormatError("invalid time signature meta event");
                timesigs[tick] = {num, 1 << pow2};
            } else if (type == 0x2F) {
                ended = true;
            }
            continue;
        }
        if (status == 0xF0 || status == 0xF7) {
            r.skip(r.vlq());
            continue;
        }
        if (status >= 0xF1) throw FormatError("unsupported system message in track data");

        running = status;
        int kind = status & 0xF0;
        int channel = status & 0x0F;
        switch (kind) {
            case 0x80: {
                int pitch = r.u8() & 0x7F;
                r.u8();
                close_note(channel, pitch, tick);
                break;
            }
            case 0x90: {
                int pitch = r.u8() & 0x7F;
                int vel = r.u8() & 0x7F;
                if (vel == 0) {
                    close_note(channel, pitch, tick);
                } else {
                    int instr = channel == kPercussionChannel ? kPercussionInstrument : program[channel];
                    open[{channel, pitch}].push_back({tick, vel, instr});
                }
                break;
            }
            case 0xA0:
            case 0xB0:
            case 0xE0:
                r.u8();
                r.u8();
                break;
            case 0xC0:
                program[channel] = r.u8() & 0x7F;
                break;
            case 0xD0:
                r.u8();
                break;
            default:
                throw FormatError("unexpected status byte");
        }
    }

    for (auto& [key, queue] : open) {
        while (!queue.empty()) {
            out.warnings.push_back("track " + std::to_string(track) + ": unmatched note-on (channel " +
                                   std::to_string(key.first) + ", pitch " + std::to_string(key.second) +
                                   ") closed at tick " + std::to_string(tick));
            close_note(key.first, key.second, tick);
        }
    }
}

}  // namespace

ParsedMidi parse_midi(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, 0, bytes.size());
    if (r.be(4) != 0x4D546864) throw FormatError("missing MThd header");
    std::uint32_t hlen = r.be(4);
    if (hlen < 6) throw FormatError("MThd chunk shorter than 6 bytes");
    int format = static_cast<int>(r.be(2));
    int ntrks = static_cast<int>(r.be(2));
    int division = static_cast<int>(r.be(2));
    r.skip(hlen - 6);
    if (format == 2) throw FormatError("SMF format 2 is not supported");
    if (format > 2) throw FormatError("unknown SMF format " + std::to_string(format));
    if (division & 0x8000) throw FormatError("SMPTE time division is not supported");
    if (division == 0) throw FormatError("ticks per quarter must be >= 1");

    ParsedMidi out;
    out.meta.ticks_per_quarter = division;
    std::map<std::int64_t, std::int64_t> tempos;
    std::map<std::int64_t, std::pair<int, int>> timesigs;

    int track = 0;
    while (track < ntrks) {
        std::uint32_t id = r.be(4);
        std::uint32_t len = r.be(4);
        std::size_t begin = r.pos();
        r.skip(len);
        if (id != 0x4D54726B) continue;  // unknown chunk
        Reader tr(bytes, begin, begin + len);
        parse_track(tr, track, out, tempos, timesigs);
        ++track;
    }

    if (!tempos.count(0)) tempos[0] = kDefaultTempo;
    if (!timesigs.count(0)) timesigs[0] = {4, 4};
    out.meta.tempo_changes.clear();
    for (auto [t, us] : tempos) out.meta.tempo_changes.push_back({t, us});
    out.meta.timesig_changes.clear();
    for (auto [t, ts] : timesigs) out.meta.timesig_changes.push_back({t, ts.first, ts.second});
    sort_notes(out.notes);
    return out;
}

namespace {

struct TrackEvent {
    std::int64_t tick;
    int order;  // meta < program < note-off < note-on at equal ticks
    std::vector<std::uint8_t> bytes;
};

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::array<std::uint8_t, 5> buf{};
    int n = 0;
    buf[n++] = v & 0x7F;
    while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
    while (n) out.push_back(buf[--n]);
}

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int nbytes) {
    for (int i = nbytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::vector<std::uint8_t> serialize_track(std::vector<TrackEvent> events) {
    std::stable_sort(events.begin(), events.end(), [](const TrackEvent& a, const TrackEvent& b) {
        return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
    });
    std::vector<std::uint8_t> body;
    std::int64_t last = 0;
    std::uint8_t running = 0;
    for (const auto& e : events) {
        put_vlq(body, static_cast<std::uint32_t>(e.tick - last));
        last = e.tick;
        std::uint8_t status = e.bytes[0];
        bool channel_msg = status < 0xF0;
        if (channel_msg && status == running) {
            body.insert(body.end(), e.bytes.begin() + 1, e.bytes.end());
        } else {
            body.insert(body.end(), e.bytes.begin(), e.bytes.end());
            running = channel_msg ? status : 0;
        }
    }
    put_vlq(body, 0);
    body.insert(body.end(), {0xFF, 0x2F, 0x00});

    std::vector<std::uint8_t> chunk{'M', 'T', 'r', 'k'};
    put_be(chunk, static_cast<std::uint32_t>(body.size()), 4);
    chunk.insert(chunk.end(), body.begin(), body.end());
    return chunk;
}

int log2_exact(int den) {
    int p = 0;
    while ((1 << p) < den) ++p;
    if ((1 << p) != den) throw InvalidArgument("time signature denominator must be a power of two");
    return p;
}

}  // namespace

std::vector<std::uint8_t> write_midi(const SongMeta& meta, const std::vector<NoteEvent>& notes) {
    if (meta.ticks_per_quarter < 1 || meta.ticks_per_quarter > 0x7FFF)
        throw InvalidArgument("ticks_per_quarter out of range");
    int max_track = 0;
    for (const auto& n : notes) {
        validate_note(n);
        max_track = std::max(max_track, n.track);
    }

    std::vector<std::vector<TrackEvent>> tracks(max_track + 1);
    for (const auto& t : meta.tempo_changes) {
        if (t.us_per_quarter < 1 || t.us_per_quarter > 0xFFFFFF) throw InvalidArgument("tempo out of range");
        auto us = static_cast<std::uint32_t>(t.us_per_quarter);
        tracks[0].push_back({t.tick, 0, {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16),
                                         static_cast<std::uint8_t>(us >> 8), static_cast<std::uint8_t>(us)}});
    }
    for (const auto& ts : meta.timesig_changes) {
        tracks[0].push_back({ts.tick, 0,
                             {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(ts.numerator),
                              static_cast<std::uint8_t>(log2_exact(ts.denominator)), 24, 8}});
    }

    // One channel per (track, instrument); percussion always on channel 9.
    std::vector<std::map<int, int>> channel_of(max_track + 1);
    for (const auto& n : notes) channel_of[n.track][n.instrument] = -1;
    for (int t = 0; t <= max_track; ++t) {
        int next = 0;
        for (auto& [instr, ch] : channel_of[t]) {
            if (instr == kPercussionInstrument) {
                ch = kPercussionChannel;
                continue;
            }
            if (next == kPercussionChannel) ++next;
            if (next > 15) throw InvalidArgument("track " + std::to_string(t) + " uses more than 15 instruments");
            ch = next++;
            tracks[t].push_back({0, 1, {static_cast<std::uint8_t>(0xC0 | ch), static_cast<std::uint8_t>(instr)}});
        }
    }

    // Equal-onset notes on one key: the shorter note-on must come first so the
    // first-on/first-off matching in the parser recovers both durations.
    std::vector<NoteEvent> ordered(notes);
    std::stable_sort(ordered.begin(), ordered.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return std::tie(a.onset_ticks, a.duration_ticks) < std::tie(b.onset_ticks, b.duration_ticks);
    });
    for (const auto& n : ordered) {
        auto ch = static_cast<std::uint8_t>(channel_of[n.track].at(n.instrument));
        auto pitch = static_cast<std::uint8_t>(n.pitch);
        tracks[n.track].push_back(
            {n.onset_ticks, 3, {static_cast<std::uint8_t>(0x90 | ch), pitch, static_cast<std::uint8_t>(n.velocity)}});
        tracks[n.track].push_back(
            {n.onset_ticks + n.duration_ticks, 2, {static_cast<std::uint8_t>(0x90 | ch), pitch, 0}});
    }

    std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
    put_be(out, 6, 4);
    put_be(out, 1, 2);
    put_be(out, static_cast<std::uint32_t>(tracks.size()), 2);
    put_be(out, static_cast<std::uint32_t>(meta.ticks_per_quarter), 2);
    for (auto& tr : tracks) {
        auto chunk = serialize_track(std::move(tr));
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path);
}

}  // namespace advmidi
