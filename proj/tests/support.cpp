#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "advmidi/adversarial.hpp"

namespace testing {

TempDir::TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("advmidi_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string TempDir::str(const std::string& child) const { return child.empty() ? path_.string() : (path_ / child).string(); }

std::vector<std::uint8_t> vlq(std::uint32_t v) {
    std::vector<std::uint8_t> out{static_cast<std::uint8_t>(v & 0x7F)};
    while (v >>= 7) out.insert(out.begin(), static_cast<std::uint8_t>(0x80 | (v & 0x7F)));
    return out;
}

std::vector<std::uint8_t> smf_header(int format, int ntracks, int division) {
    return {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, static_cast<std::uint8_t>(format), 0, static_cast<std::uint8_t>(ntracks),
            static_cast<std::uint8_t>(division >> 8), static_cast<std::uint8_t>(division & 0xFF)};
}

std::vector<std::uint8_t> smf_track(const std::vector<std::uint8_t>& events) {
    std::vector<std::uint8_t> out{'M', 'T', 'r', 'k'};
    const auto n = static_cast<std::uint32_t>(events.size());
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(n >> s));
    out.insert(out.end(), events.begin(), events.end());
    return out;
}

std::vector<std::uint8_t> cat(std::initializer_list<std::vector<std::uint8_t>> parts) {
    std::vector<std::uint8_t> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

RandomSong random_song(std::mt19937_64& rng, int max_notes) {
    RandomSong s;
    s.meta.ticks_per_quarter = 480;
    std::uniform_int_distribution<int> n_notes(0, max_notes), unit(0, 64 * 4), dur(1, 64), pitch(0, 127), vel(1, 127),
        prog_pick(0, 5), bpm(40, 220);
    constexpr int programs[] = {0, 24, 40, 56, 73, 128};
    s.meta.tempo_changes = {{0, static_cast<std::int64_t>(60000000 / bpm(rng))}};
    const int n = n_notes(rng);
    for (int i = 0; i < n; ++i) {
        advmidi::NoteEvent e;
        e.onset_ticks = static_cast<std::int64_t>(unit(rng)) * 120;
        e.duration_ticks = static_cast<std::int64_t>(dur(rng)) * 120;
        e.pitch = pitch(rng);
        e.velocity = vel(rng);
        e.instrument = programs[prog_pick(rng)];
        // Same pitch on the same instrument may not overlap (MIDI cannot
        // represent it unambiguously).
        const bool clash = std::any_of(s.notes.begin(), s.notes.end(), [&](const advmidi::NoteEvent& o) {
            return o.pitch == e.pitch && o.instrument == e.instrument && o.onset_ticks < e.onset_ticks + e.duration_ticks &&
                   e.onset_ticks < o.onset_ticks + o.duration_ticks;
        });
        if (!clash) s.notes.push_back(e);
    }
    advmidi::sort_notes(s.notes);
    return s;
}

std::vector<advmidi::TokenWindow> synth_windows(const advmidi::SynthCorpus& c, int L) {
    std::vector<advmidi::TokenWindow> out;
    for (const auto& song : c.songs) {
        auto w = advmidi::window_song(advmidi::Vocabulary::standard(), advmidi::encode_song(song.meta, song.notes), L,
                                     song.id);
        out.insert(out.end(), w.begin(), w.end());
    }
    return out;
}

GradCheckResult gradient_check(int coords_per_group, double tolerance, std::uint64_t seed) {
    using namespace advmidi;
    using namespace advmidi::nn;
    std::mt19937_64 rng(seed);
    ModelConfig cfg;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.inner = 32;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    cfg.n_seq_classes = 3;
    cfg.n_tok_classes = 4;
    Model m = Model::create(cfg, rng);
    // Move away from the initialisation so no gradient is trivially tiny.
    std::normal_distribution<double> jitter(0.0, 0.3);
    m.params().visit([&](const std::string&, Matrix& x) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += jitter(rng);
    });

    TokenWindow w;
    for (int i = 0; i < 8; ++i) {
        OctupleToken t;
        if (i < 6)
            for (int j = 0; j < kNumAttributes; ++j) t[j] = 2 + (i * 3 + j) % 7;
        w.tokens.push_back(t);
        w.attn_mask.push_back(i < 6 ? 1 : 0);
    }
    const std::vector<int> rows{1, 3, 4};
    const std::vector<OctupleToken> originals{w.tokens[1], w.tokens[3], w.tokens[4]};
    AttributeWeights aw;
    aw.w = {0.05, 0.1, 0.15, 0.2, 0.1, 0.2, 0.1, 0.1};

    auto loss = [&](const Model& mm, Params* g) {
        EncoderCache c;
        Matrix h = mm.encode(w, Mode::Eval, nullptr, &c);
        auto rl = recovery_loss(mm.recoverer_head(h, rows), originals, aw);
        Vector pr = mm.masker_head(h);
        Vector dp = Vector::Zero(pr.size());
        const std::vector<int> ones{0, 2}, zeros{1, 5};
        double ml = masker_loss({pr.data(), static_cast<std::size_t>(pr.size())}, ones, zeros,
                                {dp.data(), static_cast<std::size_t>(dp.size())});
        Matrix tl = mm.tok_classifier(h);
        Matrix dtl = Matrix::Zero(tl.rows(), tl.cols());
        double tlo = 0.0;
        for (int i = 0; i < 6; ++i) tlo += cross_entropy(row_span(tl, i), i % 4, 1.0, row_span(dtl, i));
        RowVector sl = mm.seq_classifier(h, w.attn_mask);
        RowVector dsl = RowVector::Zero(sl.size());
        double slo = cross_entropy({sl.data(), static_cast<std::size_t>(sl.size())}, 1, 1.0,
                                   {dsl.data(), static_cast<std::size_t>(dsl.size())});
        if (g) {
            Matrix dh = Matrix::Zero(h.rows(), h.cols());
            mm.recoverer_backward(h, rows, rl.d_logits, *g, &dh);
            mm.masker_backward(h, pr, dp, *g, &dh);
            mm.tok_classifier_backward(h, dtl, *g, &dh);
            mm.seq_classifier_backward(h, w.attn_mask, dsl, *g, &dh);
            mm.backward(c, dh, *g);
        }
        return rl.total + ml + tlo + slo;
    };

    Params grads = m.params().zeros_like();
    loss(m, &grads);
    std::map<std::string, const Matrix*> analytic;
    grads.visit([&](const std::string& name, const Matrix& x) { analytic[name] = &x; });

    // Pool every (parameter, index) pair per group, then sample without
    // replacement.
    std::map<Group, std::vector<std::pair<std::string, Eigen::Index>>> pool;
    std::map<std::string, Matrix*> live;
    m.params().visit([&](const std::string& name, Matrix& x) {
        live[name] = &x;
        for (Eigen::Index i = 0; i < x.size(); ++i) pool[group_of(name)].emplace_back(name, i);
    });

    GradCheckResult r;
    for (auto& [group, coords] : pool) {
        std::shuffle(coords.begin(), coords.end(), rng);
        const auto n = std::min<std::size_t>(coords.size(), static_cast<std::size_t>(coords_per_group));
        for (std::size_t c = 0; c < n; ++c) {
            const auto& [name, i] = coords[c];
            double& x = live[name]->data()[i];
            const double orig = x, eps = 1e-5;
            x = orig + eps;
            const double lp = loss(m, nullptr);
            x = orig - eps;
            const double lm = loss(m, nullptr);
            x = orig;
            const double fd = (lp - lm) / (2 * eps);
            const double an = analytic[name]->data()[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            ++r.checked[group];
            if (rel <= tolerance) ++r.passed[group];
            if (rel > r.worst) {
                r.worst = rel;
                r.worst_name = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

}  // namespace testing
