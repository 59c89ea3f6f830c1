#include "advmidi/corpus_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "advmidi/error.hpp"

namespace advmidi {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
    throw FormatError(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<int> parse_ints(std::string_view s, char sep, const std::string& path, int line) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(sep, pos);
        std::string_view field = s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        int v = 0;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc{} || p != field.data() + field.size() || field.empty())
            fail(path, line, "expected integer, got '" + std::string(field) + "'");
        out.push_back(v);
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string_view::npos) {
            parts.push_back(s.substr(pos));
            return parts;
        }
        parts.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    return in;
}

}  // namespace

void write_token_corpus(const std::string& path, const TokenCorpus& corpus) {
    auto out = open_out(path);
    out << "OCTUPLE-CORPUS 1 L=" << corpus.window_length << " VOCAB=";
    for (int j = 0; j < kNumAttributes; ++j) out << (j ? "," : "") << corpus.vocab.size(j);
    out << '\n';
    for (const auto& w : corpus.windows) {
        out << w.song_id << '\t' << w.origin_index << '\t';
        bool first = true;
        for (int i = 0; i < w.length(); ++i) {
            if (!w.attn_mask[static_cast<std::size_t>(i)]) continue;
            if (!first) out << ';';
            first = false;
            const auto& t = w.tokens[static_cast<std::size_t>(i)];
            for (int j = 0; j < kNumAttributes; ++j) out << (j ? "," : "") << t[j];
        }
        out << '\n';
    }
    if (!out) throw FormatError("write failed for " + path);
}

TokenCorpus read_token_corpus(const std::string& path) {
    auto in = open_in(path);
    TokenCorpus corpus;
    std::string line;
    int lineno = 1;
    if (!std::getline(in, line)) fail(path, lineno, "empty corpus file");
    {
        std::istringstream hs(line);
        std::string magic, version, lpart, vpart;
        hs >> magic >> version >> lpart >> vpart;
        if (magic != "OCTUPLE-CORPUS" || version != "1") fail(path, lineno, "not an OCTUPLE-CORPUS v1 file");
        if (lpart.rfind("L=", 0) != 0 || vpart.rfind("VOCAB=", 0) != 0) fail(path, lineno, "malformed header");
        auto lv = parse_ints(std::string_view(lpart).substr(2), ',', path, lineno);
        auto vv = parse_ints(std::string_view(vpart).substr(6), ',', path, lineno);
        if (lv.size() != 1 || lv[0] < 1) fail(path, lineno, "invalid window length");
        if (vv.size() != kNumAttributes) fail(path, lineno, "VOCAB must list 8 sizes");
        corpus.window_length = lv[0];
        for (int j = 0; j < kNumAttributes; ++j) corpus.vocab.sizes[static_cast<std::size_t>(j)] = vv[static_cast<std::size_t>(j)];
    }
    const int L = corpus.window_length;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 3) fail(path, lineno, "expected 3 tab-separated fields");
        TokenWindow w;
        w.song_id = std::string(fields[0]);
        auto origin = parse_ints(fields[1], ',', path, lineno);
        if (origin.size() != 1 || origin[0] < 0) fail(path, lineno, "invalid origin index");
        w.origin_index = origin[0];
        w.tokens.assign(static_cast<std::size_t>(L), OctupleToken::pad());
        w.attn_mask.assign(static_cast<std::size_t>(L), 0);
        auto toks = fields[2].empty() ? std::vector<std::string_view>{} : split(fields[2], ';');
        if (static_cast<int>(toks.size()) > L) fail(path, lineno, "window longer than L");
        for (std::size_t i = 0; i < toks.size(); ++i) {
            auto ids = parse_ints(toks[i], ',', path, lineno);
            if (ids.size() != kNumAttributes) fail(path, lineno, "token " + std::to_string(i) + " needs 8 attributes");
            OctupleToken t;
            for (int j = 0; j < kNumAttributes; ++j) {
                t[j] = ids[static_cast<std::size_t>(j)];
                if (t[j] < 0 || t[j] >= corpus.vocab.size(j))
                    fail(path, lineno, "token " + std::to_string(i) + " attribute out of vocabulary range");
            }
            w.tokens[i] = t;
            w.attn_mask[i] = 1;
        }
        corpus.windows.push_back(std::move(w));
    }
    return corpus;
}

void write_labels(const std::string& path, const LabelMap& labels) {
    auto out = open_out(path);
    for (const auto& [song, values] : labels) {
        out << song << '\t';
        for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
        out << '\n';
    }
    if (!out) throw FormatError("write failed for " + path);
}

LabelMap read_labels(const std::string& path) {
    auto in = open_in(path);
    LabelMap labels;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 2) fail(path, lineno, "expected '<song_id>\\t<labels>'");
        auto values = parse_ints(fields[1], ',', path, lineno);
        if (values.empty()) fail(path, lineno, "no labels");
        if (!labels.emplace(std::string(fields[0]), std::move(values)).second)
            fail(path, lineno, "duplicate song id " + std::string(fields[0]));
    }
    return labels;
}

void write_index_manifest(const std::string& path, const IndexMap& indices) {
    auto out = open_out(path);
    for (const auto& [song, idx] : indices) {
        out << song << ':';
        for (int i : idx) out << ' ' << i;
        out << '\n';
    }
    if (!out) throw FormatError("write failed for " + path);
}

IndexMap read_index_manifest(const std::string& path) {
    auto in = open_in(path);
    IndexMap indices;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos) fail(path, lineno, "expected '<song_id>: <indices>'");
        std::vector<int> idx;
        std::istringstream rest(line.substr(colon + 1));
        std::string tok;
        while (rest >> tok) {
            auto v = parse_ints(tok, ',', path, lineno);
            idx.insert(idx.end(), v.begin(), v.end());
        }
        indices[line.substr(0, colon)] = std::move(idx);
    }
    return indices;
}

}  // namespace advmidi
