#pragma once

#include <map>
#include <string>
#include <vector>

#include "advmidi/tokenizer.hpp"

namespace advmidi {

// Token corpus interchange between CLI stages:
//
//   OCTUPLE-CORPUS 1 L=<L> VOCAB=<s0>,<s1>,...,<s7>
//   <song_id>\t<origin_index>\t<a0>,...,<a7>;<a0>,...,<a7>;...
//
// One window per line; only real tokens are written, padding is implicit.
struct TokenCorpus {
    Vocabulary vocab = Vocabulary::standard();
    int window_length = 0;
    std::vector<TokenWindow> windows;
};

void write_token_corpus(const std::string& path, const TokenCorpus& corpus);
TokenCorpus read_token_corpus(const std::string& path);

// Label files: "<song_id>\t<class>" for sequence tasks or
// "<song_id>\t<c0>,<c1>,..." (one class per token) for token tasks.
using LabelMap = std::map<std::string, std::vector<int>>;
void write_labels(const std::string& path, const LabelMap& labels);
LabelMap read_labels(const std::string& path);

// Planted-position manifest: "<song_id>: <i0> <i1> ...".
using IndexMap = std::map<std::string, std::vector<int>>;
void write_index_manifest(const std::string& path, const IndexMap& indices);
IndexMap read_index_manifest(const std::string& path);

}  // namespace advmidi
