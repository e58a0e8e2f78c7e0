#include "groundcap/vocab.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace groundcap {

namespace {

// The closed world: specials, function words, sizes, colors, shapes,
// relations, and a few distractor nouns/positions to round the set out.
// Exactly 40 entries; the uniform-logits captioning loss anchor ln(40)
// depends on this count.
const char* kWords[] = {
    "[PAD]", "[ENC]", "[DEC]", "[SEP]",
    "the", "a", "is", "that", "to", "of", "in", "and",
    "near", "beside",
    "small", "large", "big", "little", "tiny", "huge",
    "red", "green", "blue", "yellow", "purple",
    "circle", "square", "triangle", "shape", "thing",
    "left", "right", "above", "below",
    "top", "bottom", "middle", "corner", "upper", "lower",
};

const std::unordered_map<std::string, int>& index() {
    static const std::unordered_map<std::string, int> m = [] {
        std::unordered_map<std::string, int> t;
        int i = 0;
        for (const char* w : kWords) t.emplace(w, i++);
        return t;
    }();
    return m;
}

}  // namespace

Vocab::Vocab() {
    for (const char* w : kWords) words_.emplace_back(w);
}

const Vocab& Vocab::instance() {
    static const Vocab v;
    return v;
}

int Vocab::id(const std::string& word) const {
    auto it = index().find(word);
    if (it == index().end()) throw std::out_of_range("Vocab: unknown word '" + word + "'");
    return it->second;
}

bool Vocab::contains(const std::string& word) const {
    return index().count(word) > 0;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab: id out of range");
    return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream in(text);
    std::string w;
    while (in >> w) ids.push_back(id(w));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int t : ids) {
        if (t == kPad || t == kEnc || t == kDec || t == kSep) continue;
        if (!out.empty()) out += ' ';
        out += word(t);
    }
    return out;
}

}  // namespace groundcap
