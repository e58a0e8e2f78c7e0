#pragma once

#include <string>
#include <vector>

namespace groundcap {

/// Closed 40-token vocabulary: 4 special ids plus the ShapesWorld word list.
/// Tokenization is a plain whitespace split; unknown words are errors.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kEnc = 1;
    static constexpr int kDec = 2;
    static constexpr int kSep = 3;

    static const Vocab& instance();

    int size() const { return static_cast<int>(words_.size()); }
    /// Id lookup; throws std::out_of_range for words not in the vocabulary.
    int id(const std::string& word) const;
    bool contains(const std::string& word) const;
    const std::string& word(int id) const;

    /// Whitespace tokenization to ids (no specials added).
    std::vector<int> encode(const std::string& text) const;
    /// Space-joined words; special tokens are skipped.
    std::string decode(const std::vector<int>& ids) const;

private:
    Vocab();
    std::vector<std::string> words_;
};

}  // namespace groundcap
