#include <doctest.h>

#include <stdexcept>

#include "groundcap/vocab.hpp"

using namespace groundcap;

TEST_CASE("vocab: fixed size, special ids, and round-trip") {
    const Vocab& v = Vocab::instance();
    CHECK(v.size() == 40);
    CHECK(v.id("[PAD]") == Vocab::kPad);
    CHECK(v.id("[ENC]") == Vocab::kEnc);
    CHECK(v.id("[DEC]") == Vocab::kDec);
    CHECK(v.id("[SEP]") == Vocab::kSep);
    CHECK(Vocab::kPad == 0);
    CHECK(Vocab::kEnc == 1);
    CHECK(Vocab::kDec == 2);
    CHECK(Vocab::kSep == 3);
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.word(i)) == i);
}

TEST_CASE("vocab: encode splits on whitespace, decode drops specials") {
    const Vocab& v = Vocab::instance();
    auto ids = v.encode("the red circle");
    CHECK(ids.size() == 3);
    CHECK(ids[0] == v.id("the"));
    CHECK(ids[1] == v.id("red"));
    CHECK(ids[2] == v.id("circle"));
    std::vector<int> padded = ids;
    padded.push_back(Vocab::kSep);
    padded.push_back(Vocab::kPad);
    CHECK(v.decode(padded) == "the red circle");
    CHECK(v.decode({}) == "");
}

TEST_CASE("vocab: unknown word is an error") {
    const Vocab& v = Vocab::instance();
    CHECK_THROWS_AS(v.id("zebra"), std::out_of_range);
    CHECK_THROWS_AS(v.encode("the zebra"), std::out_of_range);
    CHECK_THROWS_AS(v.word(40), std::out_of_range);
    CHECK_THROWS_AS(v.word(-1), std::out_of_range);
}

TEST_CASE("vocab: attribute words needed by the caption metrics exist") {
    const Vocab& v = Vocab::instance();
    for (const char* w : {"red", "green", "blue", "yellow", "purple",
                          "circle", "square", "triangle", "small", "large",
                          "left", "right", "above", "below", "of", "the"}) {
        CHECK_NOTHROW(v.id(w));
    }
}
