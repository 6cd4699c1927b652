#include <doctest.h>

#include <filesystem>
#include <random>

#include "graphex/text.hpp"

using namespace graphex::text;

TEST_CASE("first_sentence stops at the first terminator before a capital") {
  CHECK(first_sentence("A cell. It divides.") == "A cell.");
  CHECK(first_sentence("A cell") == "A cell");
  CHECK(first_sentence("Is it a cell? Yes.") == "Is it a cell?");
  CHECK(first_sentence("A cell. ") == "A cell.");
}

TEST_CASE("first_sentence keeps guarded abbreviations") {
  CHECK(first_sentence("Found in E. coli. Second.") == "Found in E. coli.");
  CHECK(first_sentence("Occurs in fungi, e.g. Yeasts and molds. More.") ==
        "Occurs in fungi, e.g. Yeasts and molds.");
  CHECK(first_sentence("A genus of plants, etc. Other text.") ==
        "A genus of plants, etc. Other text.");
  CHECK(first_sentence("Version 2.5 of a thing. Next.") == "Version 2.5 of a thing.");
}

TEST_CASE("first_sentence output is always a prefix of the input") {
  std::mt19937 rng(7);
  const std::string alphabet = "ab .?!E\n";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int len = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    const auto out = first_sentence(s);
    REQUIRE(s.compare(0, out.size(), out) == 0);
  }
}

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("Estuary bed.") == Tokens{"estuary", "bed", "."});
  CHECK(tokenize("mid-depth") == Tokens{"mid-depth"});
  CHECK(tokenize("(p<0.05)") == Tokens{"(", "p", "<", "0.05", ")"});
  CHECK(tokenize("a planet's surface") == Tokens{"a", "planet", "'", "s", "surface"});
  CHECK(tokenize("  ") == Tokens{});
  CHECK(tokenize("mid - depth") == Tokens{"mid", "-", "depth"});
}

TEST_CASE("tokenize is deterministic and whitespace-insensitive") {
  const std::string text = "An Estuarine  open-water\tpycnocline (a.k.a. layer).";
  CHECK(tokenize(text) == tokenize(text));
  CHECK(tokenize(text) == tokenize("an estuarine open-water pycnocline (a.k.a. layer)."));
}

TEST_CASE("build_vocab applies min_count and tie ordering") {
  const std::vector<Tokens> corpus{{"a", "a", "b"}};
  const auto v2 = Vocabulary::build(corpus, 2);
  CHECK(v2.size() == Vocabulary::kNumReserved + 1);
  CHECK(v2.token(Vocabulary::kNumReserved) == "a");
  CHECK(v2.index("b") == Vocabulary::kUnk);

  const auto v1 = Vocabulary::build(corpus, 1);
  CHECK(v1.size() == Vocabulary::kNumReserved + 2);
  CHECK(v1.index("a") == Vocabulary::kNumReserved);
  CHECK(v1.index("b") == Vocabulary::kNumReserved + 1);

  const std::vector<Tokens> ties{{"zeta", "alpha", "mid", "mid"}};
  const auto vt = Vocabulary::build(ties, 1);
  CHECK(vt.token(4) == "mid");
  CHECK(vt.token(5) == "alpha");
  CHECK(vt.token(6) == "zeta");

  CHECK_THROWS_AS(Vocabulary::build(corpus, 0), std::invalid_argument);
}

TEST_CASE("empty corpus yields only reserved tokens") {
  const auto v = Vocabulary::build(std::vector<Tokens>{}, 2);
  CHECK(v.size() == Vocabulary::kNumReserved);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
}

TEST_CASE("numericalize then denumericalize is identity in vocabulary") {
  const std::vector<Tokens> corpus{{"the", "cell", "is", "a", "cell"}, {"a", "the"}};
  const auto v = Vocabulary::build(corpus, 1);
  const Tokens seq{"a", "cell", "is", "the"};
  CHECK(v.denumericalize(v.numericalize(seq)) == seq);
  const Tokens oov{"a", "neuron"};
  CHECK(v.denumericalize(v.numericalize(oov)) == Tokens{"a", "UNK"});
}

TEST_CASE("vocabulary persists as token and count lines") {
  const std::vector<Tokens> corpus{{"x", "y", "y"}};
  const auto v = Vocabulary::build(corpus, 1);
  const auto path = std::filesystem::temp_directory_path() / "graphex_vocab_test.txt";
  v.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded == v);
  CHECK(loaded.count(loaded.index("y")) == 2);
  std::filesystem::remove(path);
}
