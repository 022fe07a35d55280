#include "aegle/util.hpp"

#include <doctest.h>

using namespace aegle;

TEST_CASE("sha256 matches the standard test vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("text normalization") {
  CHECK(trim("  a b \n") == "a b");
  CHECK(to_lower("AbC") == "abc");
  CHECK(normalize_words("Peptic-Ulcer  Disease!") == "peptic ulcer disease");
  CHECK(normalize_compact("Peptic-Ulcer  Disease!") == "pepticulcerdisease");
  CHECK(contains_phrase("how long does it last", "how long"));
  CHECK(contains_phrase("the scan was clear", "scan"));
  CHECK_FALSE(contains_phrase("the scandal", "scanner"));
  CHECK_FALSE(contains_phrase("subscan done", "scan"));
}

TEST_CASE("sentence splitting") {
  const auto s = split_sentences("It hurts. It started Monday! Any fever? No");
  REQUIRE(s.size() == 4);
  CHECK(s[0] == "It hurts.");
  CHECK(s[3] == "No");
}

TEST_CASE("embedded JSON extraction") {
  CHECK(extract_json_object(R"(Sure: {"a": 1})")->at("a") == 1);
  CHECK(extract_json_object("```json\n{\"b\": {\"c\": \"}\"}}\n```")->at("b").at("c") == "}");
  CHECK_FALSE(extract_json_object("no object here"));
  CHECK_FALSE(extract_json_object("{broken"));
  CHECK(extract_json_object("noise {bad} then {\"ok\": true}")->at("ok") == true);
}

TEST_CASE("canonical dump is compact and order-preserving") {
  Json j;
  j["z"] = 1;
  j["a"] = Json::array({1, 2});
  CHECK(canonical_dump(j) == R"({"z":1,"a":[1,2]})");
}
