#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "itemtok/error.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/vocab.hpp"

using namespace itemtok;

TEST_CASE("identifier tokens render and parse") {
  CHECK(IdToken{0, 3}.str() == "<a_3>");
  CHECK(IdToken{2, 17}.str() == "<c_17>");
  CHECK(IdToken{25, 0}.str() == "<z_0>");
  for (int level = 0; level < 26; ++level)
    for (int label : {0, 9, 123}) CHECK(IdToken::parse(IdToken{level, label}.str()) == IdToken{level, label});
  for (const char* bad : {"a_1", "<a1>", "<A_1>", "<a_>", "<a_-1>", "<a_1x>", "<eos>"})
    CHECK_THROWS_AS(IdToken::parse(bad), ArgumentError);
  CHECK_THROWS_AS(IdToken({26, 0}).str(), ArgumentError);
  CHECK(to_string({{0, 1}, {1, 0}}) == "<a_1> <b_0>");
}

TEST_CASE("identifier maps") {
  IdentifierMap map;
  map.base_length = 2;
  map.entries[4] = {{0, 0}, {1, 0}};
  map.entries[7] = {{0, 0}, {1, 1}};
  map.entries[9] = {{0, 0}, {1, 0}};
  CHECK_FALSE(map.injective());
  CHECK(collision_groups(map) == std::vector<std::vector<ItemId>>{{4, 9}});
  CHECK_THROWS_AS(map.at(5), IntegrityError);
  map.entries[9].push_back({2, 1});
  CHECK(map.injective());
  CHECK(collision_groups(map).empty());

  const Catalog catalog({{4, {"w"}}, {7, {"w"}}, {9, {"w"}}}, {});
  CHECK_NOTHROW(map.check_total(catalog));
  const Catalog bigger({{4, {"w"}}, {7, {"w"}}, {9, {"w"}}, {11, {"w"}}}, {});
  CHECK_THROWS_AS(map.check_total(bigger), IntegrityError);
  const Catalog smaller({{4, {"w"}}, {7, {"w"}}}, {});
  CHECK_THROWS_AS(map.check_total(smaller), IntegrityError);

  const auto path = std::filesystem::temp_directory_path() / "itemtok_map.tsv";
  map.version = 3;
  map.source = "refined-3";
  write_identifier_map(path, map, "00ff");
  std::string hash;
  const auto back = read_identifier_map(path, &hash);
  CHECK(hash == "00ff");
  CHECK(back.version == 3);
  CHECK(back.source == "refined-3");
  CHECK(back.base_length == 2);
  CHECK(back.entries == map.entries);
  std::ofstream(path, std::ios::app) << "12\t<a_0> nonsense\n";
  CHECK_THROWS_AS(read_identifier_map(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("vocabulary ids are dense and stable") {
  auto v = TokenVocabulary::with_control_tokens();
  CHECK(v.eos() == 0);
  CHECK(v.size() == 1 + 2 * kNumRecTemplates + 4);
  CHECK(v.contains(tokens::rec_open(15)));
  CHECK(v.contains(tokens::kId2ItemClose));
  const std::size_t base = v.size();
  const auto id = v.add("apple");
  CHECK(static_cast<std::size_t>(id) == base);
  CHECK(v.add("apple") == id);
  CHECK(v.token(id) == "apple");
  CHECK(v.size() == base + 1);
  CHECK_FALSE(v.find("pear").has_value());
  CHECK_THROWS_AS(v.id("pear"), ArgumentError);

  const ItemIdentifier ident{{0, 2}, {1, 5}};
  const auto ids = v.add_identifier(ident);
  CHECK(ids == v.encode(ident));
  CHECK(v.token(ids[1]) == "<b_5>");
  CHECK(v.add_identifier(ident) == ids);
  CHECK_THROWS_AS(v.encode({{2, 0}}), ArgumentError);
  CHECK(v.encode_words({"apple"}) == std::vector<TokenId>{id});

  const auto path = std::filesystem::temp_directory_path() / "itemtok_vocab.tsv";
  v.save(path);
  CHECK(TokenVocabulary::load(path) == v);
  std::filesystem::remove(path);
}
