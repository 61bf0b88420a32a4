#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "itemtok/embed.hpp"
#include "itemtok/error.hpp"

using namespace itemtok;

namespace {

using Words = std::vector<std::string>;

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("text embeddings are deterministic and unit length") {
  const Words text{"red", "apple", "fruit", "crisp"};
  const auto a = embed_text(text, 16, 3);
  CHECK(a == embed_text(text, 16, 3));
  CHECK(a.size() == 16);
  CHECK(std::abs(norm(a) - 1.0) < 1e-9);
  CHECK(a != embed_text(text, 16, 4));
  for (std::size_t dim : {1u, 2u, 7u, 64u}) CHECK(std::abs(norm(embed_text(text, dim, 3)) - 1.0) < 1e-9);
  CHECK_THROWS_AS(embed_text(Words{}, 16, 3), ArgumentError);
}

TEST_CASE("word order does not matter and repeats count twice") {
  const auto a = embed_text(Words{"x", "y", "z"}, 16, 1);
  CHECK(a == embed_text(Words{"z", "x", "y"}, 16, 1));
  const auto twice = embed_text(Words{"x", "x"}, 16, 1);
  CHECK(twice == embed_text(Words{"x"}, 16, 1));
  CHECK(embed_text(Words{"x", "x", "y"}, 16, 1) != embed_text(Words{"x", "y"}, 16, 1));
}

TEST_CASE("shared words give a higher cosine than disjoint texts") {
  const Words a{"w001", "w002", "w003", "w004"};
  const Words shared{"w001", "w002", "w003", "w099"};
  const Words disjoint{"w050", "w051", "w052", "w053"};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ea = embed_text(a, 16, seed);
    CHECK(cosine(ea, embed_text(shared, 16, seed)) > cosine(ea, embed_text(disjoint, 16, seed)));
  }
}

TEST_CASE("the synthetic word vocabulary has no hash collisions") {
  Words vocab;
  for (int i = 0; i < 1000; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%03d", i);
    vocab.push_back(buf);
  }
  CHECK(find_hash_collisions(vocab).empty());
  vocab.push_back("w007");
  CHECK(find_hash_collisions(vocab).empty());
}

TEST_CASE("collaborative embeddings") {
  SUBCASE("an isolated item is cold") {
    const std::vector<double> row(5, 0.0);
    const auto h = cf_embed(row, 8, 1);
    CHECK(h.cold);
    CHECK(h.values == std::vector<double>(8, 0.0));
  }
  SUBCASE("identical rows give identical vectors") {
    const std::vector<double> row{0, 3, 1, 0, 2};
    CHECK(cf_embed(row, 8, 1).values == cf_embed(row, 8, 1).values);
    CHECK_FALSE(cf_embed(row, 8, 1).cold);
  }
  SUBCASE("four-item toy matrix against a hand projection") {
    // Row of item 0 is (0, 2, 1, 0): keep columns 1 and 2 with weights
    // 2/√5 and 1/√5, project, then normalize.
    const std::vector<double> row{0, 2, 1, 0};
    const auto c1 = cf_projection_column(1, 4, 9);
    const auto c2 = cf_projection_column(2, 4, 9);
    std::vector<double> expected(4);
    for (std::size_t k = 0; k < 4; ++k) expected[k] = (2.0 * c1[k] + 1.0 * c2[k]) / std::sqrt(5.0);
    const double n = norm(expected);
    const auto h = cf_embed(row, 4, 9);
    for (std::size_t k = 0; k < 4; ++k) CHECK(h.values[k] == doctest::Approx(expected[k] / n).epsilon(1e-13));
    CHECK(std::abs(norm(h.values) - 1.0) < 1e-12);
  }
  SUBCASE("truncation keeps the largest entries with ties to the lower index") {
    const std::vector<double> row{1, 5, 1, 3};
    const auto h = cf_embed(row, 4, 2, 2);
    CHECK(h.values == cf_embed(std::vector<double>{0, 5, 0, 3}, 4, 2, 2).values);
    const auto tie = cf_embed(row, 4, 2, 3);
    CHECK(tie.values == cf_embed(std::vector<double>{1, 5, 0, 3}, 4, 2, 3).values);
  }
}

TEST_CASE("embedding files round-trip exactly") {
  const auto path = std::filesystem::temp_directory_path() / "itemtok_embed.tsv";
  const std::vector<ItemId> ids{3, 8};
  const std::vector<SemanticEmbedding> vecs{embed_text(Words{"a"}, 5, 1), embed_text(Words{"b", "c"}, 5, 1)};
  write_embeddings(path, ids, vecs);
  const auto back = read_embeddings(path);
  CHECK(back.at(3) == vecs[0]);
  CHECK(back.at(8) == vecs[1]);
  std::ofstream(path) << "1\t0.5 0.5\n2\t0.1\n";
  CHECK_THROWS_AS(read_embeddings(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("cosine") {
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 2}) == 0.0);
  CHECK(cosine(std::vector<double>{1, 1}, std::vector<double>{2, 2}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), ArgumentError);
}
