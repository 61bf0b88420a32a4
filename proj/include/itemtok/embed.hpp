#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "itemtok/corpus.hpp"

namespace itemtok {

/// Fixed-length real vector standing in for a pretrained text encoder output.
using SemanticEmbedding = std::vector<double>;

inline constexpr std::size_t kDefaultEmbedDim = 16;
inline constexpr std::uint64_t kHashBuckets = 1u << 20;

/// Hashed bag-of-words with a seeded Gaussian projection per bucket, L2
/// normalized. Word order does not matter; repeated words count twice.
SemanticEmbedding embed_text(std::span<const std::string> words, std::size_t dim,
                             std::uint64_t seed);

std::vector<SemanticEmbedding> embed_catalog(const Catalog& catalog, std::size_t dim,
                                             std::uint64_t seed);

/// Pairs of distinct words that land in the same hash bucket.
std::vector<std::pair<std::string, std::string>> find_hash_collisions(
    std::span<const std::string> vocabulary);

struct CfEmbedding {
  SemanticEmbedding values;
  bool cold = false;  // all-zero co-occurrence row
};

/// Column `j` of the seeded dim × |I| projection used by cf_embed.
std::vector<double> cf_projection_column(std::size_t j, std::size_t dim, std::uint64_t seed);

/// Collaborative embedding from one co-occurrence row: keep the `truncate`
/// largest entries (ties to the lower index), L2-normalize, project to `dim`
/// and normalize again. An all-zero row yields a zero vector flagged cold.
CfEmbedding cf_embed(std::span<const double> cooccurrence_row, std::size_t dim,
                     std::uint64_t seed, std::size_t truncate = 32);

/// `item_id<TAB>v1 v2 ... vD`, values printed with round-trip precision.
void write_embeddings(const std::filesystem::path& path, std::span<const ItemId> ids,
                      std::span<const SemanticEmbedding> vectors);
std::map<ItemId, SemanticEmbedding> read_embeddings(const std::filesystem::path& path);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace itemtok
