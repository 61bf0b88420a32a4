#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "itemtok/corpus.hpp"

namespace itemtok {

/// One identifier token. Levels are disjoint alphabets: level 0 renders as
/// <a_k>, level 1 as <b_k>, and so on.
struct IdToken {
  int level = 0;
  int label = 0;

  auto operator<=>(const IdToken&) const = default;
  std::string str() const;
  static IdToken parse(std::string_view s);
};

using ItemIdentifier = std::vector<IdToken>;

std::string to_string(const ItemIdentifier& id);

/// Item → identifier assignment for one refinement round.
struct IdentifierMap {
  int version = 0;
  std::string source;            // rqvae | rqvae+letter | cid | refined-<i>
  std::size_t base_length = 0;   // L; entries have length L or L+1
  std::map<ItemId, ItemIdentifier> entries;

  std::size_t size() const { return entries.size(); }
  const ItemIdentifier& at(ItemId id) const;
  bool injective() const;
  /// Throws IntegrityError unless every catalog item has an entry and no
  /// entry names an unknown item.
  void check_total(const Catalog& catalog) const;
};

/// Groups of items (ascending ids) that share one identifier; only groups of
/// two or more are returned.
std::vector<std::vector<ItemId>> collision_groups(const IdentifierMap& map);

/// Header lines `# key=value` then `item_id<TAB>tok tok tok [tok]`.
void write_identifier_map(const std::filesystem::path& path, const IdentifierMap& map,
                          const std::string& config_hash);
IdentifierMap read_identifier_map(const std::filesystem::path& path,
                                  std::string* config_hash = nullptr);

}  // namespace itemtok
