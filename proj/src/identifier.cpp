#include "itemtok/identifier.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "itemtok/error.hpp"

namespace itemtok {

std::string IdToken::str() const {
  if (level < 0 || level >= 26 || label < 0) throw ArgumentError("IdToken out of range");
  return "<" + std::string(1, static_cast<char>('a' + level)) + "_" + std::to_string(label) + ">";
}

IdToken IdToken::parse(std::string_view s) {
  if (s.size() < 5 || s.front() != '<' || s.back() != '>' || s[2] != '_' || s[1] < 'a' || s[1] > 'z')
    throw ArgumentError("not an identifier token: '" + std::string(s) + "'");
  IdToken t;
  t.level = s[1] - 'a';
  const auto digits = s.substr(3, s.size() - 4);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), t.label);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || t.label < 0)
    throw ArgumentError("not an identifier token: '" + std::string(s) + "'");
  return t;
}

std::string to_string(const ItemIdentifier& id) {
  std::string out;
  for (std::size_t i = 0; i < id.size(); ++i) {
    if (i) out += ' ';
    out += id[i].str();
  }
  return out;
}

const ItemIdentifier& IdentifierMap::at(ItemId id) const {
  const auto it = entries.find(id);
  if (it == entries.end()) throw IntegrityError("no identifier for item " + std::to_string(id));
  return it->second;
}

bool IdentifierMap::injective() const {
  std::set<ItemIdentifier> seen;
  for (const auto& [item, id] : entries)
    if (!seen.insert(id).second) return false;
  return true;
}

void IdentifierMap::check_total(const Catalog& catalog) const {
  for (const auto& item : catalog.items())
    if (!entries.count(item.id))
      throw IntegrityError("identifier map misses item " + std::to_string(item.id));
  for (const auto& [item, id] : entries)
    if (!catalog.contains(item))
      throw IntegrityError("identifier map names unknown item " + std::to_string(item));
}

std::vector<std::vector<ItemId>> collision_groups(const IdentifierMap& map) {
  std::map<ItemIdentifier, std::vector<ItemId>> by_id;
  for (const auto& [item, id] : map.entries) by_id[id].push_back(item);
  std::vector<std::vector<ItemId>> out;
  for (auto& [id, items] : by_id)
    if (items.size() > 1) out.push_back(std::move(items));
  return out;
}

void write_identifier_map(const std::filesystem::path& path, const IdentifierMap& map,
                          const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "# version=" << map.version << '\n';
  out << "# source=" << map.source << '\n';
  out << "# base_length=" << map.base_length << '\n';
  out << "# config_hash=" << config_hash << '\n';
  for (const auto& [item, id] : map.entries) out << item << '\t' << to_string(id) << '\n';
}

IdentifierMap read_identifier_map(const std::filesystem::path& path, std::string* config_hash) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  IdentifierMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(path.string(), lineno, "bad header");
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "version") map.version = std::stoi(value);
        else if (key == "source") map.source = value;
        else if (key == "base_length") map.base_length = std::stoul(value);
        else if (key == "config_hash" && config_hash) *config_hash = value;
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "bad header value");
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "missing tab");
    ItemId item = 0;
    {
      const auto [ptr, ec] = std::from_chars(line.data(), line.data() + tab, item);
      if (ec != std::errc() || ptr != line.data() + tab)
        throw ParseError(path.string(), lineno, "bad item id");
    }
    ItemIdentifier id;
    std::istringstream ts(line.substr(tab + 1));
    try {
      for (std::string tok; ts >> tok;) id.push_back(IdToken::parse(tok));
    } catch (const ArgumentError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    if (id.empty()) throw ParseError(path.string(), lineno, "empty identifier");
    if (!map.entries.emplace(item, std::move(id)).second)
      throw ParseError(path.string(), lineno, "duplicate item id");
  }
  return map;
}

}  // namespace itemtok
