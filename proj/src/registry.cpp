#include "converge/registry.hpp"

#include <json.hpp>

#include "registry_data.hpp"

namespace converge {

namespace {

std::vector<RegistryEntry> parse_registry() {
  nlohmann::json root = nlohmann::json::parse(detail::kRegistryJson);
  std::vector<RegistryEntry> entries;
  for (const auto& sys : root.at("systems")) {
    RegistryEntry e;
    e.name = sys.at("name").get<std::string>();
    e.title = sys.at("title").get<std::string>();
    e.dim = sys.at("dim").get<int>();
    e.dsl = sys.at("dsl").get<std::string>();
    e.truth_note = sys.at("truth_note").get<std::string>();
    for (const auto& [key, val] : sys.at("truth").items()) e.truth[key] = val.get<bool>();
    for (const auto& [key, val] : sys.at("expected").items())
      e.expected[key] = val.get<std::string>();
    for (const auto& [prop, kv] : sys.at("config").items())
      for (const auto& [key, val] : kv.items())
        e.config[prop][key] = val.get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

const std::vector<RegistryEntry>& registry() {
  static const std::vector<RegistryEntry> entries = parse_registry();
  return entries;
}

const RegistryEntry* find_example(const std::string& name) {
  for (const auto& e : registry())
    if (e.name == name) return &e;
  return nullptr;
}

SystemDef load_example(const std::string& name) {
  const RegistryEntry* e = find_example(name);
  if (!e) throw ConfigError("unknown builtin system: " + name);
  SystemDef def = parse_system(e->dsl);
  def.name = e->name;
  return def;
}

std::vector<std::string> registry_rule_violations() {
  static const std::pair<const char*, const char*> rules[] = {
      {"contracting", "eis"}, {"eis", "is"}, {"ecd", "cd"}};
  std::vector<std::string> out;
  for (const auto& e : registry()) {
    for (const auto& [from, to] : rules) {
      auto fi = e.truth.find(from), ti = e.truth.find(to);
      if (fi == e.truth.end() || ti == e.truth.end()) {
        out.push_back(e.name + ": truth matrix misses " + from + " or " + to);
        continue;
      }
      if (fi->second && !ti->second)
        out.push_back(e.name + ": marked " + from + " but not " + to);
    }
  }
  return out;
}

}  // namespace converge
