#pragma once

#include <map>
#include <string>
#include <vector>

#include "converge/system_dsl.hpp"

namespace converge {

// One builtin system: its source, the known property matrix, the outcome the
// tool is expected to produce per analysis, and per-analysis config defaults.
struct RegistryEntry {
  std::string name;
  std::string title;
  int dim = 0;
  std::string dsl;
  std::map<std::string, bool> truth;  // is, eis, cd, ecd, contracting
  std::string truth_note;
  std::map<std::string, std::string> expected;  // property -> outcome token
  std::map<std::string, std::map<std::string, std::string>> config;
};

const std::vector<RegistryEntry>& registry();
const RegistryEntry* find_example(const std::string& name);  // nullptr when unknown
SystemDef load_example(const std::string& name);             // ConfigError when unknown

// Implication rules between the property columns (one-way arrows):
// contracting => eis, eis => is, ecd => cd. Returns a violation description
// per offending row; empty means the matrix is consistent.
std::vector<std::string> registry_rule_violations();

}  // namespace converge
