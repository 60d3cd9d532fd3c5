#pragma once

#include <set>
#include <string>
#include <vector>

#include "lpm/canonical.hpp"

namespace lpm::cloud {

enum class OrderAction { inspect, replace };

inline std::string action_name(OrderAction a) { return a == OrderAction::inspect ? "INSPECT" : "REPLACE"; }

inline OrderAction action_from_name(const std::string& s) {
  if (s == "INSPECT") return OrderAction::inspect;
  if (s == "REPLACE") return OrderAction::replace;
  throw FormatError("unknown order action '" + s + "'");
}

struct CatalogEntry {
  std::string cause;
  std::string part;
  OrderAction action = OrderAction::inspect;
  std::vector<double> signature;  // feature-space centroid
};

struct FaultCatalog {
  std::vector<CatalogEntry> entries;

  void validate() const {
    if (entries.empty()) throw FormatError("fault catalog is empty");
    std::set<std::string> causes;
    for (const auto& e : entries) {
      if (!causes.insert(e.cause).second) throw FormatError("duplicate catalog cause '" + e.cause + "'");
      if (e.signature.size() != entries.front().signature.size())
        throw FormatError("catalog signatures differ in dimension");
    }
  }

  const CatalogEntry* find(const std::string& cause) const {
    for (const auto& e : entries)
      if (e.cause == cause) return &e;
    return nullptr;
  }
};

inline Json to_json(const FaultCatalog& c) {
  Json a = Json::array();
  for (const auto& e : c.entries)
    a.push_back({{"cause", e.cause}, {"part", e.part}, {"action", action_name(e.action)}, {"signature", e.signature}});
  return Json{{"entries", a}};
}

inline FaultCatalog catalog_from_json(const Json& j) {
  using namespace lpm::detail;
  FaultCatalog c;
  const auto& arr = field(j, "entries");
  if (!arr.is_array()) throw FormatError("catalog entries must be an array");
  for (const auto& e : arr)
    c.entries.push_back({string_at(e, "cause"), string_at(e, "part"), action_from_name(string_at(e, "action")),
                         reals_at(e, "signature")});
  c.validate();
  return c;
}

}  // namespace lpm::cloud
