#pragma once

// Cloud-side CEP rule set. Edge proposals are merged: an id already known
// (directly or through an earlier merge) only bumps support; a box that
// overlaps an edge-proposed rule by Jaccard >= 0.8 widens that rule to the
// bounding box of both; anything else becomes a new rule.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpm/canonical.hpp"
#include "lpm/rules.hpp"

namespace lpm::cloud {

enum class RuleSource { edge_proposed, cloud_authored };

inline std::string source_name(RuleSource s) {
  return s == RuleSource::edge_proposed ? "EDGE_PROPOSED" : "CLOUD_AUTHORED";
}

inline RuleSource source_from_name(const std::string& s) {
  if (s == "EDGE_PROPOSED") return RuleSource::edge_proposed;
  if (s == "CLOUD_AUTHORED") return RuleSource::cloud_authored;
  throw FormatError("unknown rule source '" + s + "'");
}

struct CepRule {
  rules::DetectionRule rule;
  RuleSource source = RuleSource::edge_proposed;
  std::optional<std::string> equipment;  // nullopt: any equipment
  bool enabled = true;
  bool operator==(const CepRule&) const = default;
};

inline bool evaluates(const CepRule& r, const std::string& equipment_id, std::span<const double> features,
                      double score) {
  if (!r.enabled) return false;
  if (r.equipment && *r.equipment != equipment_id) return false;
  return rules::matches(r.rule, features, score);
}

inline Json to_json(const CepRule& r) {
  Json j{{"rule_id", r.rule.rule_id},     {"lower", r.rule.lower},
         {"upper", r.rule.upper},         {"min_score", r.rule.min_score},
         {"support_count", r.rule.support_count}, {"source", source_name(r.source)},
         {"enabled", r.enabled},          {"equipment", nullptr}};
  if (r.equipment) j["equipment"] = *r.equipment;
  return j;
}

inline CepRule cep_rule_from_json(const Json& j) {
  using namespace lpm::detail;
  CepRule r;
  r.rule.rule_id = string_at(j, "rule_id");
  r.rule.lower = reals_at(j, "lower");
  r.rule.upper = reals_at(j, "upper");
  r.rule.min_score = real_at(j, "min_score");
  r.rule.support_count = value_or<std::int64_t>(j, "support_count", 1);
  r.source = source_from_name(value_or<std::string>(j, "source", "CLOUD_AUTHORED"));
  r.enabled = value_or<bool>(j, "enabled", true);
  if (j.contains("equipment") && j.at("equipment").is_string()) r.equipment = j.at("equipment").get<std::string>();
  if (r.rule.lower.size() != r.rule.upper.size()) throw FormatError("rule bounds differ in dimension");
  for (std::size_t i = 0; i < r.rule.lower.size(); ++i)
    if (!(r.rule.lower[i] <= r.rule.upper[i])) throw FormatError("rule lower bound exceeds upper bound");
  return r;
}

struct MergeOutcome {
  enum class Kind { support_incremented, widened, inserted };
  Kind kind = Kind::inserted;
  std::string rule_id;                // the rule that now carries the proposal
  std::vector<std::string> absorbed;  // rules folded into it by this merge
};

inline std::string merge_kind_name(MergeOutcome::Kind k) {
  switch (k) {
    case MergeOutcome::Kind::support_incremented: return "support_incremented";
    case MergeOutcome::Kind::widened: return "widened";
    case MergeOutcome::Kind::inserted: break;
  }
  return "inserted";
}

class RuleSet {
 public:
  static constexpr double merge_jaccard = 0.8;

  const std::vector<CepRule>& rules() const noexcept { return rules_; }
  std::size_t size() const noexcept { return rules_.size(); }

  const CepRule* find(const std::string& id) const {
    auto it = std::find_if(rules_.begin(), rules_.end(), [&](const CepRule& r) { return r.rule.rule_id == id; });
    return it == rules_.end() ? nullptr : &*it;
  }

  // Resolves ids of rules absorbed by earlier merges.
  std::string resolve(std::string id) const {
    for (auto it = aliases_.find(id); it != aliases_.end(); it = aliases_.find(id)) id = it->second;
    return id;
  }

  // Adds a cloud-authored rule (replaces one with the same id).
  void author(CepRule r) {
    r.source = RuleSource::cloud_authored;
    if (auto* existing = find_mut(r.rule.rule_id))
      *existing = std::move(r);
    else
      rules_.push_back(std::move(r));
  }

  MergeOutcome merge(const rules::DetectionRule& proposal) {
    MergeOutcome out;
    if (auto* hit = find_mut(resolve(proposal.rule_id))) {
      hit->rule.support_count += proposal.support_count;
      out.kind = MergeOutcome::Kind::support_incremented;
      out.rule_id = hit->rule.rule_id;
      return out;
    }
    if (auto best = best_overlap(proposal.lower, proposal.upper, std::nullopt)) {
      auto& target = rules_[*best];
      widen(target, proposal);
      aliases_[proposal.rule_id] = target.rule.rule_id;
      out.kind = MergeOutcome::Kind::widened;
      out.rule_id = target.rule.rule_id;
      out.absorbed.push_back(proposal.rule_id);
      cascade(out);
      return out;
    }
    CepRule r;
    r.rule = proposal;
    r.rule.support_count = std::max<std::int64_t>(1, proposal.support_count);
    r.source = RuleSource::edge_proposed;
    rules_.push_back(std::move(r));
    out.kind = MergeOutcome::Kind::inserted;
    out.rule_id = proposal.rule_id;
    return out;
  }

  std::vector<std::string> matching(const std::string& equipment_id, std::span<const double> features,
                                    double score) const {
    std::vector<std::string> ids;
    for (const auto& r : rules_)
      if (evaluates(r, equipment_id, features, score)) ids.push_back(r.rule.rule_id);
    return ids;
  }

  Json to_json() const {
    Json a = Json::array();
    for (const auto& r : rules_) a.push_back(cloud::to_json(r));
    Json al = Json::object();
    for (const auto& [from, to] : aliases_) al[from] = to;
    return Json{{"rules", a}, {"aliases", al}};
  }

  static RuleSet from_json(const Json& j) {
    RuleSet s;
    for (const auto& r : detail::field(j, "rules")) s.rules_.push_back(cep_rule_from_json(r));
    if (j.contains("aliases"))
      for (const auto& [from, to] : j.at("aliases").items()) s.aliases_[from] = to.get<std::string>();
    return s;
  }

 private:
  CepRule* find_mut(const std::string& id) {
    auto it = std::find_if(rules_.begin(), rules_.end(), [&](const CepRule& r) { return r.rule.rule_id == id; });
    return it == rules_.end() ? nullptr : &*it;
  }

  std::optional<std::size_t> best_overlap(std::span<const double> lo, std::span<const double> hi,
                                          std::optional<std::size_t> skip) const {
    std::optional<std::size_t> best;
    double best_j = 0.0;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      if (skip && *skip == i) continue;
      if (rules_[i].source != RuleSource::edge_proposed) continue;
      const double j = rules::jaccard(lo, hi, rules_[i].rule.lower, rules_[i].rule.upper);
      if (j >= merge_jaccard && j > best_j) {
        best_j = j;
        best = i;
      }
    }
    return best;
  }

  static void widen(CepRule& target, const rules::DetectionRule& other) {
    auto& t = target.rule;
    for (std::size_t i = 0; i < t.lower.size(); ++i) {
      t.lower[i] = std::min(t.lower[i], other.lower[i]);
      t.upper[i] = std::max(t.upper[i], other.upper[i]);
    }
    t.min_score = std::min(t.min_score, other.min_score);
    t.support_count += std::max<std::int64_t>(1, other.support_count);
  }

  // A widened box may now overlap other edge rules; fold them in until the
  // set is pairwise below the merge threshold again.
  void cascade(MergeOutcome& out) {
    for (;;) {
      auto idx = index_of(out.rule_id);
      auto other = best_overlap(rules_[idx].rule.lower, rules_[idx].rule.upper, idx);
      if (!other) return;
      const auto absorbed = rules_[*other].rule;
      widen(rules_[idx], absorbed);
      aliases_[absorbed.rule_id] = out.rule_id;
      for (auto& [from, to] : aliases_)
        if (to == absorbed.rule_id) to = out.rule_id;
      out.absorbed.push_back(absorbed.rule_id);
      rules_.erase(rules_.begin() + static_cast<std::ptrdiff_t>(*other));
    }
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < rules_.size(); ++i)
      if (rules_[i].rule.rule_id == id) return i;
    return rules_.size();
  }

  std::vector<CepRule> rules_;
  std::map<std::string, std::string> aliases_;
};

}  // namespace lpm::cloud
