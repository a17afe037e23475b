#include "daml/schema.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <unordered_set>

namespace daml {

std::string_view to_string(MatchIndicator m) {
  switch (m) {
    case MatchIndicator::NoMatch: return "no_match";
    case MatchIndicator::ExactMatch: return "exact_match";
    case MatchIndicator::MultipleMatch: return "multiple_match";
  }
  return "?";
}

MatchIndicator parse_match(std::string_view s) {
  if (s == "no_match") return MatchIndicator::NoMatch;
  if (s == "exact_match") return MatchIndicator::ExactMatch;
  if (s == "multiple_match") return MatchIndicator::MultipleMatch;
  throw SchemaError("unknown match indicator: " + std::string(s));
}

std::optional<std::size_t> DomainSpec::informable_index(std::string_view slot) const {
  for (std::size_t i = 0; i < informable.size(); ++i) {
    if (informable[i].name == slot) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> DomainSpec::requestable_index(std::string_view slot) const {
  for (std::size_t i = 0; i < requestable.size(); ++i) {
    if (requestable[i].name == slot) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> DomainSpec::slot_of_value(std::string_view value) const {
  for (std::size_t i = 0; i < informable.size(); ++i) {
    const auto& vs = informable[i].values;
    if (std::find(vs.begin(), vs.end(), value) != vs.end()) return i;
  }
  return std::nullopt;
}

const std::vector<std::string>& DomainSpec::system(const std::string& act) const {
  auto it = system_templates.find(act);
  if (it == system_templates.end()) throw SchemaError(name + ": no system templates for act " + act);
  return it->second;
}

const std::vector<std::string>& DomainSpec::user(const std::string& act) const {
  auto it = user_templates.find(act);
  if (it == user_templates.end()) throw SchemaError(name + ": no user templates for act " + act);
  return it->second;
}

namespace {

constexpr std::size_t kMinTemplates = 5;

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_brace(const std::string& t) { return t.size() > 2 && t.front() == '{' && t.back() == '}'; }
bool is_angle(const std::string& t) { return t.size() > 2 && t.front() == '<' && t.back() == '>'; }
std::string inner(const std::string& t) { return t.substr(1, t.size() - 2); }

bool is_lower_token(const std::string& v) {
  return !v.empty() && std::none_of(v.begin(), v.end(), [](unsigned char c) { return c == ' ' || std::isupper(c); });
}

}  // namespace

void DomainSpec::validate() const {
  const auto fail = [&](const std::string& msg) { throw SchemaError(name + ": " + msg); };
  if (name.empty()) throw SchemaError("domain without a name");
  if (informable.empty()) fail("no informable slots");
  if (entity_name_pattern.find("{id}") == std::string::npos) fail("entity_name_pattern lacks {id}");

  std::unordered_set<std::string> slot_names;
  for (const auto& s : informable) {
    if (!slot_names.insert(s.name).second) fail("duplicate slot " + s.name);
    if (s.values.empty()) fail("slot " + s.name + " has no values");
  }
  for (const auto& s : requestable) {
    if (!slot_names.insert(s.name).second) fail("slot " + s.name + " declared twice or both informable and requestable");
    if (s.values.empty()) fail("slot " + s.name + " has no values");
    if (s.cues.empty()) fail("requestable slot " + s.name + " has no cues");
  }
  if (slot_names.contains("name") || slot_names.contains("value")) fail("'name' and 'value' are reserved");

  std::unordered_set<std::string> values;
  for (const auto& s : informable) {
    for (const auto& v : s.values) {
      if (!is_lower_token(v)) {
        fail("value '" + v + "' must be a single lowercase token");
      }
      if (!values.insert(v).second) fail("value '" + v + "' belongs to more than one informable slot");
    }
  }
  std::unordered_set<std::string> cues;
  for (const auto& s : requestable) {
    for (const auto& c : s.cues) {
      if (!cues.insert(c).second) fail("cue '" + c + "' used by more than one requestable slot");
    }
  }

  const auto check_tokens = [&](const std::string& act, const std::string& tpl, bool system_side) {
    for (const auto& t : split_ws(tpl)) {
      if (is_brace(t)) {
        const std::string slot = inner(t);
        if (slot != "value" && !informable_index(slot)) fail("template for " + act + " references {" + slot + "}");
      } else if (is_angle(t)) {
        const std::string slot = inner(t);
        if (!system_side) fail("user template for " + act + " contains placeholder " + t);
        if (slot != "name" && !requestable_index(slot)) fail("template for " + act + " references " + t);
      } else if (!system_side && values.contains(t)) {
        fail("user template for " + act + " contains literal value '" + t + "'");
      }
    }
  };

  const auto require = [&](const TemplateTable& table, const std::string& act, bool system_side) {
    auto it = table.find(act);
    if (it == table.end()) fail(std::string(system_side ? "system" : "user") + " act " + act + " missing");
    if (it->second.size() < kMinTemplates) {
      fail(std::string(system_side ? "system" : "user") + " act " + act + " needs at least " +
           std::to_string(kMinTemplates) + " templates");
    }
  };

  for (const auto& s : informable) {
    require(system_templates, "ask." + s.name, true);
    require(system_templates, "implicit_confirm." + s.name, true);
    require(system_templates, "explicit_confirm." + s.name, true);
    require(user_templates, "inform." + s.name, false);
  }
  for (const auto& s : requestable) {
    require(system_templates, "answer." + s.name, true);
    require(user_templates, "request." + s.name, false);
  }
  for (const char* act : {"offer", "no_match", "anything_else", "close"}) require(system_templates, act, true);
  for (const char* act : {"open", "confirm", "more", "new_goal", "close", "correction", "dont_care"}) {
    require(user_templates, act, false);
  }

  for (const auto& [act, list] : system_templates) {
    for (const auto& tpl : list) check_tokens(act, tpl, true);
  }
  for (const auto& [act, list] : user_templates) {
    const bool slot_bound = act == "correction" || act == "dont_care" || act.rfind("inform.", 0) == 0;
    for (const auto& tpl : list) {
      check_tokens(act, tpl, false);
      const auto toks = split_ws(tpl);
      const bool has_value = std::any_of(toks.begin(), toks.end(), is_brace);
      if (slot_bound && !has_value) fail("user template '" + tpl + "' for " + act + " must mention the value");
      if (!slot_bound && has_value) fail("user template '" + tpl + "' for " + act + " cannot mention a value");
      std::optional<std::size_t> requested;
      if (act.rfind("request.", 0) == 0) requested = requestable_index(act.substr(8));
      bool has_own_cue = false;
      for (const auto& t : toks) {
        for (std::size_t r = 0; r < requestable.size(); ++r) {
          const auto& cs = requestable[r].cues;
          if (std::find(cs.begin(), cs.end(), t) == cs.end()) continue;
          if (requested && *requested == r) {
            has_own_cue = true;
          } else {
            fail("user template for " + act + " contains request cue '" + t + "'");
          }
        }
      }
      if (requested && !has_own_cue) fail("request template '" + tpl + "' has no cue for its slot");
    }
  }
}

DomainSpec parse_domain(const nlohmann::json& j) {
  DomainSpec spec;
  try {
    static const std::set<std::string> kKeys = {"name",        "entity_noun", "entity_name_pattern", "informable",
                                                "requestable", "system",      "user"};
    for (const auto& [key, _] : j.items()) {
      if (!kKeys.contains(key)) throw SchemaError("unknown domain key: " + key);
    }
    spec.name = j.at("name").get<std::string>();
    spec.entity_noun = j.value("entity_noun", spec.name);
    spec.entity_name_pattern = j.at("entity_name_pattern").get<std::string>();
    for (const auto& s : j.at("informable")) {
      spec.informable.push_back({s.at("name").get<std::string>(), s.at("values").get<std::vector<std::string>>()});
    }
    for (const auto& s : j.at("requestable")) {
      spec.requestable.push_back({s.at("name").get<std::string>(), s.at("values").get<std::vector<std::string>>(),
                                  s.at("cues").get<std::vector<std::string>>()});
    }
    spec.system_templates = j.at("system").get<TemplateTable>();
    spec.user_templates = j.at("user").get<TemplateTable>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed domain definition: ") + e.what());
  }
  spec.validate();
  return spec;
}

DomainSpec load_domain(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw SchemaError("cannot open domain file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return parse_domain(j);
}

nlohmann::json domain_to_json(const DomainSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["entity_noun"] = spec.entity_noun;
  j["entity_name_pattern"] = spec.entity_name_pattern;
  j["informable"] = nlohmann::json::array();
  for (const auto& s : spec.informable) j["informable"].push_back({{"name", s.name}, {"values", s.values}});
  j["requestable"] = nlohmann::json::array();
  for (const auto& s : spec.requestable) {
    j["requestable"].push_back({{"name", s.name}, {"values", s.values}, {"cues", s.cues}});
  }
  j["system"] = spec.system_templates;
  j["user"] = spec.user_templates;
  return j;
}

KnowledgeBase generate_kb(const DomainSpec& spec, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  KnowledgeBase kb;
  kb.domain = spec.name;
  std::vector<int> ids(999);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i) + 1;
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto pick = [&](const std::vector<std::string>& vs) {
    std::uniform_int_distribution<std::size_t> d(0, vs.size() - 1);
    return vs[d(rng)];
  };
  for (std::size_t e = 0; e < count; ++e) {
    Entity ent;
    ent.name = spec.entity_name_pattern;
    ent.name.replace(ent.name.find("{id}"), 4, std::to_string(ids[e % ids.size()]));
    for (const auto& s : spec.informable) ent.values[s.name] = pick(s.values);
    for (const auto& s : spec.requestable) ent.values[s.name] = pick(s.values);
    kb.entities.push_back(std::move(ent));
  }
  return kb;
}

nlohmann::json kb_to_json(const KnowledgeBase& kb) {
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& e : kb.entities) entities.push_back({{"name", e.name}, {"values", e.values}});
  return {{"domain", kb.domain}, {"entities", entities}};
}

KnowledgeBase kb_from_json(const nlohmann::json& j) {
  try {
    KnowledgeBase kb;
    kb.domain = j.at("domain").get<std::string>();
    for (const auto& e : j.at("entities")) {
      kb.entities.push_back({e.at("name").get<std::string>(), e.at("values").get<std::map<std::string, std::string>>()});
    }
    return kb;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed knowledge base: ") + e.what());
  }
}

KbResult kb_query(const DomainSpec& spec, const KnowledgeBase& kb, const InformMap& constraints) {
  for (const auto& [slot, _] : constraints) {
    if (!spec.informable_index(slot)) throw SchemaError(spec.name + ": unknown informable slot " + slot);
  }
  KbResult r;
  for (std::size_t i = 0; i < kb.entities.size(); ++i) {
    const auto& e = kb.entities[i];
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = e.values.find(slot);
      if (it == e.values.end() || it->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) r.entities.push_back(i);
  }
  r.match = r.entities.empty()       ? MatchIndicator::NoMatch
            : r.entities.size() == 1 ? MatchIndicator::ExactMatch
                                     : MatchIndicator::MultipleMatch;
  return r;
}

std::vector<std::string> serialize_belief(const DomainSpec& spec, const BeliefState& b) {
  std::vector<std::string> out;
  out.emplace_back(span_token::kInform);
  for (const auto& s : spec.informable) {
    auto it = b.inform.find(s.name);
    if (it != b.inform.end()) out.push_back(it->second);
  }
  out.emplace_back(span_token::kRequest);
  for (const auto& r : b.request) out.push_back(r);  // std::set keeps them sorted
  out.emplace_back(span_token::kEnd);
  return out;
}

ParsedBelief parse_belief(const DomainSpec& spec, const std::vector<std::string>& tokens) {
  ParsedBelief p;
  bool in_request = false;
  for (const auto& t : tokens) {
    if (t == span_token::kEnd) break;
    if (t == span_token::kInform) continue;
    if (t == span_token::kRequest) {
      in_request = true;
      continue;
    }
    if (!in_request) {
      if (auto slot = spec.slot_of_value(t)) {
        p.belief.inform[spec.informable[*slot].name] = t;
        continue;
      }
    } else if (spec.requestable_index(t)) {
      p.belief.request.insert(t);
      continue;
    }
    ++p.dropped;
  }
  return p;
}

void validate_belief(const DomainSpec& spec, const BeliefState& b) {
  for (const auto& [slot, value] : b.inform) {
    auto idx = spec.informable_index(slot);
    if (!idx) throw SchemaError(spec.name + ": belief informs unknown slot " + slot);
    const auto& vs = spec.informable[*idx].values;
    if (std::find(vs.begin(), vs.end(), value) == vs.end()) {
      throw SchemaError(spec.name + ": value '" + value + "' not in vocabulary of " + slot);
    }
  }
  for (const auto& r : b.request) {
    if (!spec.requestable_index(r)) throw SchemaError(spec.name + ": belief requests unknown slot " + r);
  }
}

}  // namespace daml
