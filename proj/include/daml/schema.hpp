#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace daml {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MatchIndicator : std::uint8_t { NoMatch = 0, ExactMatch = 1, MultipleMatch = 2 };

std::string_view to_string(MatchIndicator m);
MatchIndicator parse_match(std::string_view s);

struct InformableSlot {
  std::string name;
  std::vector<std::string> values;
};

struct RequestableSlot {
  std::string name;
  std::vector<std::string> values;
  std::vector<std::string> cues;  // words in a user request that identify this slot
};

using TemplateTable = std::map<std::string, std::vector<std::string>>;

// A dialog domain. Templates are pre-tokenized lowercase text.  In templates
// `{slot}` stands for an informable value and `{value}` for the value of the
// slot currently being talked about; in system templates `<slot>` is a
// delexicalized requestable value and `<name>` the entity name.
struct DomainSpec {
  std::string name;
  std::string entity_noun;
  std::string entity_name_pattern;  // contains "{id}"
  std::vector<InformableSlot> informable;
  std::vector<RequestableSlot> requestable;
  TemplateTable system_templates;
  TemplateTable user_templates;

  std::optional<std::size_t> informable_index(std::string_view slot) const;
  std::optional<std::size_t> requestable_index(std::string_view slot) const;

  // Informable slot owning a value token, if any.
  std::optional<std::size_t> slot_of_value(std::string_view value) const;

  const std::vector<std::string>& system(const std::string& act) const;
  const std::vector<std::string>& user(const std::string& act) const;

  // Throws SchemaError when names collide, vocabularies overlap, templates
  // reference undeclared slots or required acts are missing.
  void validate() const;
};

DomainSpec parse_domain(const nlohmann::json& j);
DomainSpec load_domain(const std::filesystem::path& path);
nlohmann::json domain_to_json(const DomainSpec& spec);

struct Entity {
  std::string name;
  std::map<std::string, std::string> values;
};

struct KnowledgeBase {
  std::string domain;
  std::vector<Entity> entities;
};

// Entities are drawn uniformly from the slot vocabularies; names follow the
// domain's entity_name_pattern with distinct ids.
KnowledgeBase generate_kb(const DomainSpec& spec, std::size_t count, std::uint64_t seed);

nlohmann::json kb_to_json(const KnowledgeBase& kb);
KnowledgeBase kb_from_json(const nlohmann::json& j);

using InformMap = std::map<std::string, std::string>;

struct KbResult {
  MatchIndicator match = MatchIndicator::NoMatch;
  std::vector<std::size_t> entities;  // indices into kb.entities, KB order
};

KbResult kb_query(const DomainSpec& spec, const KnowledgeBase& kb, const InformMap& constraints);

struct BeliefState {
  InformMap inform;
  std::set<std::string> request;

  bool empty() const { return inform.empty() && request.empty(); }
  friend bool operator==(const BeliefState&, const BeliefState&) = default;
};

namespace span_token {
inline constexpr std::string_view kInform = "<inf>";
inline constexpr std::string_view kRequest = "<req>";
inline constexpr std::string_view kEnd = "<eos_b>";
}  // namespace span_token

// <inf> values-in-slot-order <req> sorted-request-names <eos_b>
std::vector<std::string> serialize_belief(const DomainSpec& spec, const BeliefState& b);

struct ParsedBelief {
  BeliefState belief;
  std::size_t dropped = 0;
};

// Best-effort inverse of serialize_belief; never throws.
ParsedBelief parse_belief(const DomainSpec& spec, const std::vector<std::string>& tokens);

// The decoder re-emits the whole state each turn, so the decoded state wins.
inline BeliefState update_belief(const BeliefState& /*prev*/, const BeliefState& decoded) { return decoded; }

void validate_belief(const DomainSpec& spec, const BeliefState& b);

}  // namespace daml
