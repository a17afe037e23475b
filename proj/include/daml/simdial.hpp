#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daml/schema.hpp"

namespace daml {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Probabilities of the user-side phenomena the simulator injects.
struct ComplexityConfig {
  double p_self_correct = 0.1;  // "indian . oh no , chinese ."
  double p_hesitation = 0.2;    // filler word inserted
  double p_dont_care = 0.1;     // retracted "i don't care"
  double p_new_goal = 0.3;      // one informable slot changes after an offer

  void validate() const;
  static ComplexityConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct Turn {
  std::vector<std::string> user;
  std::vector<std::string> sys_delex;
  std::vector<std::string> sys_lex;
  BeliefState belief;  // oracle state after the user utterance
  MatchIndicator match = MatchIndicator::NoMatch;
  std::optional<std::string> kb_entity;
};

struct Dialog {
  std::string domain;
  std::uint64_t seed = 0;
  std::vector<Turn> turns;
};

// Deterministic in (spec, kb, cfg, seed).
Dialog generate_dialog(const DomainSpec& spec, const KnowledgeBase& kb, const ComplexityConfig& cfg,
                       std::uint64_t seed);

// Dialogs from seeds seed .. seed + n - 1.
std::vector<Dialog> generate_corpus(const DomainSpec& spec, const KnowledgeBase& kb, const ComplexityConfig& cfg,
                                    std::size_t n, std::uint64_t seed);

struct CorpusStats {
  std::size_t dialogs = 0;
  std::size_t turns = 0;
  double mean_turns = 0.0;
  double mean_utterance_length = 0.0;  // over user and system utterances
};

CorpusStats corpus_stats(std::span<const Dialog> corpus);

// Rule-based reference tracker: replays user utterances only.
std::vector<BeliefState> track_dialog(const DomainSpec& spec, const Dialog& d);

// True iff the reference tracker reproduces every turn's oracle belief.
bool oracle_check(const DomainSpec& spec, const Dialog& d);

// Corpus files hold one JSON record per line.
nlohmann::json dialog_to_json(const Dialog& d);
Dialog dialog_from_json(const nlohmann::json& j);
void write_corpus(const std::filesystem::path& path, std::span<const Dialog> corpus);
std::vector<Dialog> read_corpus(const std::filesystem::path& path);

}  // namespace daml
