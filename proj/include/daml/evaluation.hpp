#pragma once

#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daml/corpus.hpp"
#include "daml/model.hpp"
#include "daml/schema.hpp"

namespace daml {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using TokenSeq = std::vector<std::string>;

// Corpus BLEU-4 on a 0-1 scale with brevity penalty; precisions of order 2-4
// use add-one smoothing. Hypotheses and references are aligned one-to-one.
double bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Belief items: "slot=value" for informs (lowercased) and "?slot" for requests.
std::set<std::string> belief_items(const BeliefState& b);

struct F1Counts {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t oracle = 0;

  void add(const BeliefState& predicted_state, const BeliefState& oracle_state);
  F1Counts& operator+=(const F1Counts& o);
  double precision() const;
  double recall() const;
  double f1() const;  // 1 when nothing was predicted and nothing was expected
};

// Micro-averaged F1 over belief items of aligned turns.
double entity_f1(std::span<const BeliefState> predicted, std::span<const BeliefState> oracle);

struct DomainScore {
  std::string domain;
  std::size_t turns = 0;
  double bleu = 0.0;
  double entity_f1 = 0.0;
  F1Counts counts;
};

struct EvalReport {
  double bleu = 0.0;
  double entity_f1 = 0.0;
  double epochs = 0.0;
  double bleu_std = 0.0;
  double entity_f1_std = 0.0;
  double epochs_std = 0.0;
  std::size_t seeds = 1;
  std::vector<DomainScore> per_domain;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  bool full_rollout = false;  // feed back the model's own previous turn instead of the annotated one
  std::size_t jobs = 1;
};

struct EvalDomain {
  const DomainSpec* spec = nullptr;
  const KnowledgeBase* kb = nullptr;
  std::span<const Dialog> dialogs;
};

struct TurnRecord {
  std::string domain;
  std::size_t dialog = 0;
  std::size_t turn = 0;
  TurnPrediction prediction;
  BeliefState oracle_belief;
  TokenSeq reference;
};

// Decodes every turn and scores belief spans (Entity F1) and delexicalized
// responses (BLEU), pooled and per domain. `turns`, when given, receives the
// per-turn predictions in corpus order.
EvalReport evaluate_model(const Sequicity<float>& model, const ParameterSet<float>& params, const Vocab& vocab,
                          std::span<const EvalDomain> domains, const EvalOptions& options = {},
                          std::vector<TurnRecord>* turns = nullptr);

// Mean and sample standard deviation of the headline metrics; per-domain
// scores are averaged by domain name.
EvalReport aggregate(std::span<const EvalReport> reports);

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace daml
