#pragma once

// Multi-seed pipeline: generate corpora, train on the source domains with
// meta-learning and with the pooled baseline, fine-tune on the target domain
// at several data sizes and score everything.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daml/evaluation.hpp"
#include "daml/simdial.hpp"
#include "daml/training.hpp"

namespace daml {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string domains_dir = DAML_DATA_DIR "/domains";
  std::vector<std::string> source_domains = {"restaurant", "weather", "bus"};
  std::string target_domain = "movie";
  std::size_t kb_size = 100;
  std::size_t source_train = 900;
  std::size_t source_val = 100;
  std::size_t source_test = 500;
  std::vector<std::size_t> target_train_sizes = {1, 9, 45, 90};  // nested prefixes of one pool
  std::size_t target_val = 100;
  std::size_t target_test = 500;
  ComplexityConfig complexity;
};

struct PathConfig {
  std::string corpus_dir = "corpus";
  std::string out_dir = "runs";
  std::string embeddings;  // optional word-vector text file
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  MetaConfig meta;
  ScheduleConfig train;  // source training; its seed is replaced by the run seed
  ScheduleConfig adapt;  // target fine-tuning
  std::uint64_t seed = 1;
  std::size_t n_seeds = 10;  // runs use seeds seed, seed + 1, ...
  std::size_t jobs = 1;
  bool full_rollout = false;
  PathConfig paths;

  // Throws ConfigError (or the owning module's error) on invalid values.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  std::vector<std::uint64_t> seeds() const;
  // FNV-1a over the canonical JSON without paths and jobs, as 16 hex digits.
  std::string hash() const;
};

struct DomainCorpora {
  DomainSpec spec;
  KnowledgeBase kb;
  std::vector<Dialog> train, val, test;  // target train is the largest pool
};

struct ExperimentData {
  std::vector<DomainCorpora> sources;
  DomainCorpora target;
};

// Deterministic in (cfg.data, seed); every corpus draws from its own stream.
ExperimentData generate_data(const RunConfig& cfg, std::uint64_t seed);

// The first n target training dialogs.
std::vector<Dialog> target_subset(const ExperimentData& data, std::size_t n);

using ProgressFn = std::function<void(const std::string&)>;

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, EvalReport> conditions;  // e.g. "daml/adapt-9", "transfer/in-domain"
  TrainLog maml_log, transfer_log;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string error;
};

struct ExperimentReport {
  std::string config_hash;
  nlohmann::json config;
  std::vector<SeedResult> runs;
  std::vector<SeedFailure> failures;
  std::map<std::string, EvalReport> aggregate;  // per condition over completed seeds

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
  // Fixed-width table: one row per condition with mean and std.
  std::string table() const;
};

// Source vocabulary and starting parameters shared by both training modes.
struct SourceSetup {
  Vocab vocab;
  ParameterSet<float> init;
  std::vector<DomainData> domains;
};
SourceSetup prepare_sources(const RunConfig& cfg, const ExperimentData& data, std::uint64_t seed);

// Extends the vocabulary with `target_train` tokens and grows the parameters.
struct TargetSetup {
  Vocab vocab;
  ParameterSet<float> params;
};
TargetSetup prepare_target(const RunConfig& cfg, const Vocab& vocab, const ParameterSet<float>& params,
                           const std::vector<Dialog>& target_train, std::uint64_t seed);

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const ProgressFn& progress = {});

// Runs every seed; a failing seed is recorded and the rest still aggregate.
ExperimentReport run_experiment(const RunConfig& cfg, const ProgressFn& progress = {},
                                const std::function<void(const SeedResult&)>& on_seed = {});

ExperimentReport build_report(const RunConfig& cfg, std::vector<SeedResult> runs, std::vector<SeedFailure> failures);

}  // namespace daml
