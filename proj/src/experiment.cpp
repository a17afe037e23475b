#include "daml/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "daml/rng.hpp"

namespace daml {

namespace {

using json = nlohmann::json;

// Reads `key` into `out` when present and records it as known.
template <typename T>
void take(const json& j, const char* key, T& out, std::set<std::string>& known) {
  known.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key: " + section + key);
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

json schedule_json(const ScheduleConfig& s) {
  return {{"lr", s.lr}, {"max_epochs", s.max_epochs}, {"patience", s.patience}, {"batch_size", s.batch_size}};
}

ScheduleConfig schedule_from(const json& j, const std::string& name) {
  ScheduleConfig s;
  std::set<std::string> known;
  take(j, "lr", s.lr, known);
  take(j, "max_epochs", s.max_epochs, known);
  take(j, "patience", s.patience, known);
  take(j, "batch_size", s.batch_size, known);
  reject_unknown(j, known, name + ".");
  return s;
}

json complexity_json(const ComplexityConfig& c) {
  return {{"p_self_correct", c.p_self_correct},
          {"p_hesitation", c.p_hesitation},
          {"p_dont_care", c.p_dont_care},
          {"p_new_goal", c.p_new_goal}};
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t corpus_seed(std::uint64_t seed, const std::string& domain, const char* split) {
  return stream_seed(seed, "datagen/" + domain + "/" + split);
}

DomainCorpora make_domain(const RunConfig& cfg, const std::string& name, std::uint64_t seed, std::size_t n_train,
                          std::size_t n_val, std::size_t n_test) {
  DomainCorpora d;
  d.spec = load_domain(cfg.data.domains_dir + "/" + name + ".json");
  d.kb = generate_kb(d.spec, cfg.data.kb_size, corpus_seed(seed, name, "kb"));
  const auto& cx = cfg.data.complexity;
  d.train = generate_corpus(d.spec, d.kb, cx, n_train, corpus_seed(seed, name, "train"));
  d.val = generate_corpus(d.spec, d.kb, cx, n_val, corpus_seed(seed, name, "val"));
  d.test = generate_corpus(d.spec, d.kb, cx, n_test, corpus_seed(seed, name, "test"));
  return d;
}

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double x, int digits) {
  std::ostringstream s;
  if (std::isnan(x)) return "-";
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << x;
  return s.str();
}

}  // namespace

void RunConfig::validate() const {
  if (data.source_domains.size() < 2) throw ConfigError("at least two source domains are required");
  std::set<std::string> names(data.source_domains.begin(), data.source_domains.end());
  if (names.size() != data.source_domains.size()) throw ConfigError("source domains must be distinct");
  if (names.contains(data.target_domain)) throw ConfigError("the target domain must not be a source domain");
  if (data.kb_size == 0) throw ConfigError("kb_size must be positive");
  if (data.source_train == 0 || data.source_val == 0 || data.source_test == 0) {
    throw ConfigError("source split sizes must be positive");
  }
  if (data.target_val == 0 || data.target_test == 0) throw ConfigError("target split sizes must be positive");
  if (data.target_train_sizes.empty()) throw ConfigError("target_train_sizes must not be empty");
  for (std::size_t n : data.target_train_sizes) {
    if (n == 0) throw ConfigError("target training sizes must be positive");
  }
  try {
    data.complexity.validate();
  } catch (const GenerationError& e) {
    throw ConfigError(e.what());
  }
  model.validate();
  meta.validate();
  train.validate();
  adapt.validate();
  if (n_seeds == 0) throw ConfigError("n_seeds must be positive");
  if (jobs == 0) throw ConfigError("jobs must be positive");
}

json RunConfig::to_json() const {
  return {{"data",
           {{"domains_dir", data.domains_dir},
            {"source_domains", data.source_domains},
            {"target_domain", data.target_domain},
            {"kb_size", data.kb_size},
            {"source_train", data.source_train},
            {"source_val", data.source_val},
            {"source_test", data.source_test},
            {"target_train_sizes", data.target_train_sizes},
            {"target_val", data.target_val},
            {"target_test", data.target_test},
            {"complexity", complexity_json(data.complexity)}}},
          {"model", model.to_json()},
          {"meta", meta.to_json()},
          {"train", schedule_json(train)},
          {"adapt", schedule_json(adapt)},
          {"seed", seed},
          {"n_seeds", n_seeds},
          {"jobs", jobs},
          {"full_rollout", full_rollout},
          {"paths", {{"corpus_dir", paths.corpus_dir}, {"out_dir", paths.out_dir}, {"embeddings", paths.embeddings}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  std::set<std::string> known;
  take(j, "seed", c.seed, known);
  take(j, "n_seeds", c.n_seeds, known);
  take(j, "jobs", c.jobs, known);
  take(j, "full_rollout", c.full_rollout, known);
  known.insert({"data", "model", "meta", "train", "adapt", "paths"});
  reject_unknown(j, known, "");

  const json& d = section(j, "data");
  std::set<std::string> dk;
  take(d, "domains_dir", c.data.domains_dir, dk);
  take(d, "source_domains", c.data.source_domains, dk);
  take(d, "target_domain", c.data.target_domain, dk);
  take(d, "kb_size", c.data.kb_size, dk);
  take(d, "source_train", c.data.source_train, dk);
  take(d, "source_val", c.data.source_val, dk);
  take(d, "source_test", c.data.source_test, dk);
  take(d, "target_train_sizes", c.data.target_train_sizes, dk);
  take(d, "target_val", c.data.target_val, dk);
  take(d, "target_test", c.data.target_test, dk);
  dk.insert("complexity");
  reject_unknown(d, dk, "data.");
  const json& cx = section(d, "complexity");
  std::set<std::string> ck;
  take(cx, "p_self_correct", c.data.complexity.p_self_correct, ck);
  take(cx, "p_hesitation", c.data.complexity.p_hesitation, ck);
  take(cx, "p_dont_care", c.data.complexity.p_dont_care, ck);
  take(cx, "p_new_goal", c.data.complexity.p_new_goal, ck);
  reject_unknown(cx, ck, "data.complexity.");

  try {
    json model = c.model.to_json();
    const json& m = section(j, "model");
    if (!m.is_object()) throw ConfigError("config section 'model' must be an object");
    for (const auto& [key, value] : m.items()) {
      if (!model.contains(key)) throw ConfigError("unknown config key: model." + key);
      model[key] = value;
    }
    c.model = ModelConfig::from_json(model);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config section 'model': ") + e.what());
  }

  const json& m = section(j, "meta");
  std::set<std::string> mk;
  take(m, "alpha", c.meta.alpha, mk);
  take(m, "inner_steps", c.meta.inner_steps, mk);
  take(m, "second_order", c.meta.second_order, mk);
  take(m, "batch_per_domain", c.meta.batch_per_domain, mk);
  reject_unknown(m, mk, "meta.");

  c.train = schedule_from(section(j, "train"), "train");
  c.adapt = schedule_from(section(j, "adapt"), "adapt");

  const json& p = section(j, "paths");
  std::set<std::string> pk;
  take(p, "corpus_dir", c.paths.corpus_dir, pk);
  take(p, "out_dir", c.paths.out_dir, pk);
  take(p, "embeddings", c.paths.embeddings, pk);
  reject_unknown(p, pk, "paths.");
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < n_seeds; ++i) out.push_back(seed + i);
  return out;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("paths");
  j.erase("jobs");
  return hex16(fnv1a(j.dump()));
}

ExperimentData generate_data(const RunConfig& cfg, std::uint64_t seed) {
  ExperimentData out;
  for (const auto& name : cfg.data.source_domains) {
    out.sources.push_back(
        make_domain(cfg, name, seed, cfg.data.source_train, cfg.data.source_val, cfg.data.source_test));
  }
  const std::size_t pool = *std::max_element(cfg.data.target_train_sizes.begin(), cfg.data.target_train_sizes.end());
  out.target = make_domain(cfg, cfg.data.target_domain, seed, pool, cfg.data.target_val, cfg.data.target_test);
  return out;
}

std::vector<Dialog> target_subset(const ExperimentData& data, std::size_t n) {
  if (n > data.target.train.size()) throw DataError("target pool holds fewer than " + std::to_string(n) + " dialogs");
  return {data.target.train.begin(), data.target.train.begin() + static_cast<std::ptrdiff_t>(n)};
}

namespace {

// Rows found in the vector file replace the model's own init from row `first` on.
void copy_pretrained_rows(const EmbeddingLoad& load, Matrix<float>& table, std::size_t first) {
  for (std::size_t i = first; i < load.pretrained.size(); ++i) {
    if (load.pretrained[i]) table.row(static_cast<Index>(i)) = load.table.row(static_cast<Index>(i));
  }
}

}  // namespace

SourceSetup prepare_sources(const RunConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
  SourceSetup s;
  for (const auto& d : data.sources) extend_vocab(s.vocab, d.train);
  s.init = init_params<float>(cfg.model, s.vocab.size(), seed);
  if (!cfg.paths.embeddings.empty()) {
    const auto load = load_embeddings(cfg.paths.embeddings, s.vocab, cfg.model.embedding_dim, stream_seed(seed, "init"));
    copy_pretrained_rows(load, s.init["embedding"], 0);
  }
  for (const auto& d : data.sources) {
    s.domains.push_back({d.spec.name, dialogs_to_examples(d.spec, d.train, s.vocab),
                         dialogs_to_examples(d.spec, d.val, s.vocab)});
  }
  return s;
}

TargetSetup prepare_target(const RunConfig& cfg, const Vocab& vocab, const ParameterSet<float>& params,
                           const std::vector<Dialog>& target_train, std::uint64_t seed) {
  TargetSetup t{vocab, params};
  extend_vocab(t.vocab, target_train);
  extend_params_vocab(t.params, cfg.model, t.vocab.size(), seed);
  if (!cfg.paths.embeddings.empty() && t.vocab.size() > vocab.size()) {
    const auto load = load_embeddings(cfg.paths.embeddings, t.vocab, cfg.model.embedding_dim,
                                      stream_seed(seed, "init-extend"));
    copy_pretrained_rows(load, t.params["embedding"], vocab.size());
  }
  return t;
}

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const ProgressFn& progress) {
  const auto t0 = Clock::now();
  const auto say = [&](const std::string& msg) {
    if (progress) progress("[seed " + std::to_string(seed) + " " + fixed(since(t0), 0) + "s] " + msg);
  };
  SeedResult result;
  result.seed = seed;
  const ExperimentData data = generate_data(cfg, seed);
  const SourceSetup src = prepare_sources(cfg, data, seed);
  const Sequicity<float> source_model(cfg.model, src.vocab.size());
  ScheduleConfig train = cfg.train;
  train.seed = seed;
  ScheduleConfig adapt_schedule = cfg.adapt;
  adapt_schedule.seed = seed;
  const EvalOptions eval_opts{cfg.full_rollout, cfg.jobs};

  const auto epoch_log = [&](const char* what) {
    return [&, what](const EpochRecord& r) {
      say(std::string(what) + " epoch " + std::to_string(r.epoch) + " train " + fixed(r.train_loss, 4) + " val " +
          fixed(r.val_loss, 4) + " lr " + fixed(r.lr, 5));
    };
  };

  say("meta-training on " + std::to_string(src.domains.size()) + " source domains");
  const TrainResult maml = maml_train(source_model, src.init, src.domains, cfg.meta, train, epoch_log("maml"));
  say("transfer training");
  const TrainResult transfer = transfer_train(source_model, src.init, src.domains, train, epoch_log("transfer"));
  result.maml_log = maml.log;
  result.transfer_log = transfer.log;

  std::vector<EvalDomain> source_eval;
  for (const auto& d : data.sources) source_eval.push_back({&d.spec, &d.kb, d.test});
  const EvalDomain target_eval{&data.target.spec, &data.target.kb, data.target.test};

  std::vector<std::size_t> sizes = cfg.data.target_train_sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  for (const auto& [method, trained] : {std::pair{"daml", &maml}, std::pair{"transfer", &transfer}}) {
    const std::string m = method;
    say(m + ": in-domain evaluation");
    result.conditions[m + "/in-domain"] = evaluate_model(source_model, trained->params, src.vocab, source_eval, eval_opts);
    say(m + ": unadapted target evaluation");
    result.conditions[m + "/unadapted"] =
        evaluate_model(source_model, trained->params, src.vocab, std::span(&target_eval, 1), eval_opts);
    for (std::size_t n : sizes) {
      const auto subset = target_subset(data, n);
      TargetSetup tgt = prepare_target(cfg, src.vocab, trained->params, subset, seed);
      const Sequicity<float> model(cfg.model, tgt.vocab.size());
      const auto train_ex = dialogs_to_examples(data.target.spec, subset, tgt.vocab);
      const auto val_ex = dialogs_to_examples(data.target.spec, data.target.val, tgt.vocab);
      const AdaptResult a = adapt(model, std::move(tgt.params), train_ex, val_ex, adapt_schedule);
      EvalReport r = evaluate_model(model, a.params, tgt.vocab, std::span(&target_eval, 1), eval_opts);
      r.epochs = a.epochs_used;
      say(m + ": adapted on " + std::to_string(n) + " dialogs, " + fixed(a.epochs_used, 0) + " epochs, F1 " +
          fixed(r.entity_f1, 3) + " BLEU " + fixed(r.bleu, 3));
      result.conditions[m + "/adapt-" + std::to_string(n)] = std::move(r);
    }
  }
  result.seconds = since(t0);
  return result;
}

json SeedResult::to_json() const {
  json conds = json::object();
  for (const auto& [k, r] : conditions) conds[k] = r.to_json();
  return {{"seed", seed},
          {"seconds", seconds},
          {"conditions", conds},
          {"maml_log", maml_log.to_json()},
          {"transfer_log", transfer_log.to_json()}};
}

ExperimentReport build_report(const RunConfig& cfg, std::vector<SeedResult> runs, std::vector<SeedFailure> failures) {
  ExperimentReport rep;
  rep.config_hash = cfg.hash();
  rep.config = cfg.to_json();
  rep.runs = std::move(runs);
  rep.failures = std::move(failures);
  std::map<std::string, std::vector<EvalReport>> by_condition;
  for (const auto& r : rep.runs) {
    for (const auto& [k, v] : r.conditions) by_condition[k].push_back(v);
  }
  for (const auto& [k, v] : by_condition) rep.aggregate[k] = aggregate(v);
  return rep;
}

ExperimentReport run_experiment(const RunConfig& cfg, const ProgressFn& progress,
                                const std::function<void(const SeedResult&)>& on_seed) {
  cfg.validate();
  std::vector<SeedResult> runs;
  std::vector<SeedFailure> failures;
  for (std::uint64_t seed : cfg.seeds()) {
    try {
      runs.push_back(run_seed(cfg, seed, progress));
      if (on_seed) on_seed(runs.back());
    } catch (const std::exception& e) {
      if (progress) progress("[seed " + std::to_string(seed) + "] failed: " + e.what());
      failures.push_back({seed, e.what()});
    }
  }
  return build_report(cfg, std::move(runs), std::move(failures));
}

json ExperimentReport::to_json() const {
  json agg = json::object();
  for (const auto& [k, r] : aggregate) agg[k] = r.to_json();
  json rs = json::array();
  for (const auto& r : runs) rs.push_back(r.to_json());
  json fs = json::array();
  for (const auto& f : failures) fs.push_back({{"seed", f.seed}, {"error", f.error}});
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) seeds.push_back(r.seed);
  return {{"config_hash", config_hash}, {"config", config}, {"seeds", seeds},
          {"failures", fs},             {"aggregate", agg}, {"runs", rs}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  ExperimentReport rep;
  rep.config_hash = j.at("config_hash").get<std::string>();
  rep.config = j.at("config");
  for (const auto& f : j.at("failures")) rep.failures.push_back({f.at("seed").get<std::uint64_t>(), f.at("error")});
  for (const auto& [k, v] : j.at("aggregate").items()) rep.aggregate[k] = EvalReport::from_json(v);
  for (const auto& r : j.at("runs")) {
    SeedResult s;
    s.seed = r.at("seed").get<std::uint64_t>();
    s.seconds = r.at("seconds").get<double>();
    for (const auto& [k, v] : r.at("conditions").items()) s.conditions[k] = EvalReport::from_json(v);
    const auto log_from = [](const json& l) {
      TrainLog t;
      t.best_epoch = l.at("best_epoch").get<int>();
      t.best_val_loss = l.at("best_val_loss").get<double>();
      for (const auto& e : l.at("epochs")) {
        const auto num = [](const json& x) { return x.is_null() ? std::nan("") : x.get<double>(); };
        t.epochs.push_back({e.at("epoch").get<int>(), num(e.at("train_loss")), num(e.at("val_loss")),
                            num(e.at("lr")), num(e.at("seconds"))});
      }
      return t;
    };
    s.maml_log = log_from(r.at("maml_log"));
    s.transfer_log = log_from(r.at("transfer_log"));
    rep.runs.push_back(std::move(s));
  }
  return rep;
}

std::string ExperimentReport::table() const {
  std::ostringstream out;
  const auto cell = [](double mean, double sd, int digits) { return fixed(mean, digits) + " +- " + fixed(sd, digits); };
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %-18s %-18s %-14s\n", "condition", "BLEU", "Entity F1", "Epochs");
  out << line;
  // Per method: in-domain, unadapted, then adaptation sizes in increasing order.
  const auto rank = [](const std::string& k) {
    const auto slash = k.find('/');
    const std::string method = k.substr(0, slash), cond = k.substr(slash + 1);
    long order = cond == "in-domain" ? -2 : cond == "unadapted" ? -1 : 0;
    if (cond.rfind("adapt-", 0) == 0) order = std::strtol(cond.c_str() + 6, nullptr, 10);
    return std::pair{method, order};
  };
  std::vector<std::string> keys;
  for (const auto& [k, r] : aggregate) keys.push_back(k);
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  for (const auto& k : keys) {
    const auto& r = aggregate.at(k);
    const bool adapted = k.find("/adapt-") != std::string::npos;
    std::snprintf(line, sizeof line, "%-22s %-18s %-18s %-14s\n", k.c_str(), cell(r.bleu, r.bleu_std, 3).c_str(),
                  cell(r.entity_f1, r.entity_f1_std, 3).c_str(),
                  adapted ? cell(r.epochs, r.epochs_std, 1).c_str() : "-");
    out << line;
  }
  out << "seeds completed: " << runs.size() << ", failed: " << failures.size() << ", config " << config_hash << "\n";
  return out.str();
}

}  // namespace daml
