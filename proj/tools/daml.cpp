// daml: data generation, training, adaptation, evaluation and experiments.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "daml/checkpoint.hpp"
#include "daml/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace daml;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

class RefusalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { Int, Float, String, Bool, IntList, StringList };

// A command-line flag that overrides one RunConfig field.
struct Override {
  std::string flag;
  std::string pointer;  // JSON pointer into RunConfig::to_json()
  Kind kind;
  std::string help;
};

const std::vector<Override>& overrides() {
  static const std::vector<Override> table = {
      {"--seed", "/seed", Kind::Int, "root seed"},
      {"--seeds", "/n_seeds", Kind::Int, "number of seeds for experiment"},
      {"--jobs", "/jobs", Kind::Int, "worker threads for evaluation"},
      {"--full-rollout", "/full_rollout", Kind::Bool, "feed back predicted context during evaluation"},
      {"--domains-dir", "/data/domains_dir", Kind::String, "directory of domain JSON files"},
      {"--source-domains", "/data/source_domains", Kind::StringList, "comma-separated source domains"},
      {"--target", "/data/target_domain", Kind::String, "target domain"},
      {"--kb-size", "/data/kb_size", Kind::Int, "entities per knowledge base"},
      {"--source-train", "/data/source_train", Kind::Int, "training dialogs per source domain"},
      {"--source-val", "/data/source_val", Kind::Int, "validation dialogs per source domain"},
      {"--source-test", "/data/source_test", Kind::Int, "test dialogs per source domain"},
      {"--target-sizes", "/data/target_train_sizes", Kind::IntList, "comma-separated target adaptation sizes"},
      {"--target-val", "/data/target_val", Kind::Int, "target validation dialogs"},
      {"--target-test", "/data/target_test", Kind::Int, "target test dialogs"},
      {"--hidden", "/model/hidden", Kind::Int, "GRU hidden size"},
      {"--embedding-dim", "/model/embedding_dim", Kind::Int, "word embedding size"},
      {"--attention", "/model/attention", Kind::Int, "attention size"},
      {"--dropout", "/model/dropout", Kind::Float, "dropout rate"},
      {"--alpha", "/meta/alpha", Kind::Float, "inner SGD rate of meta-training"},
      {"--meta-batch", "/meta/batch_per_domain", Kind::Int, "examples per domain in a meta-iteration, 0 for batch / domains"},
      {"--beta", "/train/lr", Kind::Float, "Adam rate of source training (outer rate)"},
      {"--epochs", "/train/max_epochs", Kind::Int, "maximum source training epochs"},
      {"--patience", "/train/patience", Kind::Int, "source epochs without improvement before stopping"},
      {"--batch", "/train/batch_size", Kind::Int, "source batch size"},
      {"--adapt-lr", "/adapt/lr", Kind::Float, "Adam rate of target fine-tuning"},
      {"--adapt-epochs", "/adapt/max_epochs", Kind::Int, "maximum fine-tuning epochs"},
      {"--adapt-patience", "/adapt/patience", Kind::Int, "fine-tuning epochs without improvement before stopping"},
      {"--adapt-batch", "/adapt/batch_size", Kind::Int, "fine-tuning batch size"},
      {"--corpus-dir", "/paths/corpus_dir", Kind::String, "corpus directory"},
      {"--out", "/paths/out_dir", Kind::String, "output directory for checkpoints and reports"},
      {"--embeddings", "/paths/embeddings", Kind::String, "optional word-vector file"},
  };
  return table;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json parse_value(const Override& o, const std::string& text) {
  try {
    switch (o.kind) {
      case Kind::Int: {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case Kind::Float: {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case Kind::String:
        return text;
      case Kind::Bool:
        return true;
      case Kind::IntList: {
        json a = json::array();
        for (const auto& item : split_commas(text)) a.push_back(std::stoll(item));
        return a;
      }
      case Kind::StringList:
        return split_commas(text);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for " + o.flag + ": " + text);
}

std::string describe(const json& v) {
  if (v.is_array()) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + (x.is_string() ? x.get<std::string>() : x.dump());
    return s;
  }
  return v.is_string() ? v.get<std::string>() : v.dump();
}

// Registers --config and every override flag on `cmd`.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::pair<const Override*, std::string>> values;
  std::vector<std::pair<const Override*, CLI::Option*>> options;
  std::vector<std::string> storage;

  explicit ConfigFlags(CLI::App* cmd) {
    static const json defaults = RunConfig{}.to_json();
    cmd->add_option("--config", config_file, "JSON run configuration; flags override its values");
    storage.resize(overrides().size());
    for (std::size_t i = 0; i < overrides().size(); ++i) {
      const auto& o = overrides()[i];
      const std::string help = o.help + " (default: " + describe(defaults.at(json::json_pointer(o.pointer))) + ")";
      CLI::Option* opt = o.kind == Kind::Bool ? cmd->add_flag(o.flag, help) : cmd->add_option(o.flag, storage[i], help);
      static const char* const type_names[] = {"INT", "FLOAT", "TEXT", "", "INT,...", "TEXT,..."};
      if (o.kind != Kind::Bool) {
        opt->type_name(type_names[static_cast<int>(o.kind)]);
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      }
      options.emplace_back(&o, opt);
    }
  }

  RunConfig resolve() const {
    json j = config_file.empty() ? RunConfig{}.to_json() : RunConfig::load(config_file).to_json();
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (options[i].second->count() == 0) continue;
      j[json::json_pointer(options[i].first->pointer)] = parse_value(*options[i].first, storage[i]);
    }
    RunConfig cfg = RunConfig::from_json(j);
    cfg.validate();
    return cfg;
  }
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw RefusalError(path.string() + " exists; pass --force to overwrite");
}

fs::path domain_dir(const RunConfig& cfg, const std::string& domain) { return fs::path(cfg.paths.corpus_dir) / domain; }

DomainSpec load_spec(const RunConfig& cfg, const std::string& domain) {
  return load_domain(fs::path(cfg.data.domains_dir) / (domain + ".json"));
}

KnowledgeBase load_kb(const RunConfig& cfg, const std::string& domain) {
  return kb_from_json(read_json(domain_dir(cfg, domain) / "kb.json"));
}

std::vector<Dialog> load_split(const RunConfig& cfg, const std::string& domain, const std::string& split) {
  return read_corpus(domain_dir(cfg, domain) / (split + ".jsonl"));
}

struct LoadedModel {
  Checkpoint ckpt;
  Vocab vocab;
  ModelConfig model;
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m{load_checkpoint(path), {}, {}};
  try {
    m.vocab = Vocab::from_json(m.ckpt.manifest.at("vocab"));
    m.model = ModelConfig::from_json(m.ckpt.manifest.at("model"));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": manifest lacks vocab or model: " + e.what());
  }
  return m;
}

json base_manifest(const RunConfig& cfg, const Vocab& vocab, const ModelConfig& model) {
  return {{"config", cfg.to_json()}, {"config_hash", cfg.hash()}, {"vocab", vocab.to_json()}, {"model", model.to_json()}};
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

// ---- commands ----

int cmd_gen_data(const RunConfig& cfg, bool force) {
  const fs::path root(cfg.paths.corpus_dir);
  refuse_overwrite(root / "manifest.json", force);
  const ExperimentData data = generate_data(cfg, cfg.seed);
  const auto write_domain = [&](const DomainCorpora& d, bool target) {
    const fs::path dir = root / d.spec.name;
    fs::create_directories(dir);
    write_json(dir / "kb.json", kb_to_json(d.kb));
    if (target) {
      for (std::size_t n : cfg.data.target_train_sizes) {
        write_corpus(dir / ("train-" + std::to_string(n) + ".jsonl"), target_subset(data, n));
      }
    } else {
      write_corpus(dir / "train.jsonl", d.train);
    }
    write_corpus(dir / "val.jsonl", d.val);
    write_corpus(dir / "test.jsonl", d.test);
    const auto st = corpus_stats(d.test);
    std::cout << d.spec.name << ": " << d.train.size() << " train, " << d.val.size()
              << " val, " << d.test.size() << " test, mean turns " << st.mean_turns << "\n";
  };
  for (const auto& d : data.sources) write_domain(d, false);
  write_domain(data.target, true);
  write_json(root / "manifest.json", {{"config", cfg.to_json()}, {"config_hash", cfg.hash()}, {"seed", cfg.seed}});
  std::cout << "corpus written to " << root.string() << " (config " << cfg.hash() << ")\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, const std::string& mode, std::string output, bool force) {
  if (output.empty()) output = (fs::path(cfg.paths.out_dir) / (mode + ".ckpt")).string();
  refuse_overwrite(output, force);
  ExperimentData data;
  for (const auto& name : cfg.data.source_domains) {
    DomainCorpora d;
    d.spec = load_spec(cfg, name);
    d.kb = load_kb(cfg, name);
    d.train = load_split(cfg, name, "train");
    d.val = load_split(cfg, name, "val");
    data.sources.push_back(std::move(d));
  }
  const SourceSetup src = prepare_sources(cfg, data, cfg.seed);
  const Sequicity<float> model(cfg.model, src.vocab.size());
  ScheduleConfig schedule = cfg.train;
  schedule.seed = cfg.seed;
  const auto log = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " train ";
    if (std::isnan(r.train_loss)) {
      std::cerr << "-";
    } else {
      std::cerr << r.train_loss;
    }
    std::cerr << " val " << r.val_loss << " lr " << r.lr << " ("
              << r.seconds << "s)" << std::endl;
  };
  json manifest = base_manifest(cfg, src.vocab, cfg.model);
  manifest["mode"] = mode;
  try {
    const TrainResult r = mode == "maml" ? maml_train(model, src.init, src.domains, cfg.meta, schedule, log)
                                         : transfer_train(model, src.init, src.domains, schedule, log);
    manifest["log"] = r.log.to_json();
    fs::create_directories(fs::path(output).parent_path().empty() ? "." : fs::path(output).parent_path());
    save_checkpoint(output, r.params, manifest);
    std::cout << mode << ": best epoch " << r.log.best_epoch << ", val loss " << r.log.best_val_loss << ", saved "
              << output << "\n";
  } catch (const DivergenceError& e) {
    manifest["diverged_at_epoch"] = e.epoch();
    save_checkpoint(output + ".diverged", e.last_finite(), manifest);
    throw;
  }
  return kOk;
}

int cmd_adapt(const RunConfig& cfg, const std::string& checkpoint, std::size_t dialogs, std::string output,
              bool force) {
  if (output.empty()) {
    output = (fs::path(cfg.paths.out_dir) /
              (fs::path(checkpoint).stem().string() + "-adapt-" + std::to_string(dialogs) + ".ckpt"))
                 .string();
  }
  refuse_overwrite(output, force);
  const LoadedModel src = load_model(checkpoint);
  const std::string& target = cfg.data.target_domain;
  const DomainSpec spec = load_spec(cfg, target);
  const auto train = load_split(cfg, target, "train-" + std::to_string(dialogs));
  const auto val = load_split(cfg, target, "val");
  RunConfig with_model = cfg;
  with_model.model = src.model;
  TargetSetup tgt = prepare_target(with_model, src.vocab, src.ckpt.params, train, cfg.seed);
  const Sequicity<float> model(src.model, tgt.vocab.size());
  ScheduleConfig schedule = cfg.adapt;
  schedule.seed = cfg.seed;
  const AdaptResult r = adapt(model, std::move(tgt.params), dialogs_to_examples(spec, train, tgt.vocab),
                              dialogs_to_examples(spec, val, tgt.vocab), schedule);
  json manifest = base_manifest(cfg, tgt.vocab, src.model);
  manifest["mode"] = "adapt";
  manifest["source_checkpoint"] = checkpoint;
  manifest["target_dialogs"] = dialogs;
  manifest["epochs_used"] = r.epochs_used;
  manifest["log"] = r.log.to_json();
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  save_checkpoint(output, r.params, manifest);
  write_json(output + ".json", {{"config_hash", cfg.hash()},
                                {"target_dialogs", dialogs},
                                {"epochs_used", r.epochs_used},
                                {"log", r.log.to_json()}});
  std::cout << "adapted on " << dialogs << " dialogs: " << r.epochs_used << " epochs, saved " << output << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::vector<std::string> domains,
             const std::string& split, std::string output) {
  const LoadedModel m = load_model(checkpoint);
  if (domains.empty()) domains = {cfg.data.target_domain};
  std::vector<DomainSpec> specs;
  std::vector<KnowledgeBase> kbs;
  std::vector<std::vector<Dialog>> corpora;
  for (const auto& d : domains) {
    specs.push_back(load_spec(cfg, d));
    kbs.push_back(load_kb(cfg, d));
    corpora.push_back(load_split(cfg, d, split));
  }
  std::vector<EvalDomain> eval;
  for (std::size_t i = 0; i < domains.size(); ++i) eval.push_back({&specs[i], &kbs[i], corpora[i]});
  const Sequicity<float> model(m.model, m.vocab.size());
  EvalReport r = evaluate_model(model, m.ckpt.params, m.vocab, eval, {cfg.full_rollout, cfg.jobs});
  r.epochs = m.ckpt.manifest.value("epochs_used", 0.0);
  if (output.empty()) output = (fs::path(cfg.paths.out_dir) / (fs::path(checkpoint).stem().string() + "-eval.json")).string();
  json j = r.to_json();
  j["config_hash"] = cfg.hash();
  j["checkpoint"] = checkpoint;
  j["checkpoint_config_hash"] = m.ckpt.manifest.value("config_hash", "");
  j["split"] = split;
  write_json(output, j);
  for (const auto& d : r.per_domain) {
    std::cout << d.domain << ": " << d.turns << " turns, BLEU " << d.bleu << ", Entity F1 " << d.entity_f1 << "\n";
  }
  std::cout << "pooled: BLEU " << r.bleu << ", Entity F1 " << r.entity_f1 << " (report " << output << ")\n";
  return kOk;
}

int cmd_experiment(const RunConfig& cfg, bool force) {
  const fs::path dir(cfg.paths.out_dir);
  refuse_overwrite(dir / "aggregate.json", force);
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg.to_json());
  const auto report = run_experiment(cfg, progress, [&](const SeedResult& r) {
    json j = r.to_json();
    j["config_hash"] = cfg.hash();
    write_json(dir / ("seed-" + std::to_string(r.seed) + ".json"), j);
  });
  write_json(dir / "aggregate.json", report.to_json());
  std::cout << report.table();
  return report.runs.empty() ? kFailure : kOk;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Context record: {"domain", "user", optional "prev_belief" {"inform", "request"}
// and "prev_response"} with utterances as space-separated tokens.
int cmd_decode(const RunConfig& cfg, const std::string& checkpoint, const std::string& context_path) {
  const LoadedModel m = load_model(checkpoint);
  json ctx;
  if (context_path == "-") {
    ctx = json::parse(std::cin);
  } else {
    ctx = read_json(context_path);
  }
  const std::string domain = ctx.value("domain", cfg.data.target_domain);
  const DomainSpec spec = load_spec(cfg, domain);
  const KnowledgeBase kb = load_kb(cfg, domain);
  BeliefState prev;
  if (ctx.contains("prev_belief")) {
    prev.inform = ctx["prev_belief"].value("inform", InformMap{});
    prev.request = ctx["prev_belief"].value("request", std::set<std::string>{});
  }
  ContextExample ex;
  auto span = serialize_belief(spec, prev);
  span.pop_back();
  ex.prev_belief = m.vocab.encode(span);
  ex.prev_response = m.vocab.encode(words(ctx.value("prev_response", "")));
  ex.user_tokens = words(ctx.at("user").get<std::string>());
  ex.user = m.vocab.encode(ex.user_tokens);
  ex.domain = domain;
  const Sequicity<float> model(m.model, m.vocab.size());
  const TurnPrediction p = model.greedy_decode_turn(m.ckpt.params, ex, spec, kb, m.vocab);
  const auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& w : v) s += (s.empty() ? "" : " ") + w;
    return s;
  };
  std::cout << "belief:   " << join(p.belief_tokens) << "\n";
  std::cout << "match:    " << to_string(p.match) << "\n";
  std::cout << "response: " << join(p.response_lex) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adaptive meta-learning for task-oriented dialog generation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate source and target corpora");
  ConfigFlags gen_flags(gen);
  bool force = false;
  std::optional<std::size_t> gen_dialogs;
  gen->add_flag("--force", force, "overwrite existing output");
  gen->add_option("--dialogs", gen_dialogs, "write a single target training file of this many dialogs");

  auto* train = app.add_subcommand("train", "Train on the source domains");
  ConfigFlags train_flags(train);
  std::string mode = "maml", output;
  train->add_option("--mode", mode, "maml or transfer (default: maml)")->check(CLI::IsMember({"maml", "transfer"}));
  train->add_option("--output", output, "checkpoint path (default: <out>/<mode>.ckpt)");
  train->add_flag("--force", force, "overwrite existing output");

  auto* adapt_cmd = app.add_subcommand("adapt", "Fine-tune a checkpoint on target dialogs");
  ConfigFlags adapt_flags(adapt_cmd);
  std::string checkpoint;
  std::size_t dialogs = 9;
  adapt_cmd->add_option("--checkpoint", checkpoint, "source checkpoint")->required();
  adapt_cmd->add_option("--dialogs", dialogs, "target training dialogs (default: 9)");
  adapt_cmd->add_option("--output", output, "checkpoint path (default: <out>/<name>-adapt-<n>.ckpt)");
  adapt_cmd->add_flag("--force", force, "overwrite existing output");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint with BLEU and Entity F1");
  ConfigFlags eval_flags(eval);
  std::vector<std::string> eval_domains;
  std::string split = "test";
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--domain", eval_domains, "domains to score (default: the target domain)");
  eval->add_option("--split", split, "corpus split (default: test)");
  eval->add_option("--output", output, "report path (default: <out>/<name>-eval.json)");

  auto* exp = app.add_subcommand("experiment", "Run the multi-seed comparison");
  ConfigFlags exp_flags(exp);
  exp->add_flag("--force", force, "overwrite existing output");

  auto* decode = app.add_subcommand("decode", "Decode one context record");
  ConfigFlags decode_flags(decode);
  std::string context = "-";
  decode->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  decode->add_option("--context", context, "context JSON file, or - for stdin (default: -)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = gen_flags.resolve();
      if (gen_dialogs) cfg.data.target_train_sizes = {*gen_dialogs};
      cfg.validate();
      return cmd_gen_data(cfg, force);
    }
    if (train->parsed()) return cmd_train(train_flags.resolve(), mode, output, force);
    if (adapt_cmd->parsed()) return cmd_adapt(adapt_flags.resolve(), checkpoint, dialogs, output, force);
    if (eval->parsed()) return cmd_eval(eval_flags.resolve(), checkpoint, eval_domains, split, output);
    if (exp->parsed()) return cmd_experiment(exp_flags.resolve(), force);
    if (decode->parsed()) return cmd_decode(decode_flags.resolve(), checkpoint, context);
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const TrainingConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const GenerationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const RefusalError& e) {
    std::cerr << "refusing: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
