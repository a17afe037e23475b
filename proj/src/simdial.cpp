#include "daml/simdial.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "daml/rng.hpp"
#include "daml/text.hpp"

namespace daml {

void ComplexityConfig::validate() const {
  for (double p : {p_self_correct, p_hesitation, p_dont_care, p_new_goal}) {
    if (!(p >= 0.0 && p <= 1.0)) throw GenerationError("complexity probabilities must lie in [0, 1]");
  }
  if (p_self_correct + p_dont_care > 1.0) throw GenerationError("p_self_correct + p_dont_care must not exceed 1");
}

namespace {

const std::vector<std::string> kFillers = {"uhm", "hmm", "uh", "er", "umm"};
constexpr int kMaxTurns = 40;
constexpr int kMaxAttempts = 8;

using Tokens = std::vector<std::string>;

bool is_brace(const std::string& t) { return t.size() > 2 && t.front() == '{' && t.back() == '}'; }
bool is_angle(const std::string& t) { return t.size() > 2 && t.front() == '<' && t.back() == '>'; }
std::string inner(const std::string& t) { return t.substr(1, t.size() - 2); }

void append(Tokens& out, const Tokens& more) { out.insert(out.end(), more.begin(), more.end()); }

struct SystemUtterance {
  Tokens delex;
  Tokens lex;
  std::optional<std::string> entity;
};

class Simulator {
 public:
  Simulator(const DomainSpec& spec, const KnowledgeBase& kb, const ComplexityConfig& cfg, std::uint64_t seed)
      : spec_(spec), kb_(kb), cfg_(cfg), rng_(seed) {}

  Dialog run(std::uint64_t seed) {
    Dialog d;
    d.domain = spec_.name;
    d.seed = seed;
    if (kb_.entities.empty()) throw GenerationError(spec_.name + ": empty knowledge base");

    // Agenda: informs of a KB entity, requests, optional goal change.
    const Entity& target = kb_.entities[uniform(kb_.entities.size())];
    for (const auto& s : spec_.informable) goal_[s.name] = target.values.at(s.name);
    // 2-4 requests; a slot may come up again but never twice in a row.
    const std::size_t n_req = spec_.requestable.empty() ? 0 : 2 + uniform(3);
    while (requests_.size() < n_req) {
      const std::string& r = spec_.requestable[uniform(spec_.requestable.size())].name;
      if (requests_.empty() || requests_.back() != r || spec_.requestable.size() == 1) requests_.push_back(r);
    }
    if (chance(cfg_.p_new_goal)) new_goal_at_ = static_cast<int>(uniform(requests_.size() + 1));

    Turn opening;
    opening.user = hesitate(fill_user(pick(spec_.user("open")), "", ""));
    opening_turn(opening);
    d.turns.push_back(std::move(opening));

    bool closed = false;
    while (!closed) {
      if (static_cast<int>(d.turns.size()) >= kMaxTurns) throw GenerationError("dialog exceeded turn limit");
      Turn t;
      belief_.request.clear();
      SystemUtterance sys;
      if (pending_confirm_) {
        pending_confirm_ = false;
        t.user = hesitate(fill_user(pick(spec_.user("confirm")), "", ""));
        sys = next_action(std::nullopt, false);
      } else if (awaiting_retry_) {
        awaiting_retry_ = false;
        const std::string slot = last_changed_;
        const std::string value = retry_value(slot);
        goal_[slot] = value;
        belief_.inform[slot] = value;
        t.user = inform_utterance(slot, value, false);
        sys = next_action(slot, false);
      } else if (!offered_) {
        const auto missing = missing_slots();
        if (missing.empty()) throw GenerationError("no pending slot and no offer");
        const std::string slot = missing.front();
        const std::string value = goal_.at(slot);
        bool corrected = false;
        t.user = inform_utterance(slot, value, true, &corrected);
        belief_.inform[slot] = value;
        last_changed_ = slot;
        sys = next_action(slot, corrected);
      } else if (!new_goal_used_ && new_goal_at_ == static_cast<int>(requests_done_)) {
        new_goal_used_ = true;
        t.user = change_goal(sys);
      } else if (requests_done_ < requests_.size()) {
        const std::string& r = requests_[requests_done_++];
        belief_.request = {r};
        Tokens u;
        if (chance(0.5)) u = fill_user(pick(spec_.user("more")), "", "");
        append(u, fill_user(pick(spec_.user("request." + r)), "", ""));
        t.user = hesitate(u);
        sys = render(pick_renderable("answer." + r), &kb_.entities[*offered_]);
        append_suffix(sys, "anything_else");
      } else {
        t.user = hesitate(fill_user(pick(spec_.user("close")), "", ""));
        sys = render(pick_renderable("close"), nullptr);
        closed = true;
      }
      finish(t, std::move(sys));
      d.turns.push_back(std::move(t));
    }
    return d;
  }

 private:
  std::size_t uniform(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng_);
  }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  const std::string& pick(const std::vector<std::string>& v) { return v[uniform(v.size())]; }

  std::vector<std::string> missing_slots() const {
    std::vector<std::string> out;
    for (const auto& s : spec_.informable) {
      if (!belief_.inform.contains(s.name)) out.push_back(s.name);
    }
    return out;
  }

  Tokens fill_user(const std::string& tpl, const std::string& slot, const std::string& value) const {
    Tokens out;
    for (auto& t : tokenize(tpl)) {
      if (is_brace(t)) {
        const std::string ref = inner(t);
        if (slot.empty() || (ref != "value" && ref != slot)) {
          throw GenerationError(spec_.name + ": user template '" + tpl + "' references {" + ref + "} out of context");
        }
        out.push_back(value);
      } else {
        out.push_back(std::move(t));
      }
    }
    return out;
  }

  Tokens hesitate(Tokens u) {
    if (u.size() > 1 && chance(cfg_.p_hesitation)) {
      const auto pos = static_cast<std::ptrdiff_t>(uniform(u.size() - 1));
      u.insert(u.begin() + pos, pick(kFillers));
    }
    return u;
  }

  Tokens inform_utterance(const std::string& slot, const std::string& value, bool allow_complexity,
                          bool* corrected = nullptr) {
    const auto& values = spec_.informable[*spec_.informable_index(slot)].values;
    const std::string& tpl = pick(spec_.user("inform." + slot));
    Tokens u;
    bool fixed = false;
    const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    if (allow_complexity && draw < cfg_.p_self_correct && values.size() > 1) {
      std::string wrong = value;
      while (wrong == value) wrong = pick(values);
      u = fill_user(tpl, slot, wrong);
      append(u, fill_user(pick(spec_.user("correction")), slot, value));
      fixed = true;
    } else if (allow_complexity && draw < cfg_.p_self_correct + cfg_.p_dont_care) {
      u = fill_user(pick(spec_.user("dont_care")), slot, value);
      fixed = true;
    } else {
      u = fill_user(tpl, slot, value);
    }
    if (corrected != nullptr) *corrected = fixed;
    return hesitate(std::move(u));
  }

  // Renders a system template; {slot} takes the belief value, <slot> and
  // <name> stay delexicalized and are filled from `entity` in the lexical form.
  SystemUtterance render(const std::string& tpl, const Entity* entity) const {
    SystemUtterance s;
    for (const auto& t : tokenize(tpl)) {
      if (is_brace(t)) {
        const std::string& v = belief_.inform.at(inner(t));
        s.delex.push_back(v);
        s.lex.push_back(v);
      } else if (is_angle(t)) {
        if (entity == nullptr) throw GenerationError(spec_.name + ": system template '" + tpl + "' needs an entity");
        s.delex.push_back(t);
        const std::string slot = inner(t);
        s.lex.push_back(slot == "name" ? entity->name : entity->values.at(slot));
      } else {
        s.delex.push_back(t);
        s.lex.push_back(t);
      }
    }
    if (entity != nullptr) s.entity = entity->name;
    return s;
  }

  bool renderable(const std::string& tpl) const {
    for (const auto& t : tokenize(tpl)) {
      if (is_brace(t) && !belief_.inform.contains(inner(t))) return false;
    }
    return true;
  }

  const std::string& pick_renderable(const std::string& act) {
    std::vector<const std::string*> ok;
    for (const auto& tpl : spec_.system(act)) {
      if (renderable(tpl)) ok.push_back(&tpl);
    }
    if (ok.empty()) throw GenerationError(spec_.name + ": no usable template for " + act);
    return *ok[uniform(ok.size())];
  }

  void append_suffix(SystemUtterance& s, const std::string& act) {
    const auto more = render(pick_renderable(act), nullptr);
    append(s.delex, more.delex);
    append(s.lex, more.lex);
  }

  SystemUtterance next_action(const std::optional<std::string>& informed, bool corrected) {
    if (informed && corrected && chance(0.5)) {
      pending_confirm_ = true;
      return render(pick_renderable("explicit_confirm." + *informed), nullptr);
    }
    const KbResult r = kb_query(spec_, kb_, belief_.inform);
    const auto missing = missing_slots();
    SystemUtterance s;
    if (r.match == MatchIndicator::NoMatch) {
      awaiting_retry_ = true;
      offered_.reset();
      return render(pick_renderable("no_match"), nullptr);
    }
    if (missing.empty()) {
      offered_ = r.entities.front();
      s = render(pick_renderable("offer"), &kb_.entities[*offered_]);
      append_suffix(s, "anything_else");
    } else {
      s = render(pick_renderable("ask." + missing.front()), nullptr);
    }
    if (informed && !corrected && chance(0.5)) {
      SystemUtterance prefix = render(pick_renderable("implicit_confirm." + *informed), nullptr);
      append(prefix.delex, s.delex);
      append(prefix.lex, s.lex);
      prefix.entity = s.entity;
      s = std::move(prefix);
    }
    return s;
  }

  void opening_turn(Turn& t) {
    SystemUtterance sys = next_action(std::nullopt, false);
    finish(t, std::move(sys));
  }

  Tokens change_goal(SystemUtterance& sys) {
    std::vector<std::string> candidates;
    for (const auto& [slot, _] : belief_.inform) candidates.push_back(slot);
    const std::string slot = candidates.empty() ? spec_.informable[uniform(spec_.informable.size())].name
                                                : candidates[uniform(candidates.size())];
    const auto& values = spec_.informable[*spec_.informable_index(slot)].values;
    std::string value = belief_.inform.contains(slot) ? belief_.inform.at(slot) : pick(values);
    if (values.size() > 1) {
      const std::string old = value;
      while (value == old) value = pick(values);
    }
    goal_[slot] = value;
    belief_.inform[slot] = value;
    last_changed_ = slot;
    offered_.reset();
    Tokens u = fill_user(pick(spec_.user("new_goal")), "", "");
    bool corrected = false;
    append(u, inform_utterance(slot, value, true, &corrected));
    sys = next_action(slot, corrected);
    return u;
  }

  // A replacement value for `slot` that matches at least one entity.
  std::string retry_value(const std::string& slot) {
    const auto& values = spec_.informable[*spec_.informable_index(slot)].values;
    std::vector<std::string> ok;
    InformMap trial = belief_.inform;
    for (const auto& v : values) {
      if (belief_.inform.contains(slot) && belief_.inform.at(slot) == v) continue;
      trial[slot] = v;
      if (kb_query(spec_, kb_, trial).match != MatchIndicator::NoMatch) ok.push_back(v);
    }
    if (ok.empty()) throw GenerationError(spec_.name + ": no value of " + slot + " satisfies the other constraints");
    return ok[uniform(ok.size())];
  }

  void finish(Turn& t, SystemUtterance sys) const {
    t.sys_delex = std::move(sys.delex);
    t.sys_lex = std::move(sys.lex);
    t.kb_entity = std::move(sys.entity);
    t.belief = belief_;
    t.match = kb_query(spec_, kb_, belief_.inform).match;
  }

  const DomainSpec& spec_;
  const KnowledgeBase& kb_;
  const ComplexityConfig& cfg_;
  Rng rng_;

  InformMap goal_;
  BeliefState belief_;
  std::vector<std::string> requests_;
  std::size_t requests_done_ = 0;
  int new_goal_at_ = -1;
  bool new_goal_used_ = false;
  bool pending_confirm_ = false;
  bool awaiting_retry_ = false;
  std::string last_changed_;
  std::optional<std::size_t> offered_;
};

}  // namespace

Dialog generate_dialog(const DomainSpec& spec, const KnowledgeBase& kb, const ComplexityConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  std::string last_error;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    try {
      Simulator sim(spec, kb, cfg, stream_seed(seed, "dialog", static_cast<std::uint64_t>(attempt)));
      return sim.run(seed);
    } catch (const GenerationError& e) {
      last_error = e.what();
    }
  }
  throw GenerationError("dialog seed " + std::to_string(seed) + " failed after " + std::to_string(kMaxAttempts) +
                        " attempts: " + last_error);
}

std::vector<Dialog> generate_corpus(const DomainSpec& spec, const KnowledgeBase& kb, const ComplexityConfig& cfg,
                                    std::size_t n, std::uint64_t seed) {
  if (n == 0) throw GenerationError("corpus size must be at least 1");
  std::vector<Dialog> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_dialog(spec, kb, cfg, seed + i));
  return out;
}

CorpusStats corpus_stats(std::span<const Dialog> corpus) {
  CorpusStats s;
  std::size_t tokens = 0;
  std::size_t utterances = 0;
  for (const auto& d : corpus) {
    ++s.dialogs;
    s.turns += d.turns.size();
    for (const auto& t : d.turns) {
      tokens += t.user.size() + t.sys_lex.size();
      utterances += 2;
    }
  }
  if (s.dialogs > 0) s.mean_turns = static_cast<double>(s.turns) / static_cast<double>(s.dialogs);
  if (utterances > 0) s.mean_utterance_length = static_cast<double>(tokens) / static_cast<double>(utterances);
  return s;
}

std::vector<BeliefState> track_dialog(const DomainSpec& spec, const Dialog& d) {
  std::vector<BeliefState> out;
  InformMap inform;
  for (const auto& t : d.turns) {
    BeliefState b;
    for (const auto& tok : t.user) {
      if (auto slot = spec.slot_of_value(tok)) inform[spec.informable[*slot].name] = tok;
      for (const auto& r : spec.requestable) {
        if (std::find(r.cues.begin(), r.cues.end(), tok) != r.cues.end()) b.request.insert(r.name);
      }
    }
    b.inform = inform;
    out.push_back(std::move(b));
  }
  return out;
}

bool oracle_check(const DomainSpec& spec, const Dialog& d) {
  if (d.domain != spec.name) return false;
  const auto tracked = track_dialog(spec, d);
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (!(tracked[i] == d.turns[i].belief)) return false;
  }
  return true;
}

nlohmann::json dialog_to_json(const Dialog& d) {
  nlohmann::json j;
  j["domain"] = d.domain;
  j["seed"] = d.seed;
  j["turns"] = nlohmann::json::array();
  for (const auto& t : d.turns) {
    nlohmann::json jt;
    jt["user"] = detokenize(t.user);
    jt["sys_delex"] = detokenize(t.sys_delex);
    jt["sys_lex"] = detokenize(t.sys_lex);
    jt["inform"] = t.belief.inform;
    jt["request"] = std::vector<std::string>(t.belief.request.begin(), t.belief.request.end());
    jt["match"] = std::string(to_string(t.match));
    jt["kb_entity"] = t.kb_entity ? nlohmann::json(*t.kb_entity) : nlohmann::json(nullptr);
    j["turns"].push_back(std::move(jt));
  }
  return j;
}

Dialog dialog_from_json(const nlohmann::json& j) {
  Dialog d;
  d.domain = j.at("domain").get<std::string>();
  d.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.user = tokenize(jt.at("user").get<std::string>());
    t.sys_delex = tokenize(jt.at("sys_delex").get<std::string>());
    t.sys_lex = tokenize(jt.at("sys_lex").get<std::string>());
    t.belief.inform = jt.at("inform").get<InformMap>();
    for (const auto& r : jt.at("request")) t.belief.request.insert(r.get<std::string>());
    t.match = parse_match(jt.at("match").get<std::string>());
    if (!jt.at("kb_entity").is_null()) t.kb_entity = jt.at("kb_entity").get<std::string>();
    d.turns.push_back(std::move(t));
  }
  return d;
}

void write_corpus(const std::filesystem::path& path, std::span<const Dialog> corpus) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw GenerationError("cannot write " + path.string());
  for (const auto& d : corpus) os << dialog_to_json(d).dump() << '\n';
}

std::vector<Dialog> read_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw GenerationError("cannot read " + path.string());
  std::vector<Dialog> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(dialog_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw GenerationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace daml
