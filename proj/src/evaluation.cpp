#include "daml/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

namespace daml {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const TokenSeq& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[TokenSeq(s.begin() + i, s.begin() + i + n)];
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

double bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  if (hypotheses.empty()) throw MetricError("BLEU of an empty corpus");
  if (hypotheses.size() != references.size()) throw MetricError("BLEU: hypothesis and reference counts differ");
  std::size_t hyp_len = 0, ref_len = 0;
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngrams(hypotheses[i], n);
      const auto r = ngrams(references[i], n);
      for (const auto& [gram, count] : h) {
        const auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (hyp_len == 0 || matches[0] == 0.0) return 0.0;
  double log_p = std::log(matches[0] / totals[0]);
  for (int n = 1; n < 4; ++n) log_p += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  const double c = static_cast<double>(hyp_len), r = static_cast<double>(ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_p / 4.0);
}

std::set<std::string> belief_items(const BeliefState& b) {
  std::set<std::string> out;
  for (const auto& [slot, value] : b.inform) out.insert(lower(slot) + "=" + lower(value));
  for (const auto& r : b.request) out.insert("?" + lower(r));
  return out;
}

void F1Counts::add(const BeliefState& predicted_state, const BeliefState& oracle_state) {
  const auto p = belief_items(predicted_state);
  const auto o = belief_items(oracle_state);
  predicted += p.size();
  oracle += o.size();
  for (const auto& item : p) correct += o.count(item);
}

F1Counts& F1Counts::operator+=(const F1Counts& o) {
  correct += o.correct;
  predicted += o.predicted;
  oracle += o.oracle;
  return *this;
}

double F1Counts::precision() const {
  return predicted == 0 ? (oracle == 0 ? 1.0 : 0.0) : static_cast<double>(correct) / static_cast<double>(predicted);
}

double F1Counts::recall() const {
  return oracle == 0 ? (predicted == 0 ? 1.0 : 0.0) : static_cast<double>(correct) / static_cast<double>(oracle);
}

double F1Counts::f1() const {
  if (predicted == 0 && oracle == 0) return 1.0;
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double entity_f1(std::span<const BeliefState> predicted, std::span<const BeliefState> oracle) {
  if (predicted.size() != oracle.size()) throw MetricError("entity F1: prediction and oracle counts differ");
  F1Counts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i], oracle[i]);
  return c.f1();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : per_domain) {
    domains.push_back({{"domain", d.domain},
                       {"turns", d.turns},
                       {"bleu", d.bleu},
                       {"entity_f1", d.entity_f1},
                       {"correct", d.counts.correct},
                       {"predicted", d.counts.predicted},
                       {"oracle", d.counts.oracle}});
  }
  return {{"bleu", bleu},         {"entity_f1", entity_f1},         {"epochs", epochs},
          {"bleu_std", bleu_std}, {"entity_f1_std", entity_f1_std}, {"epochs_std", epochs_std},
          {"seeds", seeds},       {"per_domain", domains}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.bleu = j.at("bleu").get<double>();
  r.entity_f1 = j.at("entity_f1").get<double>();
  r.epochs = j.value("epochs", 0.0);
  r.bleu_std = j.value("bleu_std", 0.0);
  r.entity_f1_std = j.value("entity_f1_std", 0.0);
  r.epochs_std = j.value("epochs_std", 0.0);
  r.seeds = j.value("seeds", std::size_t{1});
  for (const auto& d : j.value("per_domain", nlohmann::json::array())) {
    DomainScore s;
    s.domain = d.at("domain").get<std::string>();
    s.turns = d.at("turns").get<std::size_t>();
    s.bleu = d.at("bleu").get<double>();
    s.entity_f1 = d.at("entity_f1").get<double>();
    s.counts = {d.value("correct", std::size_t{0}), d.value("predicted", std::size_t{0}),
                d.value("oracle", std::size_t{0})};
    r.per_domain.push_back(std::move(s));
  }
  return r;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

EvalReport evaluate_model(const Sequicity<float>& model, const ParameterSet<float>& params, const Vocab& vocab,
                          std::span<const EvalDomain> domains, const EvalOptions& options,
                          std::vector<TurnRecord>* turns) {
  if (domains.empty()) throw MetricError("nothing to evaluate");
  EvalReport report;
  F1Counts pooled;
  std::vector<TokenSeq> all_hyp, all_ref;
  for (const auto& dom : domains) {
    const auto examples = dialogs_to_examples(*dom.spec, dom.dialogs, vocab);
    std::vector<TurnPrediction> preds(examples.size());
    if (options.full_rollout) {
      // Turns of one dialog depend on each other; parallelize across dialogs.
      std::vector<std::size_t> starts;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].turn == 0) starts.push_back(i);
      }
      parallel_for(starts.size(), options.jobs, [&](std::size_t s) {
        for (std::size_t i = starts[s]; i < examples.size() && (i == starts[s] || examples[i].turn != 0); ++i) {
          ContextExample ex = examples[i];
          if (ex.turn > 0) {
            const auto& prev = preds[i - 1];
            auto span = serialize_belief(*dom.spec, prev.belief);
            span.pop_back();
            ex.prev_belief = vocab.encode(span);
            ex.prev_response = vocab.encode(prev.response_delex);
          }
          preds[i] = model.greedy_decode_turn(params, ex, *dom.spec, *dom.kb, vocab);
        }
      });
    } else {
      parallel_for(examples.size(), options.jobs, [&](std::size_t i) {
        preds[i] = model.greedy_decode_turn(params, examples[i], *dom.spec, *dom.kb, vocab);
      });
    }

    DomainScore score;
    score.domain = dom.spec->name;
    score.turns = examples.size();
    std::vector<TokenSeq> hyp, ref;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      score.counts.add(preds[i].belief, examples[i].belief);
      hyp.push_back(preds[i].response_delex);
      ref.push_back(examples[i].response_tokens);
      if (turns != nullptr) {
        turns->push_back({score.domain, examples[i].dialog, examples[i].turn, preds[i], examples[i].belief,
                          examples[i].response_tokens});
      }
    }
    score.entity_f1 = score.counts.f1();
    score.bleu = hyp.empty() ? 0.0 : bleu(hyp, ref);
    pooled += score.counts;
    all_hyp.insert(all_hyp.end(), hyp.begin(), hyp.end());
    all_ref.insert(all_ref.end(), ref.begin(), ref.end());
    report.per_domain.push_back(std::move(score));
  }
  report.entity_f1 = pooled.f1();
  report.bleu = all_hyp.empty() ? 0.0 : bleu(all_hyp, all_ref);
  return report;
}

EvalReport aggregate(std::span<const EvalReport> reports) {
  if (reports.empty()) throw MetricError("aggregate needs at least one report");
  std::vector<double> b, f, e;
  std::map<std::string, std::vector<const DomainScore*>> by_domain;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    b.push_back(r.bleu);
    f.push_back(r.entity_f1);
    e.push_back(r.epochs);
    for (const auto& d : r.per_domain) {
      if (!by_domain.contains(d.domain)) order.push_back(d.domain);
      by_domain[d.domain].push_back(&d);
    }
  }
  EvalReport out;
  out.bleu = mean(b);
  out.entity_f1 = mean(f);
  out.epochs = mean(e);
  out.bleu_std = sample_std(b);
  out.entity_f1_std = sample_std(f);
  out.epochs_std = sample_std(e);
  out.seeds = reports.size();
  for (const auto& name : order) {
    DomainScore s;
    s.domain = name;
    std::vector<double> db, df;
    for (const auto* d : by_domain[name]) {
      db.push_back(d->bleu);
      df.push_back(d->entity_f1);
      s.turns += d->turns;
      s.counts += d->counts;
    }
    s.bleu = mean(db);
    s.entity_f1 = mean(df);
    out.per_domain.push_back(std::move(s));
  }
  return out;
}

}  // namespace daml
