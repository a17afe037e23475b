// Acceptance checks. --exact runs the deterministic criteria 1-6;
// --directional runs (or reads) the multi-seed desk experiment and checks
// criteria 7-11. Prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "daml/autodiff.hpp"
#include "daml/evaluation.hpp"
#include "daml/experiment.hpp"
#include "daml/grad_check.hpp"
#include "daml/training.hpp"
#include "model_reference.hpp"

using namespace daml;
using namespace daml::test;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << name << "): " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

template <typename F>
void run(int id, const std::string& name, F&& check) {
  try {
    report(id, name, check());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("exception: ") + e.what()});
  }
}

std::string num(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

double cpu_seconds(std::clock_t since) { return static_cast<double>(std::clock() - since) / CLOCKS_PER_SEC; }

using Mat = Matrix<double>;
using T = Tensor<double>;

Mat random_mat(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// ---- criterion 1 ----

struct OpCase {
  std::string name;
  std::vector<std::pair<Index, Index>> shapes;
  std::function<T(std::vector<T>&)> build;
};

Outcome gradient_fidelity() {
  const std::clock_t t0 = std::clock();
  std::mt19937_64 rng(101);
  const auto positive = [](const T& x) { return affine(sigmoid(x), 1.0, 0.1); };
  const std::vector<OpCase> ops = {
      {"matmul", {{3, 4}, {4, 2}}, [](std::vector<T>& p) { return sum(tanh(matmul(p[0], p[1]))); }},
      {"add", {{3, 2}, {3, 2}, {1, 2}, {3, 1}, {1, 1}},
       [](std::vector<T>& p) { return sum(tanh(add(add(add(add(p[0], p[1]), p[2]), p[3]), p[4]))); }},
      {"sub", {{3, 2}, {1, 2}}, [](std::vector<T>& p) { return sum(tanh(sub(p[0], p[1]))); }},
      {"mul", {{3, 2}, {3, 2}, {3, 1}}, [](std::vector<T>& p) { return sum(mul(mul(p[0], p[1]), p[2])); }},
      {"div", {{3, 2}, {3, 2}, {1, 1}},
       [&](std::vector<T>& p) { return sum(div(div(p[0], positive(p[1])), positive(p[2]))); }},
      {"sigmoid", {{2, 3}}, [](std::vector<T>& p) { return sum(mul(sigmoid(p[0]), p[0])); }},
      {"tanh", {{2, 3}}, [](std::vector<T>& p) { return sum(mul(tanh(p[0]), p[0])); }},
      {"exp", {{2, 3}}, [](std::vector<T>& p) { return sum(exp(p[0])); }},
      {"log", {{2, 3}}, [&](std::vector<T>& p) { return sum(log(positive(p[0]), 1e-12)); }},
      {"softmax", {{3, 5}, {3, 5}}, [](std::vector<T>& p) { return sum(mul(softmax(p[0]), p[1])); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](std::vector<T>& p) { return sum(tanh(concat_cols(p[0], p[1]))); }},
      {"concat_rows", {{2, 3}, {4, 3}}, [](std::vector<T>& p) { return sum(tanh(concat_rows(p[0], p[1]))); }},
      {"slice_rows", {{5, 3}}, [](std::vector<T>& p) { return sum(tanh(slice_rows(p[0], 1, 3))); }},
      {"slice_cols", {{3, 5}}, [](std::vector<T>& p) { return sum(tanh(slice_cols(p[0], 2, 2))); }},
      {"gather_rows", {{5, 3}},
       [](std::vector<T>& p) {
         const int ids[] = {4, 0, 4, 2};
         return sum(tanh(gather_rows(p[0], ids)));
       }},
      {"embedding", {{5, 3}},
       [](std::vector<T>& p) {
         const int ids[] = {1, 1, 3};
         return sum(tanh(embedding(p[0], std::span<const int>(ids))));
       }},
      {"transpose", {{2, 3}, {3, 2}}, [](std::vector<T>& p) { return sum(mul(transpose(p[0]), p[1])); }},
      {"sum", {{3, 3}}, [](std::vector<T>& p) { return sum(mul(p[0], p[0])); }},
      {"row_sum", {{3, 4}}, [](std::vector<T>& p) { return sum(tanh(row_sum(p[0]))); }},
      {"affine", {{3, 4}}, [](std::vector<T>& p) { return sum(tanh(affine(p[0], -1.5, 0.25))); }},
      {"gather_cols", {{3, 5}},
       [](std::vector<T>& p) {
         const int ids[] = {4, 0, 2};
         return sum(log(gather_cols(softmax(p[0]), ids), 1e-12));
       }},
      {"scatter_cols", {{2, 3}},
       [](std::vector<T>& p) {
         const int ids[] = {4, 1, 4};
         const T s = scatter_cols(p[0], ids, 6);
         return sum(mul(s, s));
       }},
      {"gru_cell", {{3, 4}, {3, 5}, {4, 15}, {5, 15}, {1, 15}, {1, 15}},
       [](std::vector<T>& p) {
         const T proj = add(matmul(p[0], p[2]), p[4]);
         return sum(tanh(gru_cell(proj, gru_cell(proj, p[1], p[3], p[5]), p[3], p[5])));
       }},
      {"additive_scores", {{4, 3}, {2, 3}, {3, 1}},
       [](std::vector<T>& p) { return sum(tanh(additive_scores(p[0], p[1], p[2]))); }},
  };
  double worst = 0.0;
  std::string worst_name;
  std::size_t coords = 0;
  for (const auto& op : ops) {
    ParameterSet<double> params;
    for (std::size_t i = 0; i < op.shapes.size(); ++i) {
      params.add("p" + std::to_string(i), random_mat(op.shapes[i].first, op.shapes[i].second, rng));
    }
    const auto r = grad_check_detailed([&](Graph<double>&, std::vector<T>& p) { return op.build(p); }, params, 1e-6);
    coords += r.coordinates_checked;
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_name = op.name;
    }
  }

  // Dropout: grad_check runs in evaluation mode, so compare by hand.
  {
    const Mat x = random_mat(3, 4, rng), probe = random_mat(3, 4, rng);
    Rng mask_rng(3);
    const Mat mask = sample_dropout_mask<double>(3, 4, 0.5, mask_rng);
    const auto loss_at = [&](const Mat& v, Mat* grad) {
      Graph<double> g(true);
      const T leaf = g.variable(v);
      const T loss = sum(mul(tanh(dropout(leaf, mask)), g.constant(probe)));
      if (grad != nullptr) {
        g.backward(loss);
        *grad = leaf.grad();
      }
      return loss.item();
    };
    Mat grad;
    loss_at(x, &grad);
    for (Index i = 0; i < x.size(); ++i) {
      Mat up = x, down = x;
      up.data()[i] += 1e-6;
      down.data()[i] -= 1e-6;
      const double numeric = (loss_at(up, nullptr) - loss_at(down, nullptr)) / 2e-6;
      const double err = std::abs(grad.data()[i] - numeric) / std::max(1.0, std::abs(grad.data()[i]));
      ++coords;
      if (err >= worst) {
        worst = err;
        worst_name = "dropout";
      }
    }
  }

  // Both copy mixtures, differentiated through every model parameter and
  // through free stand-ins for their encoder-side inputs.
  Fixture f;
  const auto cfg = small_config(4, 3, 5, 0.5);
  const auto model_params = init_params<double>(cfg, f.vocab.size(), 102);
  const Sequicity<double> model(cfg, f.vocab.size());
  const Index L = 6, Lu = 3, steps = 4, V = static_cast<Index>(f.vocab.size());
  const std::vector<int> user_ids = {f.vocab.id("seattle"), f.vocab.id("cheap"), f.vocab.id("seattle")};
  const Mat probe = random_mat(steps, V, rng);
  for (const char* head : {"belief head", "response head"}) {
    ParameterSet<double> all = model_params;
    all.add("x.enc_states", random_mat(L, cfg.hidden, rng));
    all.add("x.keys", random_mat(L, cfg.attention, rng));
    all.add("x.user_copy", random_mat(Lu, cfg.hidden, rng));
    all.add("x.states", random_mat(steps, cfg.hidden, rng));
    all.add("x.belief_states", random_mat(3, cfg.hidden, rng));
    const std::size_t n = model_params.size();
    const bool belief = std::string(head) == "belief head";
    const auto build = [&](Graph<double>& g, std::vector<T>& leaves) {
      const auto p = model.assemble(model_params, std::span<const T>(leaves.data(), n));
      EncoderView<double> enc;
      enc.states = leaves[n];
      enc.keys_b = leaves[n + 1];
      enc.keys_r = leaves[n + 1];
      enc.user_copy = leaves[n + 2];
      enc.user_ids = user_ids;
      const T probs = belief ? model.belief_head(p, enc, leaves[n + 3]).probs
                             : model.response_head(p, enc, leaves[n + 3],
                                                   model.response_copy_row(p, leaves[n + 4], user_ids))
                                   .probs;
      return sum(mul(log(probs, 1e-12), g.constant(probe)));
    };
    const auto r = grad_check_detailed(build, all, 1e-6, 16, 7);
    coords += r.coordinates_checked;
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_name = std::string(head) + " " + r.worst_parameter;
    }
  }

  // Full teacher-forced turn loss on a two-turn micro-batch.
  {
    const auto spec = test::domain("bus");
    const auto dialogs = bus_dialogs(1, 23);
    Vocab vocab;
    extend_vocab(vocab, dialogs);
    const auto examples = dialogs_to_examples(spec, dialogs, vocab);
    const auto lcfg = small_config(4, 3, 3, 0.3);
    const auto params = init_params<double>(lcfg, vocab.size(), 17);
    const Sequicity<double> lmodel(lcfg, vocab.size());
    const std::vector<std::size_t> idx = {0, 1};
    const Batch batch = make_batch(examples, idx);
    const auto r = grad_check_detailed(
        [&](Graph<double>& g, const std::vector<T>& leaves) {
          return lmodel.batch_loss(g, lmodel.assemble(params, leaves), batch, nullptr);
        },
        params, 1e-6, 12, 5);
    coords += r.coordinates_checked;
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_name = "turn loss " + r.worst_parameter;
    }
  }
  const double secs = cpu_seconds(t0);
  return {worst < 1e-3 && secs < 60.0, "max rel. error " + num(worst) + " (" + worst_name + ") over " +
                                            std::to_string(coords) + " coordinates, " +
                                            std::to_string(ops.size() + 4) + " checks, " + num(secs, 3) +
                                            " s CPU; need < 1e-3 and < 60 s"};
}

// ---- criterion 2 ----

Outcome copy_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed : {11, 12, 13}) {
    worst = std::max({worst, belief_oracle_error(seed), response_oracle_error(seed)});
  }
  return {worst < 1e-9, "max |model - brute force| " + num(worst) + " over belief and response decoders, 3 seeds; need < 1e-9"};
}

// ---- criterion 3 ----

Outcome maml_oracle() {
  ParameterSet<double> p;
  p.add("w", Matrix<double>::Constant(1, 1, 1.0));
  const auto grad = [](const ParameterSet<double>& q, std::size_t) {
    const double w = q["w"](0, 0);
    ParameterSet<double> g;
    g.add("w", Matrix<double>::Constant(1, 1, 2 * w));
    return std::pair{w * w, g};
  };
  const double scalar = first_order_meta_gradient(p, 1, 0.1, grad)["w"](0, 0);

  const std::vector<std::string> names = {"restaurant", "weather"};
  Vocab vocab;
  std::vector<std::vector<ContextExample>> data;
  std::vector<DomainSpec> specs;
  std::vector<std::vector<Dialog>> dialogs;
  for (const auto& n : names) {
    specs.push_back(test::domain(n));
    dialogs.push_back(generate_corpus(specs.back(), generate_kb(specs.back(), 100, 31), ComplexityConfig{}, 3, 31));
    extend_vocab(vocab, dialogs.back());
  }
  for (std::size_t i = 0; i < names.size(); ++i) data.push_back(dialogs_to_examples(specs[i], dialogs[i], vocab));
  ModelConfig cfg = small_config(8, 6, 6, 0.08);
  const Sequicity<float> model(cfg, vocab.size());
  const auto params = init_params<float>(cfg, vocab.size(), 3);
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const std::vector<Batch> batches = {make_batch(data[0], idx), make_batch(data[1], idx)};
  const auto batch_grad = [&](const ParameterSet<float>& q, std::size_t k) {
    auto g = q.zeros_like();
    const double loss = model.loss_and_gradient(q, batches[k], g, nullptr);
    return std::pair{loss, g};
  };
  const auto meta = first_order_meta_gradient(params, 2, 0.0f, batch_grad);
  auto pooled = params.zeros_like();
  for (const auto& b : batches) model.loss_and_gradient(params, b, pooled, nullptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, static_cast<double>((meta[i] - pooled[i]).cwiseAbs().maxCoeff()));
  }
  const bool pass = std::abs(scalar - 1.6) < 1e-12 && worst < 1e-7;
  return {pass, "scalar meta-gradient " + num(scalar, 17) + " (need 1.6 within 1e-12); alpha=0 vs pooled max diff " +
                    num(worst) + " (need < 1e-7)"};
}

// ---- criterion 4 ----

Outcome data_soundness() {
  std::size_t dialogs = 0, passed = 0, round_trips = 0, round_ok = 0;
  std::string turns;
  bool turns_ok = true;
  std::mt19937_64 rng(4);
  for (const char* name : {"restaurant", "weather", "bus", "movie"}) {
    const auto spec = test::domain(name);
    const auto kb = generate_kb(spec, 100, 44);
    const auto corpus = generate_corpus(spec, kb, ComplexityConfig{}, 250, 44);
    for (const auto& d : corpus) {
      ++dialogs;
      passed += oracle_check(spec, d) ? 1 : 0;
    }
    const double mean = corpus_stats(corpus).mean_turns;
    turns_ok = turns_ok && mean >= 7.0 && mean <= 11.0;
    turns += std::string(turns.empty() ? "" : ", ") + name + " " + num(mean, 3);
    for (int i = 0; i < 300; ++i) {
      BeliefState b;
      for (const auto& s : spec.informable) {
        if (rng() % 2) b.inform[s.name] = s.values[rng() % s.values.size()];
      }
      for (const auto& r : spec.requestable) {
        if (rng() % 2) b.request.insert(r.name);
      }
      const auto parsed = parse_belief(spec, serialize_belief(spec, b));
      ++round_trips;
      round_ok += parsed.belief == b && parsed.dropped == 0 ? 1 : 0;
    }
  }
  const bool pass = passed == dialogs && round_ok == round_trips && turns_ok;
  return {pass, std::to_string(passed) + "/" + std::to_string(dialogs) + " dialogs pass oracle_check; " +
                    std::to_string(round_ok) + "/" + std::to_string(round_trips) +
                    " belief round trips; mean turns " + turns + " (need [7, 11])"};
}

// ---- criterion 5 ----

Outcome metric_oracles() {
  const std::vector<TokenSeq> corpus = {{"the", "cat", "sat", "on", "the", "mat"}, {"a", "b", "c", "d", "e"}};
  const double self = bleu(corpus, corpus);
  const std::vector<BeliefState> oracle = {{{{"loc", "seattle"}, {"food_pref", "indian"}}, {"price"}}};
  const std::vector<BeliefState> predicted = {{{{"loc", "seattle"}}, {"price"}}};
  const double f1 = entity_f1(predicted, oracle);

  const auto spec = test::domain("restaurant");
  std::mt19937_64 rng(5);
  const auto random_belief = [&] {
    BeliefState b;
    for (const auto& s : spec.informable) {
      if (rng() % 2) b.inform[s.name] = s.values[rng() % s.values.size()];
    }
    for (const auto& r : spec.requestable) {
      if (rng() % 3 == 0) b.request.insert(r.name);
    }
    return b;
  };
  std::size_t in_range = 0, trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<BeliefState> p, o;
    std::vector<TokenSeq> h, r;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(random_belief());
      o.push_back(random_belief());
      TokenSeq a, b;
      for (std::size_t k = rng() % 8; k > 0; --k) a.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
      for (std::size_t k = rng() % 8; k > 0; --k) b.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
      h.push_back(a);
      r.push_back(b);
    }
    const double fv = entity_f1(p, o), bv = bleu(h, r);
    in_range += fv >= 0.0 && fv <= 1.0 && bv >= 0.0 && bv <= 1.0 + 1e-12 ? 1 : 0;
  }
  const bool pass = std::abs(self - 1.0) < 1e-12 && std::abs(f1 - 0.8) < 1e-12 && in_range == trials;
  return {pass, "bleu(x, x) = " + num(self, 15) + ", F1 fixture = " + num(f1, 15) + ", " + std::to_string(in_range) +
                    "/" + std::to_string(trials) + " fuzz cases in [0, 1]"};
}

// ---- criterion 6 ----

Outcome overfit() {
  const std::clock_t t0 = std::clock();
  const auto spec = test::domain("restaurant");
  const auto kb = generate_kb(spec, 100, 35);
  const auto dialogs = generate_corpus(spec, kb, ComplexityConfig{}, 10, 35);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  ModelConfig cfg;
  cfg.dropout = 0.0;
  const Sequicity<float> model(cfg, vocab.size());
  auto params = init_params<float>(cfg, vocab.size(), 6);
  auto adam = AdamState<float>::init(params, 0.003);
  auto grads = params.zeros_like();
  double loss = dataset_loss(model, params, examples, 32);
  int epoch = 0;
  for (; epoch < 200 && loss >= 0.1; ++epoch) {
    for (const auto& b : make_batches(examples, 32, stream_seed(6, "batching", epoch))) {
      model.loss_and_gradient(params, b, grads, nullptr);
      adam_step(adam, params, grads);
    }
    loss = dataset_loss(model, params, examples, 32);
  }
  const EvalDomain dom{&spec, &kb, dialogs};
  const auto rep = evaluate_model(model, params, vocab, std::span<const EvalDomain>(&dom, 1));
  const double secs = cpu_seconds(t0);
  const bool pass = loss < 0.1 && rep.entity_f1 > 0.95 && epoch <= 200 && secs < 300.0;
  return {pass, "per-token loss " + num(loss) + " after " + std::to_string(epoch) + " epochs, Entity F1 " +
                    num(rep.entity_f1) + ", " + num(secs, 3) + " s CPU; need < 0.1, > 0.95, <= 200 epochs, < 300 s"};
}

// ---- criteria 7-11 ----

struct Condition {
  double f1 = 0, f1_sd = 0, epochs = 0, epochs_sd = 0;
};

Condition condition(const ExperimentReport& rep, const std::string& key) {
  const auto it = rep.aggregate.find(key);
  if (it == rep.aggregate.end()) throw std::runtime_error("report lacks condition " + key);
  return {it->second.entity_f1, it->second.entity_f1_std, it->second.epochs, it->second.epochs_std};
}

std::string pm(double mean, double sd) { return num(mean, 3) + " +- " + num(sd, 2); }

void directional(const ExperimentReport& rep, double seconds) {
  double cpu = 0;
  for (const auto& r : rep.runs) cpu += r.seconds;
  std::cout << "desk experiment: " << rep.runs.size() << " seeds completed, " << rep.failures.size()
            << " failed, config " << rep.config_hash << ", " << num(cpu / 60.0, 3) << " min in seed runs"
            << (seconds > 0 ? ", " + num(seconds / 60.0, 3) + " min wall" : std::string()) << "\n";
  std::cout << rep.table();

  run(7, "new-domain ordering", [&]() -> Outcome {
    const auto d = condition(rep, "daml/adapt-9"), t = condition(rep, "transfer/adapt-9");
    return {d.f1 >= t.f1 - 0.01,
            "Entity F1 after 9-dialog adaptation: meta " + pm(d.f1, d.f1_sd) + " vs transfer " + pm(t.f1, t.f1_sd) +
                "; need meta >= transfer - 0.01"};
  });
  run(8, "adaptation efficiency", [&]() -> Outcome {
    const auto d = condition(rep, "daml/adapt-9"), t = condition(rep, "transfer/adapt-9");
    return {d.epochs <= t.epochs, "adaptation epochs: meta " + pm(d.epochs, d.epochs_sd) + " vs transfer " +
                                      pm(t.epochs, t.epochs_sd) + "; need meta <= transfer"};
  });
  run(9, "data-size sweep", [&]() -> Outcome {
    const std::vector<int> sizes = {1, 9, 45, 90};
    std::vector<Condition> c;
    std::string curve;
    for (int n : sizes) {
      c.push_back(condition(rep, "daml/adapt-" + std::to_string(n)));
      curve += (curve.empty() ? "" : ", ") + std::to_string(n) + ": " + pm(c.back().f1, c.back().f1_sd);
    }
    bool monotone = true;
    for (std::size_t i = 1; i < c.size(); ++i) {
      const double pooled = std::sqrt((c[i].f1_sd * c[i].f1_sd + c[i - 1].f1_sd * c[i - 1].f1_sd) / 2.0);
      monotone = monotone && c[i].f1 >= c[i - 1].f1 - pooled;
    }
    const double early = c[1].f1 - c[0].f1, late = c[3].f1 - c[2].f1;
    return {monotone && late < early, "Entity F1 by size {" + curve + "}; gain 1->9 " + num(early, 3) +
                                          ", 45->90 " + num(late, 3) +
                                          "; need non-decreasing within pooled std and 45->90 < 1->9"};
  });
  run(10, "one-shot viability", [&]() -> Outcome {
    const auto one = condition(rep, "daml/adapt-1"), none = condition(rep, "daml/unadapted");
    return {one.f1 - none.f1 >= 0.05, "Entity F1 one-shot " + pm(one.f1, one.f1_sd) + " vs unadapted " +
                                          pm(none.f1, none.f1_sd) + "; need gain >= 0.05"};
  });
  run(11, "in-domain strength", [&]() -> Outcome {
    const auto d = condition(rep, "daml/in-domain");
    return {d.f1 >= 0.80, "source-domain test Entity F1 " + pm(d.f1, d.f1_sd) +
                              " (regenerated corpus, 300 training dialogs per source); need >= 0.80"};
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool exact = false, direct = false, strict = false, rerun = false;
  std::string config, out = "acceptance-desk", report_path;
  std::size_t jobs = 1;
  app.add_flag("--exact", exact, "deterministic criteria 1-6");
  app.add_flag("--directional", direct, "desk-scale criteria 7-11");
  app.add_option("--config", config, "run configuration for the desk experiment");
  app.add_option("--out", out, "directory for the desk experiment reports");
  app.add_option("--report", report_path, "score an existing aggregate report instead of running");
  app.add_option("--jobs", jobs, "evaluation threads");
  app.add_flag("--rerun", rerun, "run the experiment even when a matching report exists");
  app.add_flag("--strict", strict, "exit nonzero when a directional criterion fails");
  CLI11_PARSE(app, argc, argv);
  if (!exact && !direct) exact = direct = true;

  if (exact) {
    run(1, "gradient fidelity", gradient_fidelity);
    run(2, "copy-formula oracle", copy_oracle);
    run(3, "meta-gradient oracle", maml_oracle);
    run(4, "data soundness", data_soundness);
    run(5, "metric oracles", metric_oracles);
    run(6, "overfit sanity", overfit);
  }
  const int exact_failures = failures;
  bool could_not_run = false;
  if (direct) {
    try {
      if (!report_path.empty()) {
        std::ifstream in(report_path);
        if (!in) throw std::runtime_error("cannot read " + report_path);
        directional(ExperimentReport::from_json(nlohmann::json::parse(in)), 0.0);
      } else {
        RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
        cfg.jobs = jobs;
        cfg.paths.out_dir = out;
        fs::create_directories(out);
        const fs::path previous = fs::path(out) / "aggregate.json";
        if (!rerun && fs::exists(previous)) {
          std::ifstream in(previous);
          const auto rep = ExperimentReport::from_json(nlohmann::json::parse(in));
          if (rep.config_hash == cfg.hash() && rep.runs.size() + rep.failures.size() == cfg.n_seeds) {
            std::cout << "scoring the finished run in " << previous.string() << " (same config hash; --rerun to repeat)\n";
            directional(rep, 0.0);
            std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
            return exact_failures > 0 || (strict && failures > 0) ? 1 : 0;
          }
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto rep = run_experiment(
            cfg, [](const std::string& msg) { std::cerr << msg << std::endl; },
            [&](const SeedResult& r) {
              std::ofstream(fs::path(out) / ("seed-" + std::to_string(r.seed) + ".json")) << r.to_json().dump(2);
            });
        std::ofstream(fs::path(out) / "aggregate.json") << rep.to_json().dump(2);
        directional(rep, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
    } catch (const std::exception& e) {
      std::cout << "FAIL  directional suite could not run: " << e.what() << "\n";
      ++failures;
      could_not_run = true;
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  if (exact_failures > 0 || could_not_run) return 1;
  return strict && failures > 0 ? 1 : 0;
}
