#include "doctest.h"

#include <cmath>

#include "daml/grad_check.hpp"
#include "daml/model.hpp"
#include "model_reference.hpp"

using namespace daml;
using namespace daml::test;

TEST_CASE("belief decoder matches the brute-force formulas") {
  Fixture f;
  const auto cfg = small_config(4, 3, 5, 0.5);
  const auto params = init_params<double>(cfg, f.vocab.size(), 11);
  const Sequicity<double> model(cfg, f.vocab.size());
  const Reference ref{params, cfg.hidden};

  const auto enc_ids = encoder_input(f.ex).ids;
  const auto enc = ref.encode(enc_ids);
  const auto out = model.decode_belief(params, f.ex, f.vocab, true);
  REQUIRE(out.distributions.rows() == static_cast<Index>(f.ex.target_belief.size()));

  const auto encoded = model.encode(params, f.ex);
  REQUIRE(encoded.states.rows() == static_cast<Index>(enc_ids.size()));
  for (std::size_t j = 0; j < enc.size(); ++j) {
    CHECK((encoded.states.row(static_cast<Index>(j)).transpose() - enc[j]).cwiseAbs().maxCoeff() < 1e-12);
  }

  const int ub = encoder_input(f.ex).user_begin;
  Vec s = enc.back();
  int input = token_id::kGo;
  double worst = 0;
  for (std::size_t step = 0; step < f.ex.target_belief.size(); ++step) {
    s = ref.gru("bspan.", ref.embed(input), s);
    const auto [pv, g] = ref.vocab("bspan.", s, enc);
    std::vector<double> psis;
    for (std::size_t j = 0; j < f.ex.user.size(); ++j) {
      psis.push_back(Reference::psi(params["bspan.copy_w"], enc[ub + j], s));
    }
    const Vec expected = Reference::mixture(pv, g, psis, f.ex.user);
    const Vec got = out.distributions.row(static_cast<Index>(step)).transpose();
    worst = std::max(worst, (got - expected).cwiseAbs().maxCoeff());
    CHECK(out.gates[step] == doctest::Approx(g).epsilon(1e-12));

    // Absent from the utterance: copy contributes nothing.
    const int food = f.vocab.id("food");
    CHECK(std::abs(got(food) - (1 - g) * pv(food)) < 1e-12);
    // Repeated token: both positions add up.
    const double mx = *std::max_element(psis.begin(), psis.end());
    double z = 0;
    for (double p : psis) z += std::exp(p - mx);
    const double copy_seattle = (std::exp(psis[0] - mx) + std::exp(psis[1] - mx)) / z;
    CHECK(std::abs(got(f.vocab.id("seattle")) - ((1 - g) * pv(f.vocab.id("seattle")) + g * copy_seattle)) < 1e-12);
    input = f.ex.target_belief[step];
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("response decoder matches the brute-force formulas") {
  Fixture f;
  const auto cfg = small_config(4, 3, 5, 0.5);
  const auto params = init_params<double>(cfg, f.vocab.size(), 12);
  const Sequicity<double> model(cfg, f.vocab.size());
  const Reference ref{params, cfg.hidden};

  const auto belief = model.decode_belief(params, f.ex, f.vocab, true);
  const auto out =
      model.decode_response(params, f.ex, f.vocab, f.ex.target_belief, belief.states, f.ex.match, true);
  REQUIRE(out.distributions.rows() == static_cast<Index>(f.ex.target_response.size()));

  const auto enc = ref.encode(encoder_input(f.ex).ids);
  // Two copyable belief tokens: seattle (position 1) and cheap (position 2).
  std::vector<double> psis;
  std::vector<int> ids;
  for (int j : {1, 2}) {
    const Vec hb = belief.states.row(j).transpose();
    psis.push_back(Reference::psi(params["response.copy_w"], hb, hb));
    ids.push_back(f.ex.target_belief[static_cast<std::size_t>(j)]);
  }
  Vec s = enc.back();
  Vec x = params["match_embedding"].row(static_cast<int>(f.ex.match)).transpose();
  double worst = 0;
  for (std::size_t step = 0; step < f.ex.target_response.size(); ++step) {
    s = ref.gru("response.", x, s);
    const auto [pv, g] = ref.vocab("response.", s, enc);
    const Vec expected = Reference::mixture(pv, g, psis, ids);
    worst = std::max(worst, (out.distributions.row(static_cast<Index>(step)).transpose() - expected)
                                .cwiseAbs()
                                .maxCoeff());
    x = ref.embed(f.ex.target_response[step]);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("empty belief span leaves the pure vocabulary distribution") {
  Fixture f;
  f.ex.target_belief = f.vocab.encode({"<inf>", "<req>", "<eos_b>"});
  const auto cfg = small_config(4, 3, 5, 0.5);
  const auto params = init_params<double>(cfg, f.vocab.size(), 13);
  const Sequicity<double> model(cfg, f.vocab.size());
  const Reference ref{params, cfg.hidden};

  const auto belief = model.decode_belief(params, f.ex, f.vocab, true);
  const auto out = model.decode_response(params, f.ex, f.vocab, f.ex.target_belief, belief.states,
                                         MatchIndicator::NoMatch, true);
  const auto enc = ref.encode(encoder_input(f.ex).ids);
  Vec s = ref.gru("response.", params["match_embedding"].row(0).transpose(), enc.back());
  const auto [pv, g] = ref.vocab("response.", s, enc);
  CHECK(g > 0.0);
  CHECK((out.distributions.row(0).transpose() - pv).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("copy mass lies only on tokens of the copy source") {
  Fixture f;
  const auto cfg = small_config(4, 3, 5, 0.5);
  auto params = init_params<double>(cfg, f.vocab.size(), 14);
  params["bspan.gate_b"](0, 0) = 1e3;
  params["response.gate_b"](0, 0) = 1e3;
  const Sequicity<double> model(cfg, f.vocab.size());
  const auto belief = model.decode_belief(params, f.ex, f.vocab, true);
  const auto resp = model.decode_response(params, f.ex, f.vocab, f.ex.target_belief, belief.states, f.ex.match, true);
  for (Index v = 0; v < static_cast<Index>(f.vocab.size()); ++v) {
    const bool in_user = v == f.vocab.id("seattle") || v == f.vocab.id("cheap");
    for (Index t = 0; t < belief.distributions.rows(); ++t) {
      if (!in_user) CHECK(belief.distributions(t, v) == 0.0);
    }
    for (Index t = 0; t < resp.distributions.rows(); ++t) {
      if (!in_user) CHECK(resp.distributions(t, v) == 0.0);
    }
  }
}

TEST_CASE("loss equals a per-token recomputation from the teacher-forced distributions") {
  const auto spec = test::domain("bus");
  const auto dialogs = bus_dialogs(2, 21);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  const auto cfg = small_config(6, 5, 4, 0.3);
  const auto params = init_params<double>(cfg, vocab.size(), 15);
  const Sequicity<double> model(cfg, vocab.size());

  const std::vector<std::size_t> idx = {0, 3, 4, 7, 9};
  const Batch batch = make_batch(examples, idx);
  double nll_b = 0, nll_r = 0;
  std::size_t nb = 0, nr = 0;
  for (std::size_t i : idx) {
    const auto& ex = examples[i];
    const auto b = model.decode_belief(params, ex, vocab, true);
    const auto r = model.decode_response(params, ex, vocab, ex.target_belief, b.states, ex.match, true);
    for (std::size_t t = 0; t < ex.target_belief.size(); ++t) nll_b -= std::log(b.distributions(t, ex.target_belief[t]));
    for (std::size_t t = 0; t < ex.target_response.size(); ++t) {
      nll_r -= std::log(r.distributions(t, ex.target_response[t]));
    }
    nb += ex.target_belief.size();
    nr += ex.target_response.size();
  }
  const double expected = nll_b / static_cast<double>(nb) + nll_r / static_cast<double>(nr);
  CHECK(model.loss_value(params, batch) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("zero weights with closed gates give ln|V| per token") {
  const auto spec = test::domain("bus");
  const auto dialogs = bus_dialogs(1, 22);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  const auto cfg = small_config(4, 3, 3, 0.1);
  auto params = init_params<double>(cfg, vocab.size(), 16);
  for (std::size_t i = 0; i < params.size(); ++i) params[i].setZero();
  params["bspan.gate_b"](0, 0) = -1e3;
  params["response.gate_b"](0, 0) = -1e3;
  const Sequicity<double> model(cfg, vocab.size());
  const std::vector<std::size_t> idx = {0, 1, 2};
  const double per_token = std::log(static_cast<double>(vocab.size()));
  CHECK(model.loss_value(params, make_batch(examples, idx)) == doctest::Approx(2 * per_token).epsilon(1e-12));
}

TEST_CASE("gradient check on a two-turn micro-batch with hidden size 4") {
  const auto spec = test::domain("bus");
  const auto dialogs = bus_dialogs(1, 23);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  const auto cfg = small_config(4, 3, 3, 0.3);
  const auto params = init_params<double>(cfg, vocab.size(), 17);
  const Sequicity<double> model(cfg, vocab.size());
  const std::vector<std::size_t> idx = {0, 1};
  const Batch batch = make_batch(examples, idx);

  const auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& leaves) {
    return model.batch_loss(g, model.assemble(params, leaves), batch, nullptr);
  };
  const auto r = grad_check_detailed(build, params, 1e-6, 12, 5);
  INFO("worst " << r.worst_parameter << "[" << r.worst_coordinate << "] = " << r.max_error);
  CHECK(r.coordinates_checked > 300);
  CHECK(r.max_error < 1e-3);

  // The graph path and loss_and_gradient agree.
  auto grads = params.zeros_like();
  model.loss_and_gradient(params, batch, grads, nullptr);
  Graph<double> g(false);
  std::vector<Tensor<double>> leaves;
  for (std::size_t i = 0; i < params.size(); ++i) leaves.push_back(g.variable(params[i]));
  g.backward(build(g, leaves));
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK((leaves[i].grad() - grads[i]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("frozen embeddings receive no gradient") {
  const auto spec = test::domain("bus");
  const auto dialogs = bus_dialogs(1, 24);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  auto cfg = small_config(4, 3, 3, 0.3);
  cfg.train_embeddings = false;
  const auto params = init_params<float>(cfg, vocab.size(), 18);
  const Sequicity<float> model(cfg, vocab.size());
  auto grads = params.zeros_like();
  const std::vector<std::size_t> idx = {0, 1};
  model.loss_and_gradient(params, make_batch(examples, idx), grads, nullptr);
  CHECK(grads["embedding"].cwiseAbs().maxCoeff() == 0.0f);
  CHECK(grads["encoder.w_input"].cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("permuting user tokens changes the encoder states") {
  Fixture f;
  const auto cfg = small_config(8, 6, 5, 0.3);
  const auto params = init_params<double>(cfg, f.vocab.size(), 19);
  const Sequicity<double> model(cfg, f.vocab.size());
  f.ex.user = f.vocab.encode({"i", "want", "cheap"});
  const auto a = model.encode(params, f.ex);
  std::swap(f.ex.user[0], f.ex.user[2]);
  const auto b = model.encode(params, f.ex);
  REQUIRE(a.states.rows() == b.states.rows());
  CHECK((a.states.bottomRows(1) - b.states.bottomRows(1)).norm() > 1e-6);
  // Turn-one input reduces to the markers around the user tokens.
  ContextExample first;
  first.user = f.ex.user;
  CHECK(model.encode(params, first).states.rows() == static_cast<Index>(first.user.size() + 3));
}

TEST_CASE("greedy decoding: normalized, deterministic, oracle-belief mode") {
  const auto spec = test::domain("bus");
  const auto kb = generate_kb(spec, 100, 25);
  const auto dialogs = generate_corpus(spec, kb, ComplexityConfig{}, 2, 25);
  Vocab vocab;
  extend_vocab(vocab, dialogs);
  const auto examples = dialogs_to_examples(spec, dialogs, vocab);
  auto cfg = small_config(16, 12, 8, 0.08);
  cfg.max_belief_len = 12;
  cfg.max_response_len = 15;
  const auto params = init_params<float>(cfg, vocab.size(), 20);
  const Sequicity<float> model(cfg, vocab.size());

  for (std::size_t i : {0, 2, 5}) {
    const auto& ex = examples[i];
    const auto b = model.decode_belief(params, ex, vocab);
    CHECK(b.distributions.rows() <= cfg.max_belief_len);
    for (Index t = 0; t < b.distributions.rows(); ++t) CHECK(std::abs(b.distributions.row(t).sum() - 1.0) < 1e-6);
    const auto r = model.decode_response(params, ex, vocab, b.ids, b.states, ex.match);
    CHECK(r.distributions.rows() <= cfg.max_response_len);
    for (Index t = 0; t < r.distributions.rows(); ++t) CHECK(std::abs(r.distributions.row(t).sum() - 1.0) < 1e-6);

    const auto p1 = model.greedy_decode_turn(params, ex, spec, kb, vocab);
    const auto p2 = model.greedy_decode_turn(params, ex, spec, kb, vocab);
    CHECK(p1.belief_tokens == p2.belief_tokens);
    CHECK(p1.response_delex == p2.response_delex);

    const auto oracle = model.greedy_decode_turn(params, ex, spec, kb, vocab, {.oracle_belief = true});
    CHECK(oracle.belief == ex.belief);
    CHECK(oracle.match == ex.match);
  }
}

TEST_CASE("lexicalization fills placeholders from the entity") {
  Entity e{"bus-7", {{"fare", "$2"}, {"arrival", "9am"}}};
  const std::vector<std::string> delex = {"<name>", "costs", "<fare>", "and", "<unknown>"};
  CHECK(lexicalize(delex, &e) == std::vector<std::string>{"bus-7", "costs", "$2", "and", "<unknown>"});
  CHECK(lexicalize(delex, nullptr) == delex);
}

TEST_CASE("vocabulary extension keeps trained rows") {
  const auto cfg = small_config(4, 3, 3, 0.08);
  auto params = init_params<float>(cfg, 20, 1);
  const auto before = params;
  extend_params_vocab(params, cfg, 25, 2);
  CHECK(params["embedding"].rows() == 25);
  CHECK(params["embedding"].topRows(20) == before["embedding"]);
  CHECK(params["bspan.vocab_w"].cols() == 25);
  CHECK(params["response.vocab_w"].leftCols(20) == before["response.vocab_w"]);
  CHECK(params["response.vocab_b"].rightCols(5).cwiseAbs().maxCoeff() == 0.0f);
  CHECK_THROWS(extend_params_vocab(params, cfg, 10, 2));
  CHECK_THROWS_AS(Sequicity<float>(cfg, 20).loss_value(params, Batch{}), std::invalid_argument);
}
