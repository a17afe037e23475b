#include "daml/model.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace daml {

void ModelConfig::validate() const {
  if (embedding_dim <= 0 || hidden <= 0 || attention <= 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (max_belief_len <= 0 || max_response_len <= 0) throw std::invalid_argument("decode limits must be positive");
  if (!(init_scale > 0.0)) throw std::invalid_argument("init_scale must be positive");
  if (!(embedding_scale > 0.0)) throw std::invalid_argument("embedding_scale must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"embedding_dim", embedding_dim}, {"hidden", hidden},
          {"attention", attention},         {"dropout", dropout},
          {"max_belief_len", max_belief_len}, {"max_response_len", max_response_len},
          {"init_scale", init_scale},       {"embedding_scale", embedding_scale},
          {"train_embeddings", train_embeddings}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "embedding_dim") c.embedding_dim = value.get<int>();
    else if (key == "hidden") c.hidden = value.get<int>();
    else if (key == "attention") c.attention = value.get<int>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "max_belief_len") c.max_belief_len = value.get<int>();
    else if (key == "max_response_len") c.max_response_len = value.get<int>();
    else if (key == "init_scale") c.init_scale = value.get<double>();
    else if (key == "embedding_scale") c.embedding_scale = value.get<double>();
    else if (key == "train_embeddings") c.train_embeddings = value.get<bool>();
    else throw std::invalid_argument("unknown model config key: " + key);
  }
  c.validate();
  return c;
}

namespace {

template <typename Scalar>
Matrix<Scalar> uniform(Index rows, Index cols, double scale, Rng& rng) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(d(rng));
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(d(rng));
  return m;
}

template <typename Scalar>
void add_decoder(ParameterSet<Scalar>& ps, const std::string& prefix, const ModelConfig& c, Index vocab, Rng& rng) {
  const Index e = c.embedding_dim, h = c.hidden, a = c.attention;
  const double s = c.init_scale;
  ps.add(prefix + "w_input", uniform<Scalar>(e, 3 * h, s, rng));
  ps.add(prefix + "w_hidden", uniform<Scalar>(h, 3 * h, s, rng));
  ps.add(prefix + "b_input", Matrix<Scalar>::Zero(1, 3 * h));
  ps.add(prefix + "b_hidden", Matrix<Scalar>::Zero(1, 3 * h));
  ps.add(prefix + "attn_w_enc", uniform<Scalar>(h, a, s, rng));
  ps.add(prefix + "attn_w_dec", uniform<Scalar>(h, a, s, rng));
  ps.add(prefix + "attn_b", Matrix<Scalar>::Zero(1, a));
  ps.add(prefix + "attn_v", uniform<Scalar>(a, 1, s, rng));
  ps.add(prefix + "out_w", uniform<Scalar>(2 * h, h, s, rng));
  ps.add(prefix + "out_b", Matrix<Scalar>::Zero(1, h));
  ps.add(prefix + "vocab_w", uniform<Scalar>(h, vocab, s, rng));
  ps.add(prefix + "vocab_b", Matrix<Scalar>::Zero(1, vocab));
  ps.add(prefix + "copy_w", uniform<Scalar>(h, h, s, rng));
  ps.add(prefix + "gate_w", uniform<Scalar>(h, 1, s, rng));
  ps.add(prefix + "gate_b", Matrix<Scalar>::Zero(1, 1));
}

template <typename Scalar>
DecoderLeaves<Scalar> assemble_decoder(const auto& leaf, const std::string& prefix) {
  DecoderLeaves<Scalar> d;
  d.w_input = leaf(prefix + "w_input");
  d.w_hidden = leaf(prefix + "w_hidden");
  d.b_input = leaf(prefix + "b_input");
  d.b_hidden = leaf(prefix + "b_hidden");
  d.attn_w_enc = leaf(prefix + "attn_w_enc");
  d.attn_w_dec = leaf(prefix + "attn_w_dec");
  d.attn_b = leaf(prefix + "attn_b");
  d.attn_v = leaf(prefix + "attn_v");
  d.out_w = leaf(prefix + "out_w");
  d.out_b = leaf(prefix + "out_b");
  d.vocab_w = leaf(prefix + "vocab_w");
  d.vocab_b = leaf(prefix + "vocab_b");
  d.copy_w = leaf(prefix + "copy_w");
  d.gate_w = leaf(prefix + "gate_w");
  d.gate_b = leaf(prefix + "gate_b");
  return d;
}

// Runs a GRU over a time-major projected input ((steps * B) x 3H). Rows past
// an example's length carry the previous state forward unchanged.
template <typename Scalar>
std::vector<Tensor<Scalar>> run_gru(Graph<Scalar>& g, const Tensor<Scalar>& proj, Tensor<Scalar>& h,
                                    const std::vector<int>& lengths, Index steps, const Tensor<Scalar>& w_hidden,
                                    const Tensor<Scalar>& b_hidden) {
  const Index b = h.rows();
  const int shortest = lengths.empty() ? 0 : *std::min_element(lengths.begin(), lengths.end());
  std::vector<Tensor<Scalar>> states;
  states.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    Tensor<Scalar> next = gru_cell(slice_rows(proj, t * b, b), h, w_hidden, b_hidden);
    if (t < shortest) {
      h = next;
    } else {
      const auto mask = g.constant(Batch::step_mask<Scalar>(lengths, static_cast<int>(t)));
      h = add(h, mul(sub(next, h), mask));
    }
    states.push_back(h);
  }
  return states;
}

// Ids of column t of every row, stacked for steps [begin, end).
std::vector<int> time_major(const IdMatrix& ids, Index begin, Index end) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>((end - begin) * ids.rows()));
  for (Index t = begin; t < end; ++t) {
    for (Index i = 0; i < ids.rows(); ++i) out.push_back(ids(i, t));
  }
  return out;
}

std::vector<int> example_rows(Index example, Index batch, int length) {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) rows.push_back(static_cast<int>(t * batch + example));
  return rows;
}

template <typename Scalar>
Matrix<double> row_as_double(const Tensor<Scalar>& t) {
  return t.value().template cast<double>();
}

int argmax(const auto& row) {
  Index best = 0;
  row.maxCoeff(&best);
  return static_cast<int>(best);
}

// Positions of a belief span that the response decoder may copy from.
std::vector<int> copy_positions(const std::vector<int>& belief_ids) {
  std::vector<int> out;
  for (std::size_t j = 0; j < belief_ids.size(); ++j) {
    if (!Vocab::is_reserved(belief_ids[j])) out.push_back(static_cast<int>(j));
  }
  return out;
}

}  // namespace

template <typename Scalar>
ParameterSet<Scalar> init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  cfg.validate();
  Rng rng(stream_seed(seed, "init"));
  const Index v = static_cast<Index>(vocab_size), e = cfg.embedding_dim, h = cfg.hidden;
  ParameterSet<Scalar> ps;
  ps.add("embedding", normal<Scalar>(v, e, cfg.embedding_scale, rng));
  ps.add("match_embedding", normal<Scalar>(3, e, cfg.embedding_scale, rng));
  ps.add("encoder.w_input", uniform<Scalar>(e, 3 * h, cfg.init_scale, rng));
  ps.add("encoder.w_hidden", uniform<Scalar>(h, 3 * h, cfg.init_scale, rng));
  ps.add("encoder.b_input", Matrix<Scalar>::Zero(1, 3 * h));
  ps.add("encoder.b_hidden", Matrix<Scalar>::Zero(1, 3 * h));
  add_decoder(ps, "bspan.", cfg, v, rng);
  add_decoder(ps, "response.", cfg, v, rng);
  return ps;
}

template <typename Scalar>
void extend_params_vocab(ParameterSet<Scalar>& params, const ModelConfig& cfg, std::size_t vocab_size,
                         std::uint64_t seed, const Matrix<Scalar>* embedding_rows) {
  auto& emb = params["embedding"];
  const Index old = emb.rows(), v = static_cast<Index>(vocab_size);
  if (v < old) throw std::invalid_argument("vocabulary cannot shrink");
  if (v == old) return;
  Rng rng(stream_seed(seed, "init-extend", static_cast<std::uint64_t>(old)));
  Matrix<Scalar> rows = embedding_rows != nullptr ? *embedding_rows
                                                  : normal<Scalar>(v - old, emb.cols(), cfg.embedding_scale, rng);
  if (rows.rows() != v - old || rows.cols() != emb.cols()) {
    throw DimensionError("extend_params_vocab: embedding rows have the wrong shape");
  }
  emb.conservativeResize(v, Eigen::NoChange);
  emb.bottomRows(v - old) = rows;
  for (const char* prefix : {"bspan.", "response."}) {
    auto& w = params[std::string(prefix) + "vocab_w"];
    auto& b = params[std::string(prefix) + "vocab_b"];
    const Matrix<Scalar> cols = uniform<Scalar>(w.rows(), v - old, cfg.init_scale, rng);
    w.conservativeResize(Eigen::NoChange, v);
    w.rightCols(v - old) = cols;
    b.conservativeResize(Eigen::NoChange, v);
    b.rightCols(v - old).setZero();
  }
}

std::vector<std::string> lexicalize(const std::vector<std::string>& delex, const Entity* entity) {
  std::vector<std::string> out;
  out.reserve(delex.size());
  for (const auto& t : delex) {
    if (entity != nullptr && t.size() > 2 && t.front() == '<' && t.back() == '>') {
      const std::string slot = t.substr(1, t.size() - 2);
      if (slot == "name") {
        out.push_back(entity->name);
        continue;
      }
      if (auto it = entity->values.find(slot); it != entity->values.end()) {
        out.push_back(it->second);
        continue;
      }
    }
    out.push_back(t);
  }
  return out;
}

template <typename Scalar>
Sequicity<Scalar>::Sequicity(ModelConfig cfg, std::size_t vocab_size) : cfg_(std::move(cfg)), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size_ <= static_cast<std::size_t>(token_id::kReservedCount)) {
    throw std::invalid_argument("vocabulary holds only reserved tokens");
  }
}

template <typename Scalar>
ModelLeaves<Scalar> Sequicity<Scalar>::assemble(const ParameterSet<Scalar>& params, std::span<const T> leaves) const {
  if (leaves.size() != params.size()) throw std::invalid_argument("assemble: one leaf per parameter expected");
  if (params["embedding"].rows() != static_cast<Index>(vocab_size_)) {
    throw DimensionError("parameters cover " + std::to_string(params["embedding"].rows()) +
                         " tokens but the model expects " + std::to_string(vocab_size_));
  }
  const auto leaf = [&](const std::string& name) { return leaves[params.index_of(name)]; };
  ModelLeaves<Scalar> p;
  p.embedding = leaf("embedding");
  p.match_embedding = leaf("match_embedding");
  p.enc_w_input = leaf("encoder.w_input");
  p.enc_w_hidden = leaf("encoder.w_hidden");
  p.enc_b_input = leaf("encoder.b_input");
  p.enc_b_hidden = leaf("encoder.b_hidden");
  p.bspan = assemble_decoder<Scalar>(leaf, "bspan.");
  p.response = assemble_decoder<Scalar>(leaf, "response.");
  return p;
}

template <typename Scalar>
ModelLeaves<Scalar> Sequicity<Scalar>::bind(Graph<Scalar>& g, const ParameterSet<Scalar>& params,
                                            ParameterSet<Scalar>* grads) const {
  const std::size_t embedding = params.index_of("embedding");
  std::vector<T> leaves;
  leaves.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool trainable = grads != nullptr && (i != embedding || cfg_.train_embeddings);
    leaves.push_back(g.parameter(params[i], trainable ? &(*grads)[i] : nullptr));
  }
  return assemble(params, leaves);
}

template <typename Scalar>
typename Sequicity<Scalar>::T Sequicity<Scalar>::input_projection(Graph<Scalar>& g, const T& embedded,
                                                                  const T& w_input, const T& b_input,
                                                                  Rng* dropout_rng) const {
  T x = embedded;
  if (dropout_rng != nullptr && g.training() && cfg_.dropout > 0.0) {
    x = dropout(x, sample_dropout_mask<Scalar>(x.rows(), x.cols(), cfg_.dropout, *dropout_rng));
  }
  return add(matmul(x, w_input), b_input);
}

template <typename Scalar>
HeadOutput<Scalar> Sequicity<Scalar>::belief_head(const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc,
                                                  const T& states) const {
  const auto& d = p.bspan;
  const T queries = add(matmul(states, d.attn_w_dec), d.attn_b);
  const T context = matmul(softmax(additive_scores(enc.keys_b, queries, d.attn_v)), enc.states);
  const T out = tanh(add(matmul(concat_cols(states, context), d.out_w), d.out_b));
  const T vocab = softmax(add(matmul(out, d.vocab_w), d.vocab_b));
  HeadOutput<Scalar> h;
  h.gate = sigmoid(add(matmul(states, d.gate_w), d.gate_b));
  if (enc.user_ids.empty()) {
    h.probs = vocab;
    return h;
  }
  h.copy = softmax(matmul(states, transpose(enc.user_copy)));
  const T copied = scatter_cols(h.copy, std::span<const int>(enc.user_ids), static_cast<Index>(vocab_size_));
  const T mix = add(mul(vocab, affine(h.gate, Scalar(-1), Scalar(1))), mul(copied, h.gate));
  h.probs = div(mix, row_sum(mix));
  return h;
}

template <typename Scalar>
HeadOutput<Scalar> Sequicity<Scalar>::response_head(const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc,
                                                    const T& states, const T& copy_row) const {
  const auto& d = p.response;
  const T queries = add(matmul(states, d.attn_w_dec), d.attn_b);
  const T context = matmul(softmax(additive_scores(enc.keys_r, queries, d.attn_v)), enc.states);
  const T out = tanh(add(matmul(concat_cols(states, context), d.out_w), d.out_b));
  const T vocab = softmax(add(matmul(out, d.vocab_w), d.vocab_b));
  HeadOutput<Scalar> h;
  h.gate = sigmoid(add(matmul(states, d.gate_w), d.gate_b));
  T mix = mul(vocab, affine(h.gate, Scalar(-1), Scalar(1)));
  if (copy_row.valid()) mix = add(mix, matmul(h.gate, copy_row));
  h.probs = div(mix, row_sum(mix));
  return h;
}

template <typename Scalar>
typename Sequicity<Scalar>::T Sequicity<Scalar>::response_copy_row(const ModelLeaves<Scalar>& p,
                                                                   const T& belief_states,
                                                                   const std::vector<int>& ids) const {
  if (ids.empty()) return {};
  const T psi = row_sum(mul(sigmoid(matmul(belief_states, p.response.copy_w)), belief_states));
  return scatter_cols(softmax(transpose(psi)), std::span<const int>(ids), static_cast<Index>(vocab_size_));
}

template <typename Scalar>
typename Sequicity<Scalar>::Encoded Sequicity<Scalar>::run_encoder(Graph<Scalar>& g, const ModelLeaves<Scalar>& p,
                                                                   const Batch& batch, Rng* dropout_rng) const {
  const Index b = static_cast<Index>(batch.size());
  const Index steps = batch.encoder.cols();
  const auto ids = time_major(batch.encoder, 0, steps);
  const T proj = input_projection(g, gather_rows(p.embedding, std::span<const int>(ids)), p.enc_w_input,
                                  p.enc_b_input, dropout_rng);
  T h = g.constant(Mat::Zero(b, cfg_.hidden));
  const auto states = run_gru(g, proj, h, batch.encoder_len, steps, p.enc_w_hidden, p.enc_b_hidden);

  Encoded e;
  e.all = concat_rows(std::span<const T>(states));
  e.final = h;
  const T keys_b = matmul(e.all, p.bspan.attn_w_enc);
  const T keys_r = matmul(e.all, p.response.attn_w_enc);

  std::vector<int> user_rows;
  for (Index i = 0; i < b; ++i) {
    for (int j = 0; j < batch.user_len[i]; ++j) {
      user_rows.push_back(static_cast<int>((batch.user_begin[i] + j) * b + i));
    }
  }
  T user_copy;
  if (!user_rows.empty()) {
    user_copy = sigmoid(matmul(gather_rows(e.all, std::span<const int>(user_rows)), p.bspan.copy_w));
  }

  Index offset = 0;
  for (Index i = 0; i < b; ++i) {
    const auto rows = example_rows(i, b, batch.encoder_len[i]);
    EncoderView<Scalar> v;
    v.states = gather_rows(e.all, std::span<const int>(rows));
    v.keys_b = gather_rows(keys_b, std::span<const int>(rows));
    v.keys_r = gather_rows(keys_r, std::span<const int>(rows));
    v.final = b == 1 ? h : slice_rows(h, i, 1);
    const int ulen = batch.user_len[i];
    if (ulen > 0) {
      v.user_copy = slice_rows(user_copy, offset, ulen);
      for (int j = 0; j < ulen; ++j) v.user_ids.push_back(batch.encoder(i, batch.user_begin[i] + j));
    }
    offset += ulen;
    e.views.push_back(std::move(v));
  }
  return e;
}

template <typename Scalar>
typename Sequicity<Scalar>::T Sequicity<Scalar>::batch_loss(Graph<Scalar>& g, const ModelLeaves<Scalar>& p,
                                                            const Batch& batch, Rng* dropout_rng) const {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  const Index b = static_cast<Index>(batch.size());
  Encoded enc = run_encoder(g, p, batch, dropout_rng);

  // Belief decoder, teacher forced: inputs are <go> then the target shifted right.
  const Index tb = batch.belief.cols();
  std::vector<int> belief_in(static_cast<std::size_t>(b), token_id::kGo);
  const auto shifted_b = time_major(batch.belief, 0, tb - 1);
  belief_in.insert(belief_in.end(), shifted_b.begin(), shifted_b.end());
  const T proj_b = input_projection(g, gather_rows(p.embedding, std::span<const int>(belief_in)), p.bspan.w_input,
                                    p.bspan.b_input, dropout_rng);
  T hb = enc.final;
  const auto bstates = run_gru(g, proj_b, hb, batch.belief_len, tb, p.bspan.w_hidden, p.bspan.b_hidden);
  const T ball = concat_rows(std::span<const T>(bstates));

  // Response decoder: the match embedding, then the target shifted right.
  const Index tr = batch.response.cols();
  T embedded_r = gather_rows(p.match_embedding, std::span<const int>(batch.match));
  if (tr > 1) {
    const auto shifted_r = time_major(batch.response, 0, tr - 1);
    embedded_r = concat_rows(embedded_r, gather_rows(p.embedding, std::span<const int>(shifted_r)));
  }
  const T proj_r = input_projection(g, embedded_r, p.response.w_input, p.response.b_input, dropout_rng);
  T hr = enc.final;
  const auto rstates = run_gru(g, proj_r, hr, batch.response_len, tr, p.response.w_hidden, p.response.b_hidden);
  const T rall = concat_rows(std::span<const T>(rstates));

  std::vector<T> picked_b, picked_r;
  Index nb = 0, nr = 0;
  for (Index i = 0; i < b; ++i) {
    const int lb = batch.belief_len[i], lr = batch.response_len[i];
    const auto rows_b = example_rows(i, b, lb);
    const T sb = gather_rows(ball, std::span<const int>(rows_b));
    const auto head_b = belief_head(p, enc.views[i], sb);
    std::vector<int> target_b(batch.belief.row(i).data(), batch.belief.row(i).data() + lb);
    picked_b.push_back(gather_cols(head_b.probs, std::span<const int>(target_b)));
    nb += lb;

    const auto positions = copy_positions(target_b);
    std::vector<int> copy_ids;
    for (int j : positions) copy_ids.push_back(target_b[static_cast<std::size_t>(j)]);
    const T copy_row =
        positions.empty() ? T{} : response_copy_row(p, gather_rows(sb, std::span<const int>(positions)), copy_ids);

    const auto rows_r = example_rows(i, b, lr);
    const auto head_r = response_head(p, enc.views[i], gather_rows(rall, std::span<const int>(rows_r)), copy_row);
    std::vector<int> target_r(batch.response.row(i).data(), batch.response.row(i).data() + lr);
    picked_r.push_back(gather_cols(head_r.probs, std::span<const int>(target_r)));
    nr += lr;
  }
  const Scalar floor = Scalar(1e-12);
  const T loss_b = affine(sum(log(concat_rows(std::span<const T>(picked_b)), floor)), Scalar(-1.0 / nb), Scalar(0));
  const T loss_r = affine(sum(log(concat_rows(std::span<const T>(picked_r)), floor)), Scalar(-1.0 / nr), Scalar(0));
  return add(loss_b, loss_r);
}

template <typename Scalar>
double Sequicity<Scalar>::loss_and_gradient(const ParameterSet<Scalar>& params, const Batch& batch,
                                            ParameterSet<Scalar>& grads, Rng* dropout_rng) const {
  Graph<Scalar> g(true);
  const auto p = bind(g, params, &grads);
  const T loss = batch_loss(g, p, batch, dropout_rng);
  g.backward(loss);
  return static_cast<double>(loss.item());
}

template <typename Scalar>
double Sequicity<Scalar>::loss_value(const ParameterSet<Scalar>& params, const Batch& batch) const {
  Graph<Scalar> g(false);
  const auto p = bind(g, params, nullptr);
  return static_cast<double>(batch_loss(g, p, batch, nullptr).item());
}

template <typename Scalar>
EncodeOutput Sequicity<Scalar>::encode(const ParameterSet<Scalar>& params, const ContextExample& ex) const {
  Graph<Scalar> g(false);
  const auto p = bind(g, params, nullptr);
  const std::size_t zero = 0;
  const Batch batch = make_batch(std::span<const ContextExample>(&ex, 1), std::span<const std::size_t>(&zero, 1));
  const auto enc = run_encoder(g, p, batch, nullptr);
  return {row_as_double(enc.views[0].states)};
}

template <typename Scalar>
DecodeOutput Sequicity<Scalar>::greedy_belief(const ModelLeaves<Scalar>& p,
                                              const EncoderView<Scalar>& enc, const ContextExample& ex,
                                              const Vocab& vocab, bool teacher_forced) const {
  const auto& d = p.bspan;
  const int limit = teacher_forced ? static_cast<int>(ex.target_belief.size()) : cfg_.max_belief_len;
  DecodeOutput out;
  out.distributions.resize(0, static_cast<Index>(vocab_size_));
  std::vector<Matrix<double>> dists, states;
  T h = enc.final;
  int input = token_id::kGo;
  for (int step = 0; step < limit; ++step) {
    const T x = gather_rows(p.embedding, std::span<const int>(&input, 1));
    h = gru_cell(add(matmul(x, d.w_input), d.b_input), h, d.w_hidden, d.b_hidden);
    const auto head = belief_head(p, enc, h);
    const auto row = head.probs.value().row(0);
    const int id = teacher_forced ? ex.target_belief[static_cast<std::size_t>(step)] : argmax(row);
    std::string token = vocab.token(id);
    if (id == token_id::kUnk && head.copy.valid()) {
      // An unknown word can only have come from the user; take the surface
      // form at the most attended unknown position.
      int best = -1;
      for (std::size_t j = 0; j < enc.user_ids.size(); ++j) {
        if (enc.user_ids[j] != token_id::kUnk) continue;
        if (best < 0 || head.copy.value()(0, static_cast<Index>(j)) > head.copy.value()(0, best)) {
          best = static_cast<int>(j);
        }
      }
      if (best >= 0 && static_cast<std::size_t>(best) < ex.user_tokens.size()) token = ex.user_tokens[best];
    }
    out.ids.push_back(id);
    out.tokens.push_back(token);
    dists.push_back(row.template cast<double>());
    states.push_back(row_as_double(h));
    out.gates.push_back(static_cast<double>(head.gate.value()(0, 0)));
    if (id == token_id::kEosB) break;
    input = id;
  }
  out.distributions.resize(static_cast<Index>(dists.size()), static_cast<Index>(vocab_size_));
  out.states.resize(static_cast<Index>(states.size()), cfg_.hidden);
  for (std::size_t k = 0; k < dists.size(); ++k) {
    out.distributions.row(static_cast<Index>(k)) = dists[k];
    out.states.row(static_cast<Index>(k)) = states[k];
  }
  return out;
}

template <typename Scalar>
DecodeOutput Sequicity<Scalar>::greedy_response(Graph<Scalar>& g, const ModelLeaves<Scalar>& p,
                                                const EncoderView<Scalar>& enc, const ContextExample& ex,
                                                const Vocab& vocab, const std::vector<int>& belief_ids,
                                                const Mat& belief_states, MatchIndicator match,
                                                bool teacher_forced) const {
  const auto& d = p.response;
  if (belief_states.rows() != static_cast<Index>(belief_ids.size())) {
    throw DimensionError("decode_response: belief ids and states disagree");
  }
  const auto positions = copy_positions(belief_ids);
  std::vector<int> copy_ids;
  Mat source(static_cast<Index>(positions.size()), cfg_.hidden);
  for (std::size_t k = 0; k < positions.size(); ++k) {
    copy_ids.push_back(belief_ids[static_cast<std::size_t>(positions[k])]);
    source.row(static_cast<Index>(k)) = belief_states.row(positions[k]);
  }
  const T copy_row = positions.empty() ? T{} : response_copy_row(p, g.constant(source), copy_ids);

  const int limit = teacher_forced ? static_cast<int>(ex.target_response.size()) : cfg_.max_response_len;
  DecodeOutput out;
  std::vector<Matrix<double>> dists, states;
  T h = enc.final;
  const int match_row = static_cast<int>(match);
  T x = gather_rows(p.match_embedding, std::span<const int>(&match_row, 1));
  for (int step = 0; step < limit; ++step) {
    h = gru_cell(add(matmul(x, d.w_input), d.b_input), h, d.w_hidden, d.b_hidden);
    const auto head = response_head(p, enc, h, copy_row);
    const auto row = head.probs.value().row(0);
    const int id = teacher_forced ? ex.target_response[static_cast<std::size_t>(step)] : argmax(row);
    out.ids.push_back(id);
    out.tokens.push_back(vocab.token(id));
    dists.push_back(row.template cast<double>());
    states.push_back(row_as_double(h));
    out.gates.push_back(static_cast<double>(head.gate.value()(0, 0)));
    if (id == token_id::kEosR) break;
    x = gather_rows(p.embedding, std::span<const int>(&id, 1));
  }
  out.distributions.resize(static_cast<Index>(dists.size()), static_cast<Index>(vocab_size_));
  out.states.resize(static_cast<Index>(states.size()), cfg_.hidden);
  for (std::size_t k = 0; k < dists.size(); ++k) {
    out.distributions.row(static_cast<Index>(k)) = dists[k];
    out.states.row(static_cast<Index>(k)) = states[k];
  }
  return out;
}

template <typename Scalar>
DecodeOutput Sequicity<Scalar>::decode_belief(const ParameterSet<Scalar>& params, const ContextExample& ex,
                                              const Vocab& vocab, bool teacher_forced) const {
  Graph<Scalar> g(false);
  const auto p = bind(g, params, nullptr);
  const std::size_t zero = 0;
  const Batch batch = make_batch(std::span<const ContextExample>(&ex, 1), std::span<const std::size_t>(&zero, 1));
  const auto enc = run_encoder(g, p, batch, nullptr);
  return greedy_belief(p, enc.views[0], ex, vocab, teacher_forced);
}

template <typename Scalar>
DecodeOutput Sequicity<Scalar>::decode_response(const ParameterSet<Scalar>& params, const ContextExample& ex,
                                                const Vocab& vocab, const std::vector<int>& belief_ids,
                                                const Matrix<double>& belief_states, MatchIndicator match,
                                                bool teacher_forced) const {
  Graph<Scalar> g(false);
  const auto p = bind(g, params, nullptr);
  const std::size_t zero = 0;
  const Batch batch = make_batch(std::span<const ContextExample>(&ex, 1), std::span<const std::size_t>(&zero, 1));
  const auto enc = run_encoder(g, p, batch, nullptr);
  return greedy_response(g, p, enc.views[0], ex, vocab, belief_ids, belief_states.template cast<Scalar>(), match,
                         teacher_forced);
}

template <typename Scalar>
TurnPrediction Sequicity<Scalar>::greedy_decode_turn(const ParameterSet<Scalar>& params, const ContextExample& ex,
                                                     const DomainSpec& spec, const KnowledgeBase& kb,
                                                     const Vocab& vocab, const DecodeOptions& options) const {
  Graph<Scalar> g(false);
  const auto p = bind(g, params, nullptr);
  const std::size_t zero = 0;
  const Batch batch = make_batch(std::span<const ContextExample>(&ex, 1), std::span<const std::size_t>(&zero, 1));
  const auto enc = run_encoder(g, p, batch, nullptr);
  const auto& view = enc.views[0];

  const DecodeOutput belief = greedy_belief(p, view, ex, vocab, options.oracle_belief);
  TurnPrediction out;
  out.belief_tokens = belief.tokens;
  if (!out.belief_tokens.empty() && out.belief_tokens.back() == span_token::kEnd) out.belief_tokens.pop_back();
  const auto parsed = parse_belief(spec, out.belief_tokens);
  out.belief = parsed.belief;
  out.dropped = parsed.dropped;
  const KbResult kr = kb_query(spec, kb, out.belief.inform);
  out.match = kr.match;
  const Entity* entity = kr.entities.empty() ? nullptr : &kb.entities[kr.entities.front()];
  if (entity != nullptr) out.entity = entity->name;

  const DecodeOutput response = greedy_response(g, p, view, ex, vocab, belief.ids,
                                                belief.states.template cast<Scalar>(), out.match, false);
  out.response_delex = response.tokens;
  if (!out.response_delex.empty() && out.response_delex.back() == "<eos_r>") out.response_delex.pop_back();
  out.response_lex = lexicalize(out.response_delex, entity);
  return out;
}

template ParameterSet<float> init_params<float>(const ModelConfig&, std::size_t, std::uint64_t);
template ParameterSet<double> init_params<double>(const ModelConfig&, std::size_t, std::uint64_t);
template void extend_params_vocab<float>(ParameterSet<float>&, const ModelConfig&, std::size_t, std::uint64_t,
                                         const Matrix<float>*);
template void extend_params_vocab<double>(ParameterSet<double>&, const ModelConfig&, std::size_t, std::uint64_t,
                                          const Matrix<double>*);
template class Sequicity<float>;
template class Sequicity<double>;

}  // namespace daml
