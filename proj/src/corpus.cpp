#include "daml/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "daml/rng.hpp"

namespace daml {

int match_token(MatchIndicator m) {
  switch (m) {
    case MatchIndicator::NoMatch: return token_id::kMatchNone;
    case MatchIndicator::ExactMatch: return token_id::kMatchExact;
    case MatchIndicator::MultipleMatch: return token_id::kMatchMulti;
  }
  return token_id::kMatchNone;
}

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<go>", "<eos_u>", "<eos_b>", "<eos_r>", "<inf>", "<req>", "<match_none>",
                        "<match_exact>", "<match_multi>"}) {
    add(t);
  }
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view token) const { return find(token).value_or(token_id::kUnk); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

nlohmann::json Vocab::to_json() const { return tokens_; }

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < v.size() || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw DataError("vocabulary does not start with the reserved tokens");
  }
  for (std::size_t i = v.size(); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw DataError("duplicate vocabulary token: " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

namespace {

void add_all(Vocab& v, const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) v.add(t);
}

std::vector<std::string> belief_tokens(const BeliefState& b) {
  std::vector<std::string> out;
  for (const auto& [_, value] : b.inform) out.push_back(value);
  for (const auto& r : b.request) out.push_back(r);
  return out;
}

}  // namespace

void extend_vocab(Vocab& vocab, std::span<const Dialog> corpus) {
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) {
      add_all(vocab, t.user);
      add_all(vocab, t.sys_delex);
      add_all(vocab, belief_tokens(t.belief));
    }
  }
}

Vocab build_vocab(std::span<const std::span<const Dialog>> corpora) {
  Vocab v;
  for (const auto& c : corpora) extend_vocab(v, c);
  return v;
}

EmbeddingLoad load_embeddings(const std::filesystem::path& path, const Vocab& vocab, int dim, std::uint64_t seed) {
  if (dim <= 0) throw DataError("embedding dimension must be positive");
  std::ifstream is(path);
  if (!is) throw DataError("cannot open embedding file " + path.string());

  EmbeddingLoad out;
  const auto rows = static_cast<Index>(vocab.size());
  out.table.resize(rows, dim);
  out.pretrained.assign(vocab.size(), false);
  Rng rng(seed);
  std::uniform_real_distribution<float> init(-0.08f, 0.08f);
  for (Index i = 0; i < out.table.size(); ++i) out.table.data()[i] = init(rng);

  std::string line;
  std::vector<float> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    values.clear();
    std::string field;
    bool ok = !token.empty();
    while (ok && ls >> field) {
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      ok = ec == std::errc() && ptr == field.data() + field.size();
      values.push_back(v);
    }
    if (!ok || values.empty()) {
      ++out.malformed;
      continue;
    }
    if (static_cast<int>(values.size()) != dim) {
      throw DataError(path.string() + ": vectors have " + std::to_string(values.size()) + " components, expected " +
                      std::to_string(dim));
    }
    const auto id = vocab.find(token);
    if (!id || Vocab::is_reserved(*id) || out.pretrained[static_cast<std::size_t>(*id)]) continue;
    for (int k = 0; k < dim; ++k) out.table(*id, k) = values[static_cast<std::size_t>(k)];
    out.pretrained[static_cast<std::size_t>(*id)] = true;
    ++out.found;
  }
  const std::size_t open = vocab.size() - token_id::kReservedCount;
  out.coverage = open == 0 ? 0.0 : static_cast<double>(out.found) / static_cast<double>(open);
  return out;
}

std::vector<ContextExample> dialogs_to_examples(const DomainSpec& spec, std::span<const Dialog> corpus,
                                                const Vocab& vocab) {
  std::vector<ContextExample> out;
  for (std::size_t di = 0; di < corpus.size(); ++di) {
    const Dialog& d = corpus[di];
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const Turn& turn = d.turns[t];
      ContextExample ex;
      if (t > 0) {
        const Turn& prev = d.turns[t - 1];
        auto span = serialize_belief(spec, prev.belief);
        span.pop_back();
        ex.prev_belief = vocab.encode(span);
        ex.prev_response = vocab.encode(prev.sys_delex);
      }
      ex.user = vocab.encode(turn.user);
      ex.user_tokens = turn.user;
      ex.target_belief = vocab.encode(serialize_belief(spec, turn.belief));
      ex.response_tokens = turn.sys_delex;
      ex.target_response = vocab.encode(turn.sys_delex);
      ex.target_response.push_back(token_id::kEosR);
      ex.match = turn.match;
      ex.domain = d.domain;
      ex.belief = turn.belief;
      ex.dialog = di;
      ex.turn = t;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

EncoderInput encoder_input(const ContextExample& ex) {
  EncoderInput in;
  in.ids.reserve(ex.prev_belief.size() + ex.prev_response.size() + ex.user.size() + 3);
  in.ids.insert(in.ids.end(), ex.prev_belief.begin(), ex.prev_belief.end());
  in.ids.push_back(token_id::kEosB);
  in.ids.insert(in.ids.end(), ex.prev_response.begin(), ex.prev_response.end());
  in.ids.push_back(token_id::kEosR);
  in.user_begin = static_cast<int>(in.ids.size());
  in.user_len = static_cast<int>(ex.user.size());
  in.ids.insert(in.ids.end(), ex.user.begin(), ex.user.end());
  in.ids.push_back(token_id::kEosU);
  return in;
}

std::size_t Batch::target_tokens() const {
  return static_cast<std::size_t>(std::accumulate(belief_len.begin(), belief_len.end(), 0) +
                                  std::accumulate(response_len.begin(), response_len.end(), 0));
}

namespace {

void fill_row(IdMatrix& m, Index row, const std::vector<int>& ids) {
  for (std::size_t k = 0; k < ids.size(); ++k) m(row, static_cast<Index>(k)) = ids[k];
}

}  // namespace

Batch make_batch(std::span<const ContextExample> examples, std::span<const std::size_t> indices) {
  Batch b;
  std::vector<EncoderInput> enc;
  int max_enc = 0, max_b = 0, max_r = 0;
  for (std::size_t idx : indices) {
    const auto& ex = examples[idx];
    enc.push_back(encoder_input(ex));
    max_enc = std::max(max_enc, static_cast<int>(enc.back().ids.size()));
    max_b = std::max(max_b, static_cast<int>(ex.target_belief.size()));
    max_r = std::max(max_r, static_cast<int>(ex.target_response.size()));
  }
  const auto n = static_cast<Index>(indices.size());
  b.encoder = IdMatrix::Constant(n, max_enc, token_id::kPad);
  b.belief = IdMatrix::Constant(n, max_b, token_id::kPad);
  b.response = IdMatrix::Constant(n, max_r, token_id::kPad);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& ex = examples[indices[k]];
    const auto row = static_cast<Index>(k);
    b.examples.push_back(indices[k]);
    fill_row(b.encoder, row, enc[k].ids);
    fill_row(b.belief, row, ex.target_belief);
    fill_row(b.response, row, ex.target_response);
    b.encoder_len.push_back(static_cast<int>(enc[k].ids.size()));
    b.user_begin.push_back(enc[k].user_begin);
    b.user_len.push_back(enc[k].user_len);
    b.belief_len.push_back(static_cast<int>(ex.target_belief.size()));
    b.response_len.push_back(static_cast<int>(ex.target_response.size()));
    b.match.push_back(static_cast<int>(ex.match));
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const ContextExample> examples, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size == 0) throw DataError("batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(examples, std::span<const std::size_t>(order).subspan(start, end - start)));
  }
  return out;
}

}  // namespace daml
