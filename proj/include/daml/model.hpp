#pragma once

// Two-stage copy-augmented encoder-decoder over belief spans and responses.
//
// A shared GRU encoder reads "B_{t-1} <eos_b> R_{t-1} <eos_r> U_t <eos_u>".
// The belief decoder emits B_t, mixing its vocabulary softmax with a copy
// distribution over the user utterance; the response decoder starts from the
// match-indicator embedding and copies from the belief-span tokens.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daml/autodiff.hpp"
#include "daml/corpus.hpp"
#include "daml/parameters.hpp"
#include "daml/rng.hpp"
#include "daml/schema.hpp"

namespace daml {

struct ModelConfig {
  int embedding_dim = 50;
  int hidden = 50;
  int attention = 50;
  double dropout = 0.5;
  int max_belief_len = 30;
  int max_response_len = 50;
  double init_scale = 0.08;
  double embedding_scale = 1.0;  // stddev of the normal init for token and match embeddings
  bool train_embeddings = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Named parameters: N(0, embedding_scale^2) embeddings, uniform[-init_scale,
// init_scale] weights and zero biases.
template <typename Scalar>
ParameterSet<Scalar> init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed);

// Grows the vocabulary-indexed tensors (embedding rows, output columns) to
// `vocab_size`; existing entries are untouched. `embedding_rows`, when given,
// supplies the new embedding rows (e.g. pretrained vectors).
template <typename Scalar>
void extend_params_vocab(ParameterSet<Scalar>& params, const ModelConfig& cfg, std::size_t vocab_size,
                         std::uint64_t seed, const Matrix<Scalar>* embedding_rows = nullptr);

template <typename Scalar>
struct DecoderLeaves {
  Tensor<Scalar> w_input, w_hidden, b_input, b_hidden;
  Tensor<Scalar> attn_w_enc, attn_w_dec, attn_b, attn_v;
  Tensor<Scalar> out_w, out_b, vocab_w, vocab_b;
  Tensor<Scalar> copy_w, gate_w, gate_b;
};

template <typename Scalar>
struct ModelLeaves {
  Tensor<Scalar> embedding, match_embedding;
  Tensor<Scalar> enc_w_input, enc_w_hidden, enc_b_input, enc_b_hidden;
  DecoderLeaves<Scalar> bspan, response;
};

// Per-example view of the encoder output used by both decoder heads.
template <typename Scalar>
struct EncoderView {
  Tensor<Scalar> states;     // L x H
  Tensor<Scalar> keys_b;     // L x A, belief attention keys
  Tensor<Scalar> keys_r;     // L x A, response attention keys
  Tensor<Scalar> user_copy;  // Lu x H, sigmoid(h_user W_b)
  Tensor<Scalar> final;      // 1 x H
  std::vector<int> user_ids;
};

template <typename Scalar>
struct HeadOutput {
  Tensor<Scalar> probs;  // T x V mixture, rows sum to 1
  Tensor<Scalar> gate;   // T x 1
  Tensor<Scalar> copy;   // T x Lu copy weights over source positions (belief head only)
};

struct DecodeOutput {
  std::vector<int> ids;
  std::vector<std::string> tokens;
  Matrix<double> distributions;  // steps x V
  std::vector<double> gates;
  Matrix<double> states;  // steps x H
};

struct EncodeOutput {
  Matrix<double> states;  // L x H
};

struct TurnPrediction {
  std::vector<std::string> belief_tokens;
  BeliefState belief;
  std::size_t dropped = 0;
  MatchIndicator match = MatchIndicator::NoMatch;
  std::vector<std::string> response_delex;
  std::vector<std::string> response_lex;
  std::optional<std::string> entity;
};

struct DecodeOptions {
  bool oracle_belief = false;  // skip belief decoding and use the annotated span
};

template <typename Scalar>
class Sequicity {
 public:
  using Mat = Matrix<Scalar>;
  using T = Tensor<Scalar>;

  Sequicity(ModelConfig cfg, std::size_t vocab_size);

  const ModelConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }

  // Binds `params` as graph leaves; gradients flow into `grads` when given.
  ModelLeaves<Scalar> bind(Graph<Scalar>& g, const ParameterSet<Scalar>& params, ParameterSet<Scalar>* grads) const;

  // Same as bind() for caller-made leaves; leaves[i] stands for params[i].
  ModelLeaves<Scalar> assemble(const ParameterSet<Scalar>& params, std::span<const T> leaves) const;

  HeadOutput<Scalar> belief_head(const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc, const T& states) const;

  // `copy_row` is the 1 x V copy distribution over belief tokens, or an
  // invalid tensor when the belief span has nothing to copy.
  HeadOutput<Scalar> response_head(const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc, const T& states,
                                   const T& copy_row) const;

  // 1 x V distribution of copying from the given belief-decoder states.
  T response_copy_row(const ModelLeaves<Scalar>& p, const T& belief_states, const std::vector<int>& ids) const;

  // Teacher-forced mean-token loss: belief mean + response mean.
  T batch_loss(Graph<Scalar>& g, const ModelLeaves<Scalar>& p, const Batch& batch, Rng* dropout_rng) const;

  // Adds d(loss)/d(params) into `grads` and returns the loss.
  double loss_and_gradient(const ParameterSet<Scalar>& params, const Batch& batch, ParameterSet<Scalar>& grads,
                           Rng* dropout_rng) const;

  // Evaluation-mode loss (no dropout, no gradient).
  double loss_value(const ParameterSet<Scalar>& params, const Batch& batch) const;

  EncodeOutput encode(const ParameterSet<Scalar>& params, const ContextExample& ex) const;
  DecodeOutput decode_belief(const ParameterSet<Scalar>& params, const ContextExample& ex, const Vocab& vocab,
                             bool teacher_forced = false) const;
  DecodeOutput decode_response(const ParameterSet<Scalar>& params, const ContextExample& ex, const Vocab& vocab,
                               const std::vector<int>& belief_ids, const Matrix<double>& belief_states,
                               MatchIndicator match, bool teacher_forced = false) const;

  TurnPrediction greedy_decode_turn(const ParameterSet<Scalar>& params, const ContextExample& ex,
                                    const DomainSpec& spec, const KnowledgeBase& kb, const Vocab& vocab,
                                    const DecodeOptions& options = {}) const;

 private:
  struct Encoded {
    T all;    // (Lmax * B) x H, time-major
    T final;  // B x H
    std::vector<EncoderView<Scalar>> views;
  };

  Encoded run_encoder(Graph<Scalar>& g, const ModelLeaves<Scalar>& p, const Batch& batch, Rng* dropout_rng) const;
  T input_projection(Graph<Scalar>& g, const T& embedded, const T& w_input, const T& b_input,
                     Rng* dropout_rng) const;
  DecodeOutput greedy_belief(const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc,
                             const ContextExample& ex, const Vocab& vocab, bool teacher_forced) const;
  DecodeOutput greedy_response(Graph<Scalar>& g, const ModelLeaves<Scalar>& p, const EncoderView<Scalar>& enc,
                               const ContextExample& ex, const Vocab& vocab, const std::vector<int>& belief_ids,
                               const Mat& belief_states, MatchIndicator match, bool teacher_forced) const;

  ModelConfig cfg_;
  std::size_t vocab_size_;
};

// Replaces <slot> placeholders with the entity's values; unknown ones stay.
std::vector<std::string> lexicalize(const std::vector<std::string>& delex, const Entity* entity);

extern template class Sequicity<float>;
extern template class Sequicity<double>;

}  // namespace daml
