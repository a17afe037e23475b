#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "daml/autodiff.hpp"
#include "daml/schema.hpp"
#include "daml/simdial.hpp"

namespace daml {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace token_id {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kGo = 2;
inline constexpr int kEosU = 3;
inline constexpr int kEosB = 4;
inline constexpr int kEosR = 5;
inline constexpr int kInf = 6;
inline constexpr int kReq = 7;
inline constexpr int kMatchNone = 8;
inline constexpr int kMatchExact = 9;
inline constexpr int kMatchMulti = 10;
inline constexpr int kReservedCount = 11;
}  // namespace token_id

int match_token(MatchIndicator m);

// Append-only token <-> id map. Ids below kReservedCount are the special tokens.
class Vocab {
 public:
  Vocab();

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return ids_.contains(std::string(token)); }
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  static bool is_reserved(int id) { return id >= 0 && id < token_id::kReservedCount; }

  // Returns the id of `token`, appending it if new.
  int add(const std::string& token);

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Adds every user, delexicalized system and belief-span token of `corpus`.
void extend_vocab(Vocab& vocab, std::span<const Dialog> corpus);
Vocab build_vocab(std::span<const std::span<const Dialog>> corpora);

struct EmbeddingLoad {
  Matrix<float> table;        // vocab.size() x dim
  std::size_t found = 0;      // non-reserved tokens present in the file
  std::size_t malformed = 0;  // lines skipped
  double coverage = 0.0;      // found / non-reserved vocabulary size
  std::vector<bool> pretrained;
};

// Word-vector text file: "token v1 ... v_dim" per line. Tokens missing from the
// file get uniform[-0.08, 0.08] rows drawn from `seed`.
EmbeddingLoad load_embeddings(const std::filesystem::path& path, const Vocab& vocab, int dim, std::uint64_t seed);

// One training/evaluation instance built from turn t of a dialog.
struct ContextExample {
  std::vector<int> prev_belief;    // serialized B_{t-1} without its end marker
  std::vector<int> prev_response;  // delexicalized R_{t-1}
  std::vector<int> user;
  std::vector<int> target_belief;    // serialized B_t, ends with <eos_b>
  std::vector<int> target_response;  // delexicalized R_t, ends with <eos_r>
  MatchIndicator match = MatchIndicator::NoMatch;
  std::string domain;
  BeliefState belief;                    // oracle B_t
  std::vector<std::string> user_tokens;  // surface form, for copied unknown words
  std::vector<std::string> response_tokens;
  std::size_t dialog = 0;
  std::size_t turn = 0;
};

std::vector<ContextExample> dialogs_to_examples(const DomainSpec& spec, std::span<const Dialog> corpus,
                                                const Vocab& vocab);

// Encoder input: prev_belief <eos_b> prev_response <eos_r> user <eos_u>.
struct EncoderInput {
  std::vector<int> ids;
  int user_begin = 0;
  int user_len = 0;
};
EncoderInput encoder_input(const ContextExample& ex);

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Padded (with kPad) id matrices, one row per example.
struct Batch {
  std::vector<std::size_t> examples;  // indices into the source example list
  IdMatrix encoder;
  IdMatrix belief;    // targets, ending with <eos_b>
  IdMatrix response;  // targets, ending with <eos_r>
  std::vector<int> encoder_len;
  std::vector<int> user_begin;
  std::vector<int> user_len;
  std::vector<int> belief_len;
  std::vector<int> response_len;
  std::vector<int> match;  // 0 no match, 1 exact, 2 multiple

  std::size_t size() const { return examples.size(); }
  std::size_t target_tokens() const;

  // size x 1 column holding 1 where position t < lengths[i], else 0.
  template <typename Scalar>
  static Matrix<Scalar> step_mask(const std::vector<int>& lengths, int t) {
    Matrix<Scalar> m(static_cast<Index>(lengths.size()), 1);
    for (std::size_t i = 0; i < lengths.size(); ++i) m(static_cast<Index>(i), 0) = t < lengths[i] ? Scalar(1) : Scalar(0);
    return m;
  }
};

Batch make_batch(std::span<const ContextExample> examples, std::span<const std::size_t> indices);

// Shuffles by `seed` and chunks; the final partial batch is kept.
std::vector<Batch> make_batches(std::span<const ContextExample> examples, std::size_t batch_size, std::uint64_t seed);

}  // namespace daml
