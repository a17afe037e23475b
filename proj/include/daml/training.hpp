#pragma once

// Meta-training over source domains, the pooled-data transfer baseline and
// target-domain fine-tuning, all driven by one validation-based schedule.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "daml/corpus.hpp"
#include "daml/model.hpp"
#include "daml/parameters.hpp"

namespace daml {

class TrainingConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss. Carries the best finite parameters.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, ParameterSet<float> last_finite, int epoch)
      : std::runtime_error(what), last_finite_(std::move(last_finite)), epoch_(epoch) {}
  const ParameterSet<float>& last_finite() const { return last_finite_; }
  int epoch() const { return epoch_; }

 private:
  ParameterSet<float> last_finite_;
  int epoch_;
};

struct ScheduleConfig {
  double lr = 0.003;  // Adam rate; the outer rate beta in meta-training
  int max_epochs = 30;
  int patience = 3;  // epochs without validation improvement before stopping
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct MetaConfig {
  double alpha = 0.003;  // inner SGD rate
  int inner_steps = 1;
  bool second_order = false;  // reserved; rejected by validate()
  // Examples per domain in one meta-iteration; 0 means ceil(batch_size / K)
  // for K domains, so a meta-iteration sees about one pooled batch.
  std::size_t batch_per_domain = 0;

  std::size_t resolved_batch(std::size_t batch_size, std::size_t domains) const;

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the evaluation before any update
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;

  nlohmann::json to_json() const;
};

struct DomainData {
  std::string name;
  std::vector<ContextExample> train;
  std::vector<ContextExample> val;
};

struct TrainResult {
  ParameterSet<float> params;  // best-validation parameters
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// First-order meta-gradient for one meta-iteration over `tasks` task batches:
//   sum_k grad L_k(M - alpha * grad L_k(M))
// `grad(params, k)` returns (loss, gradient) of task k at `params`. The
// summed post-update loss is written to `meta_loss` when given.
template <typename Scalar, typename GradFn>
ParameterSet<Scalar> first_order_meta_gradient(const ParameterSet<Scalar>& params, std::size_t tasks, Scalar alpha,
                                               GradFn&& grad, double* meta_loss = nullptr) {
  ParameterSet<Scalar> meta = params.zeros_like();
  double total = 0.0;
  for (std::size_t k = 0; k < tasks; ++k) {
    const auto inner = grad(params, k);
    const ParameterSet<Scalar> temporary = sgd_step(params, inner.second, alpha);
    const auto outer = grad(temporary, k);
    total += outer.first;
    for (std::size_t i = 0; i < meta.size(); ++i) meta[i] += outer.second[params.name(i)];
  }
  if (meta_loss != nullptr) *meta_loss = total;
  return meta;
}

// Evaluation-mode loss over `examples`: per-batch losses of consecutive
// `batch_size` chunks, averaged with weights equal to the chunk sizes.
double dataset_loss(const Sequicity<float>& model, const ParameterSet<float>& params,
                    const std::vector<ContextExample>& examples, std::size_t batch_size);

// Meta-training: one batch of `meta.resolved_batch` examples per source domain
// per meta-iteration, an inner SGD step per domain, Adam on the summed
// first-order meta-gradient.
TrainResult maml_train(const Sequicity<float>& model, ParameterSet<float> init, const std::vector<DomainData>& domains,
                       const MetaConfig& meta, const ScheduleConfig& schedule, const EpochCallback& on_epoch = {});

// Baseline: Adam on shuffled batches of the pooled source data.
TrainResult transfer_train(const Sequicity<float>& model, ParameterSet<float> init,
                           const std::vector<DomainData>& domains, const ScheduleConfig& schedule,
                           const EpochCallback& on_epoch = {});

struct AdaptResult {
  ParameterSet<float> params;
  double epochs_used = 0.0;  // epoch of the best target-validation loss
  TrainLog log;
};

// Fine-tunes on the target domain. The vocabulary (and params) must already
// cover the target tokens.
AdaptResult adapt(const Sequicity<float>& model, ParameterSet<float> params,
                  const std::vector<ContextExample>& target_train, const std::vector<ContextExample>& target_val,
                  const ScheduleConfig& schedule, const EpochCallback& on_epoch = {});

}  // namespace daml
