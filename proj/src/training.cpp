#include "daml/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace daml {

void ScheduleConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw TrainingConfigError("learning rate must be finite and >= 0");
  if (max_epochs < 0) throw TrainingConfigError("max_epochs must be >= 0");
  if (patience < 1) throw TrainingConfigError("patience must be >= 1");
  if (batch_size == 0) throw TrainingConfigError("batch_size must be positive");
}

nlohmann::json ScheduleConfig::to_json() const {
  return {{"lr", lr}, {"max_epochs", max_epochs}, {"patience", patience}, {"batch_size", batch_size}, {"seed", seed}};
}

void MetaConfig::validate() const {
  if (second_order) {
    throw TrainingConfigError("second-order meta-gradients are not implemented; use the first-order mode");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw TrainingConfigError("alpha must be finite and >= 0");
  if (inner_steps != 1) throw TrainingConfigError("exactly one inner step is supported");
}

nlohmann::json MetaConfig::to_json() const {
  return {{"alpha", alpha}, {"inner_steps", inner_steps}, {"second_order", second_order},
          {"batch_per_domain", batch_per_domain}};
}

std::size_t MetaConfig::resolved_batch(std::size_t batch_size, std::size_t domains) const {
  if (batch_per_domain > 0) return batch_per_domain;
  return (batch_size + domains - 1) / std::max<std::size_t>(domains, 1);
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"lr", e.lr},
                    {"seconds", e.seconds}});
  }
  return {{"epochs", rows}, {"best_epoch", best_epoch}, {"best_val_loss", best_val_loss}};
}

double dataset_loss(const Sequicity<float>& model, const ParameterSet<float>& params,
                    const std::vector<ContextExample>& examples, std::size_t batch_size) {
  if (examples.empty()) throw DataError("cannot compute a loss over no examples");
  double total = 0.0, weight = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(examples, idx);
    const double w = static_cast<double>(b.size());
    total += w * model.loss_value(params, b);
    weight += w;
  }
  return total / weight;
}

namespace {

using Clock = std::chrono::steady_clock;

// Shared early-stopping machinery: epoch 0 records the starting validation
// loss, the rate halves whenever validation loss rises, and training stops
// after `patience` epochs without a new best.
class Scheduler {
 public:
  Scheduler(const ScheduleConfig& cfg, ParameterSet<float> start, double val0, const EpochCallback& cb)
      : cfg_(cfg), best_(std::move(start)), lr_(cfg.lr), cb_(cb) {
    log_.best_val_loss = val0;
    record({0, std::numeric_limits<double>::quiet_NaN(), val0, lr_, 0.0});
    previous_ = val0;
  }

  double lr() const { return lr_; }
  const ParameterSet<float>& best() const { return best_; }

  // Returns false when training should stop.
  bool finish_epoch(int epoch, double train_loss, double val_loss, const ParameterSet<float>& params, double seconds) {
    if (!std::isfinite(val_loss) || !std::isfinite(train_loss)) {
      throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch), best_, epoch);
    }
    record({epoch, train_loss, val_loss, lr_, seconds});
    if (val_loss < log_.best_val_loss) {
      log_.best_val_loss = val_loss;
      log_.best_epoch = epoch;
      best_ = params;
      stale_ = 0;
    } else {
      ++stale_;
    }
    if (val_loss > previous_) lr_ *= 0.5;
    previous_ = val_loss;
    return stale_ < cfg_.patience;
  }

  TrainResult result() && { return {std::move(best_), std::move(log_)}; }

 private:
  void record(const EpochRecord& r) {
    log_.epochs.push_back(r);
    if (cb_) cb_(r);
  }

  const ScheduleConfig& cfg_;
  ParameterSet<float> best_;
  TrainLog log_;
  double lr_;
  double previous_ = 0.0;
  int stale_ = 0;
  const EpochCallback& cb_;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean_val_loss(const Sequicity<float>& model, const ParameterSet<float>& params,
                     const std::vector<DomainData>& domains, std::size_t batch_size) {
  double sum = 0.0;
  for (const auto& d : domains) sum += dataset_loss(model, params, d.val, batch_size);
  return sum / static_cast<double>(domains.size());
}

void check_domains(const std::vector<DomainData>& domains, std::size_t min_domains) {
  if (domains.size() < min_domains) {
    throw TrainingConfigError("need at least " + std::to_string(min_domains) + " source domains");
  }
  for (const auto& d : domains) {
    if (d.train.empty() || d.val.empty()) throw DataError("domain " + d.name + " has an empty train or val split");
  }
}

std::pair<double, ParameterSet<float>> gradient(const Sequicity<float>& model, const ParameterSet<float>& params,
                                                const Batch& batch, Rng& dropout_rng) {
  ParameterSet<float> g = params.zeros_like();
  const double loss = model.loss_and_gradient(params, batch, g, &dropout_rng);
  return {loss, std::move(g)};
}

template <typename Step>
void guarded(Step&& step, const ParameterSet<float>& last_finite, int epoch) {
  try {
    step();
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("numeric failure: ") + e.what(), last_finite, epoch);
  }
}

}  // namespace

TrainResult maml_train(const Sequicity<float>& model, ParameterSet<float> init, const std::vector<DomainData>& domains,
                       const MetaConfig& meta, const ScheduleConfig& schedule, const EpochCallback& on_epoch) {
  meta.validate();
  schedule.validate();
  check_domains(domains, 2);
  ParameterSet<float> params = std::move(init);
  Scheduler sched(schedule, params, mean_val_loss(model, params, domains, schedule.batch_size), on_epoch);
  AdamState<float> adam = AdamState<float>::init(params, schedule.lr);
  Rng dropout_rng(stream_seed(schedule.seed, "dropout"));
  const auto alpha = static_cast<float>(meta.alpha);

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::vector<std::vector<Batch>> per_domain;
    std::size_t rounds = 0;
    for (std::size_t k = 0; k < domains.size(); ++k) {
      per_domain.push_back(make_batches(domains[k].train, meta.resolved_batch(schedule.batch_size, domains.size()),
                                        stream_seed(schedule.seed, "batching", epoch * 1000 + k)));
      rounds = std::max(rounds, per_domain.back().size());
    }
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    adam.learning_rate = sched.lr();
    for (std::size_t r = 0; r < rounds; ++r) {
      std::vector<const Batch*> tasks;
      for (const auto& batches : per_domain) {
        if (r < batches.size()) tasks.push_back(&batches[r]);
      }
      guarded(
          [&] {
            double meta_loss = 0.0;
            auto g = first_order_meta_gradient(
                params, tasks.size(), alpha,
                [&](const ParameterSet<float>& p, std::size_t k) { return gradient(model, p, *tasks[k], dropout_rng); },
                &meta_loss);
            if (!std::isfinite(meta_loss)) throw NumericError("non-finite meta-loss", -1);
            adam_step(adam, params, g);
            loss_sum += meta_loss;
            loss_count += tasks.size();
          },
          sched.best(), epoch);
    }
    const double val = mean_val_loss(model, params, domains, schedule.batch_size);
    if (!sched.finish_epoch(epoch, loss_sum / static_cast<double>(loss_count), val, params, seconds_since(t0))) break;
  }
  return std::move(sched).result();
}

TrainResult transfer_train(const Sequicity<float>& model, ParameterSet<float> init,
                           const std::vector<DomainData>& domains, const ScheduleConfig& schedule,
                           const EpochCallback& on_epoch) {
  schedule.validate();
  check_domains(domains, 1);
  std::vector<ContextExample> pooled;
  for (const auto& d : domains) pooled.insert(pooled.end(), d.train.begin(), d.train.end());

  ParameterSet<float> params = std::move(init);
  Scheduler sched(schedule, params, mean_val_loss(model, params, domains, schedule.batch_size), on_epoch);
  AdamState<float> adam = AdamState<float>::init(params, schedule.lr);
  Rng dropout_rng(stream_seed(schedule.seed, "dropout"));

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const auto batches = make_batches(pooled, schedule.batch_size, stream_seed(schedule.seed, "batching", epoch));
    double loss_sum = 0.0;
    adam.learning_rate = sched.lr();
    for (const auto& b : batches) {
      guarded(
          [&] {
            auto [loss, g] = gradient(model, params, b, dropout_rng);
            if (!std::isfinite(loss)) throw NumericError("non-finite loss", -1);
            adam_step(adam, params, g);
            loss_sum += loss;
          },
          sched.best(), epoch);
    }
    const double val = mean_val_loss(model, params, domains, schedule.batch_size);
    if (!sched.finish_epoch(epoch, loss_sum / static_cast<double>(batches.size()), val, params, seconds_since(t0))) {
      break;
    }
  }
  return std::move(sched).result();
}

AdaptResult adapt(const Sequicity<float>& model, ParameterSet<float> params,
                  const std::vector<ContextExample>& target_train, const std::vector<ContextExample>& target_val,
                  const ScheduleConfig& schedule, const EpochCallback& on_epoch) {
  schedule.validate();
  if (target_train.empty()) throw DataError("adaptation needs at least one target training example");
  if (target_val.empty()) throw DataError("adaptation needs target validation examples");
  DomainData target{"target", target_train, target_val};
  const std::vector<DomainData> domains = {std::move(target)};
  TrainResult r = transfer_train(model, std::move(params), domains, schedule, on_epoch);
  AdaptResult out;
  out.epochs_used = static_cast<double>(r.log.best_epoch);
  out.params = std::move(r.params);
  out.log = std::move(r.log);
  return out;
}

}  // namespace daml
