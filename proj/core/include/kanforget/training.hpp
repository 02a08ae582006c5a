#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kanforget/errors.hpp"
#include "kanforget/ledger.hpp"
#include "kanforget/matrix.hpp"
#include "kanforget/networks.hpp"
#include "kanforget/random.hpp"
#include "kanforget/task_corpus.hpp"

namespace kanforget {

enum class LossKind { MeanSquaredError, CrossEntropy };

[[nodiscard]] std::string to_string(LossKind kind);

struct LossResult {
  double value = 0.0;
  Matrix gradient;  // d(value)/d(prediction), same shape as the prediction
};

/// Mean over all entries of (pred - target)^2.
[[nodiscard]] LossResult mse_loss(const Matrix& pred, const Matrix& target);

/// Mean over rows of -log softmax(logits)[label], max-subtracted.
[[nodiscard]] LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

struct EwcConfig {
  double lambda = 0.1;
  /// How many of the most recent tasks feed the Fisher estimate; 0 = all prior tasks.
  std::size_t memory_depth = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs_per_task = 50;
  LossKind loss_kind = LossKind::MeanSquaredError;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Rows per optimizer step; 0 means full batch.
  std::size_t batch_size = 0;
  std::optional<EwcConfig> ewc;
  /// Evaluate every task after every epoch (loss curves).
  bool record_curves = true;
  /// Fresh AdamW moments at the start of each task.
  bool reset_optimizer_per_task = false;

  void validate() const;
};

struct AdamwState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
};

/// Decoupled weight decay then a bias-corrected Adam update, in place.
/// Throws TrainingError (location.index = offending entry) on a non-finite gradient.
void adamw_step(AdamwState& state, std::span<double> params, std::span<const double> grads,
                const TrainConfig& cfg);

struct EwcState {
  double lambda = 0.0;
  std::vector<double> fisher_diag;
  std::vector<double> anchor_params;
};

/// (lambda/2) sum_k F_k (theta_k - anchor_k)^2 and its gradient.
[[nodiscard]] std::pair<double, std::vector<double>> ewc_penalty(std::span<const double> params,
                                                                 const EwcState& ewc);

template <class Net>
concept TrainableNetwork = requires(const Net& cn, Net& n, const Matrix& x, std::span<const double> p) {
  { cn.flat_parameters() } -> std::same_as<std::vector<double>>;
  { cn.parameter_count() } -> std::convertible_to<std::size_t>;
  n.set_flat_parameters(p);
  { backward(cn, forward(cn, x), x) } -> std::same_as<GradientSet>;
};

template <TrainableNetwork Net>
[[nodiscard]] Matrix predict(const Net& net, const Matrix& inputs) {
  return forward(net, inputs).output;
}

/// Loss of a prediction against whichever target form the task carries.
[[nodiscard]] LossResult task_loss(const TaskDataset& task, std::span<const std::size_t> rows,
                                   const Matrix& prediction, LossKind kind);

template <TrainableNetwork Net>
[[nodiscard]] double evaluate_loss(const Net& net, const TaskDataset& task, LossKind kind) {
  std::vector<std::size_t> all(task.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return task_loss(task, all, predict(net, task.inputs), kind).value;
}

/// Mean over memory rows of the squared per-row loss gradient.
template <TrainableNetwork Net>
[[nodiscard]] std::vector<double> fisher_estimate(const Net& net, std::span<const TaskDataset> memory,
                                                  LossKind kind) {
  std::size_t rows = 0;
  for (const auto& task : memory) rows += task.rows();
  if (rows == 0) throw UsageError("fisher_estimate: empty memory");
  std::vector<double> fisher(net.parameter_count(), 0.0);
  for (const auto& task : memory) {
    for (std::size_t r = 0; r < task.rows(); ++r) {
      const std::size_t idx[1] = {r};
      const Matrix x = task.inputs.select_rows(idx);
      auto trace = forward(net, x);
      const LossResult loss = task_loss(task, idx, trace.output, kind);
      const GradientSet g = backward(net, trace, loss.gradient);
      for (std::size_t k = 0; k < fisher.size(); ++k) fisher[k] += g.parameters[k] * g.parameters[k];
    }
  }
  for (double& f : fisher) f /= static_cast<double>(rows);
  return fisher;
}

/// Losses of every task after one epoch; epoch counts from 1 across the sequence.
struct CurvePoint {
  std::size_t epoch = 0;  // 0 is the untrained network
  int training_task = 0;  // 1-based; 0 before training
  std::vector<double> task_losses;
};

template <class Net>
struct SequenceResult {
  std::vector<Net> checkpoints;  // f^(1) .. f^(T)
  ForgettingLedger ledger;
  std::vector<CurvePoint> curves;
};

namespace detail {

inline void check_finite_loss(double value, long task, long epoch) {
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite loss at task " + std::to_string(task) + ", epoch " +
                            std::to_string(epoch),
                        {task, epoch, -1});
  }
}

}  // namespace detail

/// Trains `net` on each task in order for cfg.epochs_per_task epochs,
/// snapshots f^(t) after task t and records L(f^(t), D_i) for every i.
template <TrainableNetwork Net>
[[nodiscard]] SequenceResult<Net> train_sequence(Net net, std::span<const TaskDataset> tasks,
                                                 const TrainConfig& cfg) {
  cfg.validate();
  if (tasks.empty()) throw UsageError("train_sequence: no tasks");
  for (const auto& task : tasks) task.validate();

  SequenceResult<Net> result;
  result.ledger = ForgettingLedger(tasks.size());
  AdamwState adam;
  std::optional<EwcState> ewc;
  std::vector<double> params = net.flat_parameters();
  std::size_t global_epoch = 0;
  if (cfg.record_curves) {
    CurvePoint point{0, 0, {}};
    for (const auto& other : tasks) point.task_losses.push_back(evaluate_loss(net, other, cfg.loss_kind));
    result.curves.push_back(std::move(point));
  }

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TaskDataset& task = tasks[t];
    if (cfg.reset_optimizer_per_task) adam = AdamwState{};
    CounterRng shuffle_rng(cfg.seed, streams::kShuffle + t);
    std::vector<std::size_t> order(task.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch = cfg.batch_size == 0 ? task.rows() : std::min(cfg.batch_size, task.rows());

    for (std::size_t epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
      ++global_epoch;
      if (batch < task.rows()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        }
      }
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        const std::span<const std::size_t> rows(order.data() + start, stop - start);
        const Matrix x = task.inputs.select_rows(rows);
        const long where_task = static_cast<long>(t + 1);
        const long where_epoch = static_cast<long>(epoch + 1);
        GradientSet grads;
        try {
          auto trace = forward(net, x);
          const LossResult loss = task_loss(task, rows, trace.output, cfg.loss_kind);
          detail::check_finite_loss(loss.value, where_task, where_epoch);
          grads = backward(net, trace, loss.gradient);
        } catch (const DomainError& e) {
          // Diverged parameters push pre-activations to inf/NaN inside forward.
          throw TrainingError(std::string("diverged at task ") + std::to_string(where_task) + ", epoch " +
                                  std::to_string(where_epoch) + ": " + e.what(),
                              {where_task, where_epoch, -1});
        }
        if (ewc) {
          const auto [penalty, pgrad] = ewc_penalty(params, *ewc);
          detail::check_finite_loss(penalty, static_cast<long>(t + 1), static_cast<long>(epoch + 1));
          for (std::size_t k = 0; k < pgrad.size(); ++k) grads.parameters[k] += pgrad[k];
        }
        try {
          adamw_step(adam, params, grads.parameters, cfg);
        } catch (const TrainingError& e) {
          throw TrainingError(e.what(), {static_cast<long>(t + 1), static_cast<long>(epoch + 1),
                                         e.where().index});
        }
        net.set_flat_parameters(params);
      }
      if (cfg.record_curves) {
        CurvePoint point{global_epoch, static_cast<int>(t + 1), {}};
        for (const auto& other : tasks) point.task_losses.push_back(evaluate_loss(net, other, cfg.loss_kind));
        result.curves.push_back(std::move(point));
      }
    }

    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const Matrix pred = predict(net, tasks[i].inputs);
      std::vector<std::size_t> all(tasks[i].rows());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const double value = task_loss(tasks[i], all, pred, cfg.loss_kind).value;
      detail::check_finite_loss(value, static_cast<long>(t + 1), -1);
      result.ledger.loss(t, i) = value;
      result.ledger.accuracy(t, i) = task_accuracy(tasks[i], pred);
    }
    result.checkpoints.push_back(net);

    if (cfg.ewc) {
      const std::size_t depth = cfg.ewc->memory_depth == 0 ? t + 1 : std::min(cfg.ewc->memory_depth, t + 1);
      const auto memory = tasks.subspan(t + 1 - depth, depth);
      ewc = EwcState{cfg.ewc->lambda, fisher_estimate(net, memory, cfg.loss_kind), params};
    }
  }
  return result;
}

}  // namespace kanforget
