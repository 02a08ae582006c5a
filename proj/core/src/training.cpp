#include "kanforget/training.hpp"

#include <cmath>
#include <limits>

namespace kanforget {

std::string to_string(LossKind kind) {
  return kind == LossKind::MeanSquaredError ? "mse" : "cross-entropy";
}

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) throw UsageError("mse_loss: shape mismatch");
  if (pred.size() == 0) throw UsageError("mse_loss: empty input");
  LossResult out{0.0, Matrix(pred.rows(), pred.cols())};
  const double inv = 1.0 / static_cast<double>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred.values()[i] - target.values()[i];
    acc += diff * diff;
    out.gradient.values()[i] = 2.0 * diff * inv;
  }
  out.value = acc * inv;
  return out;
}

LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw UsageError("cross_entropy_loss: label count mismatch");
  if (logits.rows() == 0 || logits.cols() == 0) throw UsageError("cross_entropy_loss: empty input");
  LossResult out{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(logits.rows());
  double acc = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
      throw UsageError("cross_entropy_loss: label " + std::to_string(label) + " out of range");
    }
    const auto row = logits.row(r);
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : row) peak = std::max(peak, v);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - peak);
    const double log_denom = std::log(denom);
    acc += log_denom - (row[static_cast<std::size_t>(label)] - peak);
    auto g = out.gradient.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double softmax = std::exp(row[c] - peak - log_denom);
      g[c] = (softmax - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv;
    }
  }
  out.value = acc * inv;
  return out;
}

LossResult task_loss(const TaskDataset& task, std::span<const std::size_t> rows, const Matrix& prediction,
                     LossKind kind) {
  if (prediction.rows() != rows.size()) throw UsageError("task_loss: prediction rows mismatch");
  if (kind == LossKind::CrossEntropy) {
    if (!task.is_classification()) throw UsageError("task_loss: cross-entropy needs labels");
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = task.labels[rows[i]];
    return cross_entropy_loss(prediction, labels);
  }
  if (task.is_classification()) throw UsageError("task_loss: mse needs regression targets");
  return mse_loss(prediction, task.targets.select_rows(rows));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("TrainConfig: learning_rate must be > 0");
  }
  if (!(weight_decay >= 0.0)) throw UsageError("TrainConfig: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("TrainConfig: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw UsageError("TrainConfig: epsilon must be > 0");
  if (ewc && !(ewc->lambda >= 0.0)) throw UsageError("TrainConfig: ewc lambda must be >= 0");
}

void adamw_step(AdamwState& state, std::span<double> params, std::span<const double> grads,
                const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw UsageError("adamw_step: params/grads length mismatch");
  if (state.first_moment.empty() && state.step_count == 0) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw UsageError("adamw_step: optimizer state length mismatch");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!std::isfinite(grads[k])) {
      throw TrainingError("adamw_step: non-finite gradient at index " + std::to_string(k),
                          {-1, -1, static_cast<long>(k)});
    }
  }
  ++state.step_count;
  const double lr = cfg.learning_rate;
  const double decay = 1.0 - lr * cfg.weight_decay;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k] *= decay;
    double& m = state.first_moment[k];
    double& v = state.second_moment[k];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[k];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[k] * grads[k];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

std::pair<double, std::vector<double>> ewc_penalty(std::span<const double> params, const EwcState& ewc) {
  if (params.size() != ewc.anchor_params.size() || params.size() != ewc.fisher_diag.size()) {
    throw UsageError("ewc_penalty: parameter count does not match the EWC anchor");
  }
  double acc = 0.0;
  std::vector<double> grad(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double d = params[k] - ewc.anchor_params[k];
    acc += ewc.fisher_diag[k] * d * d;
    grad[k] = ewc.lambda * ewc.fisher_diag[k] * d;
  }
  return {0.5 * ewc.lambda * acc, std::move(grad)};
}

}  // namespace kanforget
