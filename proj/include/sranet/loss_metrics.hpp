#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sranet/tensor.hpp"

namespace sranet::loss {

inline constexpr double kProbClamp = 1e-7;

/// -[y log p + (1 - y) log(1 - p)] with p clamped to [1e-7, 1 - 1e-7].
double cross_entropy(double p, int label);

/// Mean over patches of the binary cross-entropy between sigmoid(g_i) and f_i.
double structure_loss(std::span<const double> scores, std::span<const std::uint8_t> indicators);

/// alpha * l_c + (1 - alpha) * l_s; alpha must lie strictly inside (0, 1).
double total_loss(double l_c, double l_s, double alpha);

/// Throws std::invalid_argument unless 0 < alpha < 1.
void validate_alpha(double alpha);

// Differentiable counterparts, shape [1].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& p, int label);

template <typename T>
Tensor<T> structure_loss(Tape<T>& tape, const Tensor<T>& scores, std::span<const std::uint8_t> indicators);

template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& l_c, const Tensor<T>& l_s, double alpha);

struct LossBreakdown {
  double l_c = 0.0;
  double l_s = 0.0;
  double alpha = 0.5;
  double total = 0.0;
};

}  // namespace sranet::loss

namespace sranet::metrics {

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Predicted positive iff score >= threshold.
Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct Rates {
  std::optional<double> sensitivity;  // TP / (TP + FN); undefined without positives
  std::optional<double> specificity;  // TN / (TN + FP); undefined without negatives
  double accuracy = 0.0;
};

Rates sen_spe_acc(const Confusion& counts);

struct Roc {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), from (0,0) to (1,1)
  double auc = 0.0;
};

/// Sweeps every distinct score as a threshold; trapezoidal area. Throws
/// std::invalid_argument if either class is absent.
Roc roc_auc(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  Confusion counts;
  double threshold = 0.5;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double accuracy = 0.0;
  std::optional<double> auc;  // undefined on single-class input
  std::vector<std::pair<double, double>> roc;

  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace sranet::metrics
