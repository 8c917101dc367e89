#include "sranet/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sranet::loss {
namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1, got " + std::to_string(label));
}

}  // namespace

void validate_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie strictly between 0 and 1, got " + std::to_string(alpha));
  }
}

double cross_entropy(double p, int label) {
  check_label(label);
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return label ? -std::log(q) : -std::log(1.0 - q);
}

double structure_loss(std::span<const double> scores, std::span<const std::uint8_t> indicators) {
  if (scores.size() != indicators.size() || scores.empty()) {
    throw std::invalid_argument("structure_loss: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(indicators.size()) + " indicators");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) acc += softplus(scores[i]) - double(indicators[i] != 0) * scores[i];
  return acc / double(scores.size());
}

double total_loss(double l_c, double l_s, double alpha) {
  validate_alpha(alpha);
  return alpha * l_c + (1.0 - alpha) * l_s;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& p, int label) {
  check_label(label);
  if (p.size() != 1) throw ShapeError("cross_entropy: expected a single probability, got " + to_string(p.shape()));
  const double raw = double(p.item());
  const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
  const double q = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  auto out = Tensor<T>::scalar(T(label ? -std::log(q) : -std::log(1.0 - q)));
  tape.record({p}, out, [p, out, q, clamped, label]() mutable {
    if (clamped) return;
    const double d = label ? -1.0 / q : 1.0 / (1.0 - q);
    p.grad_buffer()[0] += T(d * double(out.grad()[0]));
  });
  return out;
}

template <typename T>
Tensor<T> structure_loss(Tape<T>& tape, const Tensor<T>& scores, std::span<const std::uint8_t> indicators) {
  if (scores.rank() != 1 || scores.size() != indicators.size() || indicators.empty()) {
    throw ShapeError("structure_loss: scores " + to_string(scores.shape()) + " vs " +
                     std::to_string(indicators.size()) + " indicators");
  }
  const std::size_t n = scores.size();
  std::vector<double> g(scores.data().begin(), scores.data().end());
  std::vector<std::uint8_t> f(indicators.begin(), indicators.end());
  auto out = Tensor<T>::scalar(T(structure_loss(g, f)));
  tape.record({scores}, out, [scores, out, g = std::move(g), f = std::move(f), n]() mutable {
    const double upstream = double(out.grad()[0]) / double(n);
    auto gg = scores.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gg[i] += T(upstream * (sigmoid(g[i]) - double(f[i] != 0)));
  });
  return out;
}

template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& l_c, const Tensor<T>& l_s, double alpha) {
  validate_alpha(alpha);
  if (l_c.size() != 1 || l_s.size() != 1) throw ShapeError("total_loss: components must be scalars");
  auto out = Tensor<T>::scalar(T(alpha * double(l_c.item()) + (1.0 - alpha) * double(l_s.item())));
  tape.record({l_c, l_s}, out, [l_c, l_s, out, alpha]() mutable {
    const double up = double(out.grad()[0]);
    if (l_c.requires_grad()) l_c.grad_buffer()[0] += T(alpha * up);
    if (l_s.requires_grad()) l_s.grad_buffer()[0] += T((1.0 - alpha) * up);
  });
  return out;
}

#define SRANET_INSTANTIATE(T)                                                                   \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, int);                            \
  template Tensor<T> structure_loss(Tape<T>&, const Tensor<T>&, std::span<const std::uint8_t>); \
  template Tensor<T> total_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, double);

SRANET_INSTANTIATE(float)
SRANET_INSTANTIATE(double)
#undef SRANET_INSTANTIATE

}  // namespace sranet::loss

namespace sranet::metrics {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw std::invalid_argument("metrics: empty input");
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("metrics: labels must be 0 or 1");
  }
}

}  // namespace

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i]) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

Rates sen_spe_acc(const Confusion& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics: all confusion counts are zero");
  Rates r;
  if (c.tp + c.fn) r.sensitivity = double(c.tp) / double(c.tp + c.fn);
  if (c.tn + c.fp) r.specificity = double(c.tn) / double(c.tn + c.fp);
  r.accuracy = double(c.tp + c.tn) / double(c.total());
  return r;
}

Roc roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t pos = std::size_t(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("AUC needs at least one positive and one negative label (got " +
                                std::to_string(pos) + " positive, " + std::to_string(neg) + " negative)");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  Roc roc;
  roc.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < idx.size() && scores[idx[i]] == s; ++i) labels[idx[i]] ? ++tp : ++fp;
    // trapezoid in count units: (fp - fp0) * (tp + tp0) / 2
    area += double(fp - fp0) * double(tp + tp0) * 0.5;
    roc.points.emplace_back(double(fp) / double(neg), double(tp) / double(pos));
  }
  roc.auc = area / (double(pos) * double(neg));
  return roc;
}

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels, double threshold) {
  EvalReport report;
  report.threshold = threshold;
  report.counts = confusion(scores, labels, threshold);
  const Rates rates = sen_spe_acc(report.counts);
  report.sensitivity = rates.sensitivity;
  report.specificity = rates.specificity;
  report.accuracy = rates.accuracy;
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives > 0 && std::size_t(positives) < labels.size()) {
    Roc roc = roc_auc(scores, labels);
    report.auc = roc.auc;
    report.roc = std::move(roc.points);
  }
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& [fpr, tpr] : r.roc) roc.push_back({fpr, tpr});
  return {{"tp", r.counts.tp},          {"tn", r.counts.tn},
          {"fp", r.counts.fp},          {"fn", r.counts.fn},
          {"threshold", r.threshold},   {"sensitivity", opt(r.sensitivity)},
          {"specificity", opt(r.specificity)}, {"accuracy", r.accuracy},
          {"auc", opt(r.auc)},          {"roc", roc}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  EvalReport r;
  r.counts = {j.at("tp").get<std::size_t>(), j.at("tn").get<std::size_t>(), j.at("fp").get<std::size_t>(),
              j.at("fn").get<std::size_t>()};
  r.threshold = j.value("threshold", 0.5);
  r.sensitivity = opt("sensitivity");
  r.specificity = opt("specificity");
  r.accuracy = j.at("accuracy").get<double>();
  r.auc = opt("auc");
  for (const auto& pt : j.at("roc")) r.roc.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
  return r;
}

}  // namespace sranet::metrics
