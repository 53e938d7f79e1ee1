#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfmu/losses.hpp"
#include "sfmu/trainer.hpp"

namespace sfmu {

/// argmax of the model's scores; ties go to the lowest class index.
template <LinearDesign Design>
Index predict(const Design& design, const Vector& w, Index i) {
  const Vector s = design.scores(i, w);
  Index best = 0;
  for (Eigen::Index c = 1; c < s.size(); ++c)
    if (s(c) > s(best)) best = static_cast<Index>(c);
  return best;
}

/// Percentage of argmax-correct predictions over idx.
template <LinearDesign Design>
double accuracy(const Design& design, const Vector& w, const IndexList& idx) {
  if (idx.empty()) throw EmptyIndexSet("accuracy: index set is empty");
  std::size_t correct = 0;
  for (Index i : idx) correct += predict(design, w, i) == design.label(i) ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
}

namespace detail {

// Best single threshold on training scores. Predicts "member" when
// (score <= threshold) == below. Returns {threshold, below}.
inline std::pair<double, bool> fit_threshold(std::vector<std::pair<double, int>> train) {
  std::sort(train.begin(), train.end());
  const auto n = train.size();
  std::size_t members = 0;
  for (const auto& t : train) members += t.second;
  const std::size_t non_members = n - members;

  // Candidate cut after position j (j = 0..n): left = first j samples.
  double best_acc = -1.0;
  double best_thr = -std::numeric_limits<double>::infinity();
  bool best_below = true;
  std::size_t left_members = 0;
  for (std::size_t j = 0; j <= n; ++j) {
    if (j > 0) left_members += train[j - 1].second;
    if (j > 0 && j < n && train[j - 1].first == train[j].first) continue;  // not a valid cut
    const std::size_t left_non = j - left_members;
    const double acc_below = static_cast<double>(left_members + (non_members - left_non)) / static_cast<double>(n);
    const double acc_above = 1.0 - acc_below;
    double thr;
    if (j == 0) thr = -std::numeric_limits<double>::infinity();
    else if (j == n) thr = std::numeric_limits<double>::infinity();
    else thr = 0.5 * (train[j - 1].first + train[j].first);
    if (acc_below > best_acc) {
      best_acc = acc_below;
      best_thr = thr;
      best_below = true;
    }
    if (acc_above > best_acc) {
      best_acc = acc_above;
      best_thr = thr;
      best_below = false;
    }
  }
  return {best_thr, best_below};
}

}  // namespace detail

struct MiaOptions {
  int folds = 5;
  bool one_sided = false;  // report max(score, 100 - score)
};

/// Loss-threshold membership inference: forget samples ("member") against an
/// equal-size random subsample of test samples ("non-member"); a single
/// threshold on per-sample loss is fit by stratified k-fold cross-validation.
/// Returns mean held-out attack accuracy in percent.
template <LinearDesign Design>
double mia_score(const SubsetLoss<Design>& loss, const Vector& w, const IndexList& forget_idx, const IndexList& test_idx,
                 std::uint64_t seed, const MiaOptions& opt = {}) {
  if (forget_idx.empty() || test_idx.empty()) throw EmptyIndexSet("mia_score: forget and test sets must be non-empty");
  std::mt19937_64 rng(seed);
  IndexList members = forget_idx;
  IndexList non_members = test_idx;
  std::shuffle(members.begin(), members.end(), rng);
  std::shuffle(non_members.begin(), non_members.end(), rng);
  const std::size_t size = std::min(members.size(), non_members.size());
  members.resize(size);
  non_members.resize(size);
  if (size < 2) throw UsageError("mia_score: need at least 2 samples per class for cross-validation");
  const int folds = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opt.folds), size));

  std::vector<std::pair<double, int>> data;  // (loss, is_member), fold = position % folds per class
  std::vector<int> fold_of;
  for (std::size_t r = 0; r < size; ++r) {
    data.emplace_back(loss.sample_loss(members[r], w), 1);
    fold_of.push_back(static_cast<int>(r % static_cast<std::size_t>(folds)));
    data.emplace_back(loss.sample_loss(non_members[r], w), 0);
    fold_of.push_back(static_cast<int>(r % static_cast<std::size_t>(folds)));
  }

  double total = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::pair<double, int>> train;
    for (std::size_t j = 0; j < data.size(); ++j)
      if (fold_of[j] != f) train.push_back(data[j]);
    const auto [thr, below] = detail::fit_threshold(std::move(train));
    std::size_t held = 0;
    std::size_t correct = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (fold_of[j] != f) continue;
      ++held;
      const bool predicted_member = (data[j].first <= thr) == below;
      correct += predicted_member == (data[j].second == 1) ? 1 : 0;
    }
    total += static_cast<double>(correct) / static_cast<double>(held);
  }
  const double score = 100.0 * total / folds;
  return opt.one_sided ? std::max(score, 100.0 - score) : score;
}

struct ResidualBoundReport {
  double residual = 0.0;           // |grad L(w_uf, D_r)|_2
  double bound_exact_form = std::numeric_limits<double>::quiet_NaN();  // gamma (n - n_f) |H^-1 grad_f|^2
  double bound_closed_form = 0.0;  // 4 gamma C^2 n_f^2 (n - n_f) / [lambda (n - n_f) - 2 eps / (2 + d)]^2
  bool degenerate = false;         // denominator <= 0
  bool holds = false;
};

struct ResidualBoundInputs {
  double gamma = 0.0;
  double grad_bound = 0.0;  // C
  double lambda = 0.0;
  std::size_t n = 0;
  std::size_t n_forget = 0;
  double epsilon = 0.0;
  Eigen::Index d = 1;
  std::optional<double> step_norm_sq;  // |H^-1 grad_f|_2^2 when available
  double slack = 0.0;                  // absolute tolerance for the comparison
};

/// Gradient-residual bound check for an unlearned model. A failed
/// precondition is reported through `degenerate`, not thrown.
template <LinearDesign Design>
ResidualBoundReport residual_bound_check(const Vector& w_uf, const SubsetLoss<Design>& retain_loss, const ResidualBoundInputs& in) {
  ResidualBoundReport r;
  r.residual = retain_loss.gradient(w_uf).norm();
  const double n_r = static_cast<double>(in.n - in.n_forget);
  const double n_f = static_cast<double>(in.n_forget);
  const double denom = in.lambda * n_r - 2.0 * in.epsilon / (2.0 + static_cast<double>(in.d));
  if (in.step_norm_sq) r.bound_exact_form = in.gamma == 0.0 ? 0.0 : in.gamma * n_r * *in.step_norm_sq;
  if (!(denom > 0.0)) {
    r.degenerate = true;
    r.bound_closed_form = std::numeric_limits<double>::infinity();
    r.holds = false;
    return r;
  }
  r.bound_closed_form =
      in.gamma == 0.0 ? 0.0 : 4.0 * in.gamma * in.grad_bound * in.grad_bound * n_f * n_f * n_r / (denom * denom);
  r.holds = r.residual <= r.bound_closed_form + in.slack;
  if (in.step_norm_sq) r.holds = r.holds && r.residual <= r.bound_exact_form + in.slack;
  return r;
}

/// One row of a results table.
struct EvalReport {
  std::string method;
  std::string setting;
  double test_acc = 0.0;
  double remain_acc = 0.0;
  double forget_acc = 0.0;
  double mia_score = 0.0;
  double param_dist = std::numeric_limits<double>::quiet_NaN();
  double grad_residual = 0.0;
  double residual_bound = std::numeric_limits<double>::quiet_NaN();
};

/// Accuracies, MIA, gradient residual on the retain set and (when given)
/// parameter distance to the retrained reference.
template <LinearDesign Design>
EvalReport evaluate(const Design& design, LossKind kind, double lambda, const SplitSpec& split, const Vector& w,
                    const std::optional<Vector>& w_retrained, std::uint64_t mia_seed, const MiaOptions& mia = {}) {
  EvalReport r;
  r.test_acc = split.test_idx.empty() ? std::numeric_limits<double>::quiet_NaN() : accuracy(design, w, split.test_idx);
  r.remain_acc = accuracy(design, w, split.retain_idx);
  r.forget_acc = accuracy(design, w, split.forget_idx);
  const SubsetLoss<Design> retain(design, split.retain_idx, lambda, kind);
  r.mia_score = split.test_idx.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : mia_score(retain, w, split.forget_idx, split.test_idx, mia_seed, mia);
  r.grad_residual = retain.gradient(w).norm();
  if (w_retrained) r.param_dist = (w - *w_retrained).norm();
  return r;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string fmt(double v, int precision) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

inline std::string fmt_g(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

inline constexpr const char* kTableHeader = "method,setting,test,remaining,forget,mia,param_dist,grad_residual";

inline std::string emit_table(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kTableHeader) + "\n";
  for (const auto& r : reports) {
    out += detail::csv_field(r.method) + "," + detail::csv_field(r.setting) + "," + detail::fmt(r.test_acc, 4) + "," +
           detail::fmt(r.remain_acc, 4) + "," + detail::fmt(r.forget_acc, 4) + "," + detail::fmt(r.mia_score, 4) +
           "," + detail::fmt_g(r.param_dist) + "," + detail::fmt_g(r.grad_residual) + "\n";
  }
  return out;
}

inline std::string summary(const EvalReport& r) {
  std::ostringstream os;
  os << "method=" << r.method << "\n"
     << "setting=" << r.setting << "\n"
     << "test_acc=" << detail::fmt(r.test_acc, 4) << "\n"
     << "remain_acc=" << detail::fmt(r.remain_acc, 4) << "\n"
     << "forget_acc=" << detail::fmt(r.forget_acc, 4) << "\n"
     << "mia_score=" << detail::fmt(r.mia_score, 4) << "\n"
     << "param_dist=" << detail::fmt_g(r.param_dist) << "\n"
     << "grad_residual=" << detail::fmt_g(r.grad_residual) << "\n"
     << "residual_bound=" << detail::fmt_g(r.residual_bound) << "\n";
  return os.str();
}

}  // namespace sfmu
