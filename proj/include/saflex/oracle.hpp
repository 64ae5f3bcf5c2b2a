#pragma once

// Independent checks for the refinement step: exhaustive enumeration of the
// linearized per-batch problem over its vertex set (hard label x binary
// weight per sample), central finite differences, and exact post-step
// validation losses.
//
// Scores used here come from reverse mode (one backward pass per class),
// never from the forward-mode JVP route the step itself uses.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "saflex/errors.hpp"
#include "saflex/losses.hpp"
#include "saflex/matrix.hpp"
#include "saflex/nn.hpp"
#include "saflex/random.hpp"
#include "saflex/saflex.hpp"

namespace saflex::oracle {

inline constexpr std::size_t kMaxSamples = 8;
inline constexpr std::size_t kMaxClasses = 6;

/// One LP vertex: a hard label and a keep/drop flag per augmented sample.
/// The label of a dropped sample is irrelevant to the objective.
struct Assignment {
  std::vector<std::size_t> labels;
  std::vector<std::uint8_t> keep;

  std::size_t size() const { return labels.size(); }

  /// Equal up to the labels of dropped samples.
  bool equivalent(const Assignment& o) const {
    if (size() != o.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (keep[i] != o.keep[i]) return false;
      if (keep[i] && labels[i] != o.labels[i]) return false;
    }
    return true;
  }
};

enum class WeightConstraint {
  kNone,     // w_i in {0,1} independently
  kSumToOne, // sum_i w_i = 1: exactly one kept sample
};

/// Pi_k = < backward(p - e_k), g_val > for every row of X.
inline PiScores pi_scores_reverse(const ModelParams& params, const Matrix& X, const ParamGrad& g_val) {
  params.check(g_val, "pi_scores_reverse");
  const std::size_t K = params.shape().output_dim();
  PiScores pi{Matrix(X.rows(), K)};
  for (std::size_t i = 0; i < X.rows(); ++i) {
    Matrix xi(1, X.cols(), std::vector<double>(X.row(i).begin(), X.row(i).end()));
    ForwardCache c = mlp_forward(params, xi);
    for (std::size_t k = 0; k < K; ++k) {
      Matrix d(1, K);
      for (std::size_t j = 0; j < K; ++j) d(0, j) = c.probs(0, j) - (j == k ? 1.0 : 0.0);
      pi.values(i, k) = param_dot(mlp_backward(params, c, d), g_val);
    }
  }
  return pi;
}

/// sum over kept samples of Pi[i][label_i], accumulated in sample order.
inline double assignment_objective(const PiScores& pi, const Assignment& a) {
  if (a.size() != pi.samples()) throw ShapeError("assignment_objective: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a.keep[i] ? pi.values(i, a.labels[i]) : 0.0;
  return total;
}

struct EnumerationResult {
  Assignment best;
  double objective = 0.0;
  std::uint64_t evaluated = 0;
};

/// Exhaustive maximization of the linearized objective over all vertices.
/// Candidates are visited in lexicographic order (sample 0 most significant,
/// per-sample choices "keep with label 0..K-1" then "drop"); the first
/// maximizer wins ties.
inline EnumerationResult enumerate_optimum(const PiScores& pi, WeightConstraint constraint = WeightConstraint::kNone) {
  const std::size_t B = pi.samples(), K = pi.classes();
  if (B > kMaxSamples || K > kMaxClasses)
    throw DomainError("enumerate_optimum: guard exceeded (B <= " + std::to_string(kMaxSamples) +
                      ", K <= " + std::to_string(kMaxClasses) + ")");
  if (K == 0) throw DomainError("enumerate_optimum: no classes");
  EnumerationResult r;
  r.best.labels.assign(B, 0);
  r.best.keep.assign(B, 0);
  if (B == 0) return r;

  if (constraint == WeightConstraint::kSumToOne) {
    r.objective = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        ++r.evaluated;
        const double v = pi.values(i, k);
        if (v > r.objective) {
          r.objective = v;
          r.best.labels.assign(B, 0);
          r.best.keep.assign(B, 0);
          r.best.labels[i] = k;
          r.best.keep[i] = 1;
        }
      }
    }
    return r;
  }

  const std::size_t drop = K;
  std::vector<std::size_t> choice(B, 0);
  std::vector<double> prefix(B + 1, 0.0);
  auto contrib = [&](std::size_t i) { return choice[i] == drop ? 0.0 : pi.values(i, choice[i]); };
  for (std::size_t i = 0; i < B; ++i) prefix[i + 1] = prefix[i] + contrib(i);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_choice = choice;
  while (true) {
    ++r.evaluated;
    if (prefix[B] > best) {
      best = prefix[B];
      best_choice = choice;
    }
    // Odometer: advance the least significant digit, carrying leftwards.
    std::size_t pos = B;
    while (pos > 0) {
      --pos;
      if (++choice[pos] <= drop) break;
      choice[pos] = 0;
      if (pos == 0) {
        pos = B; // wrapped: done
        break;
      }
    }
    if (pos == B) break;
    for (std::size_t i = pos; i < B; ++i) prefix[i + 1] = prefix[i] + contrib(i);
  }
  r.objective = best;
  for (std::size_t i = 0; i < B; ++i) {
    r.best.keep[i] = best_choice[i] != drop;
    r.best.labels[i] = best_choice[i] == drop ? 0 : best_choice[i];
  }
  return r;
}

struct Optimum {
  PiScores pi; // reverse-mode scores used for the enumeration
  EnumerationResult result;
};

inline Optimum enumerate_optimum(const ModelParams& params, const Matrix& x_aug, const ParamGrad& g_val,
                                 WeightConstraint constraint = WeightConstraint::kNone) {
  if (x_aug.rows() > kMaxSamples || params.shape().output_dim() > kMaxClasses)
    throw DomainError("enumerate_optimum: guard exceeded");
  Optimum o{pi_scores_reverse(params, x_aug, g_val), {}};
  o.result = enumerate_optimum(o.pi, constraint);
  return o;
}

/// Hard-label view of a refinement output: argmax labels and binary weights.
inline Assignment to_assignment(const SaflexOutput& out) {
  Assignment a;
  a.labels = out.hard_labels;
  a.keep.resize(out.raw_weights.size());
  for (std::size_t i = 0; i < a.keep.size(); ++i) a.keep[i] = out.raw_weights[i] > 0.0;
  return a;
}

/// Low-temperature limit of the weight rule: with a one-hot label the test
/// Pi . y >= 0 becomes Pi_label >= 0. Labels are the output's argmax labels.
inline Assignment closed_form_assignment(const PiScores& pi, const SaflexOutput& out) {
  Assignment a;
  a.labels = out.hard_labels;
  a.keep.resize(a.labels.size());
  for (std::size_t i = 0; i < a.keep.size(); ++i) a.keep[i] = pi.values(i, a.labels[i]) >= 0.0;
  return a;
}

/// Central differences of fn at params, one coordinate at a time.
template <class Fn>
ParamGrad finite_diff(Fn&& fn, const ModelParams& params, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_diff: eps must be > 0");
  ParamGrad g(params.shape());
  ModelParams probe = params;
  auto v = probe.values();
  auto out = g.values();
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double orig = v[j];
    v[j] = orig + eps;
    const double fp = fn(static_cast<const ModelParams&>(probe));
    v[j] = orig - eps;
    const double fm = fn(static_cast<const ModelParams&>(probe));
    v[j] = orig;
    out[j] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

/// Gradient of  mean_i ce(train_i) + sum_j keep_j ce(aug_j, label_j)  with
/// the assignment's weights used as-is (binary, not renormalized), matching
/// the objective the enumeration maximizes.
inline ParamGrad assignment_gradient(const ModelParams& params, const Batch& train, const Matrix& x_aug,
                                     const Assignment& a) {
  const std::size_t K = params.shape().output_dim();
  if (a.size() != x_aug.rows()) throw ShapeError("assignment_gradient: size mismatch");
  ForwardCache tc = mlp_forward(params, train.X);
  ForwardCache ac = mlp_forward(params, x_aug);
  std::vector<double> w(a.size());
  Matrix y(a.size(), K);
  for (std::size_t i = 0; i < a.size(); ++i) {
    w[i] = a.keep[i] ? 1.0 : 0.0;
    y(i, a.labels[i]) = 1.0;
  }
  return combined_gradient(params, train, tc, &ac, w, y);
}

/// Exact validation loss (mean CE over val) after one SGD step under `a`.
inline double post_step_val_loss(const ModelParams& params, const Batch& train, const Matrix& x_aug,
                                 const Assignment& a, const Batch& val, double lr) {
  if (!(lr >= 0.0)) throw DomainError("post_step_val_loss: learning rate must be >= 0");
  return mean_ce(sgd_step(params, assignment_gradient(params, train, x_aug, a), lr), val);
}

/// Every vertex of the unconstrained problem, in enumeration order.
inline std::vector<Assignment> all_assignments(std::size_t B, std::size_t K) {
  if (B > kMaxSamples || K > kMaxClasses) throw DomainError("all_assignments: guard exceeded");
  std::vector<Assignment> out;
  std::vector<std::size_t> choice(B, 0);
  while (true) {
    Assignment a;
    for (std::size_t c : choice) {
      a.keep.push_back(c < K);
      a.labels.push_back(c < K ? c : 0);
    }
    out.push_back(std::move(a));
    std::size_t pos = B;
    bool done = true;
    while (pos > 0) {
      --pos;
      if (++choice[pos] <= K) {
        done = false;
        break;
      }
      choice[pos] = 0;
    }
    if (done) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Randomized certification of the closed-form assignment.

struct CheckConfig {
  std::size_t instances = 1000;
  std::uint64_t seed = 20240601;
  std::size_t max_samples = kMaxSamples;
  std::size_t max_classes = kMaxClasses;
  std::size_t min_classes = 2;
  std::size_t max_params = 500;
  double tau = 0.01;
  double beta = 0.0;
  WeightConstraint constraint = WeightConstraint::kNone;
};

struct InstanceResult {
  std::size_t samples = 0, classes = 0, params = 0;
  double enumerated = 0.0;  // optimum objective
  double closed_form = 0.0; // objective of the low-temperature closed form
  double gap = 0.0;
  bool tie_break_match = false;
  double soft_rule_gap = 0.0; // weights from Pi . y >= 0 with the soft labels at tau
  double sum_rule_gap = 0.0; // same, with weights from sum_k Pi_k >= 0
  std::size_t rule_disagreements = 0;
};

struct CheckReport {
  std::vector<InstanceResult> instances;
  double max_gap = 0.0;
  std::size_t value_matches = 0;
  std::size_t tie_break_matches = 0;
  double max_soft_rule_gap = 0.0;
  std::size_t soft_rule_value_matches = 0;
  double max_sum_rule_gap = 0.0;
  std::size_t sum_rule_value_matches = 0;
  std::size_t rule_disagreements = 0;
  std::size_t samples_total = 0;
  double seconds = 0.0;

  bool passed() const { return !instances.empty() && value_matches == instances.size(); }
};

/// Random small MLP instance: network, augmented inputs, validation-like
/// gradient direction and original labels.
struct Instance {
  ModelParams params;
  Matrix x_aug;
  ParamGrad g_val;
  std::vector<std::size_t> orig_labels;
};

inline Instance random_instance(Engine& eng, const CheckConfig& cfg) {
  if (cfg.min_classes < 2) throw DomainError("oracle check: K must be >= 2 (K = 1 has a single label and nothing to choose)");
  if (cfg.max_samples == 0 || cfg.max_samples > kMaxSamples || cfg.max_classes > kMaxClasses ||
      cfg.max_classes < cfg.min_classes)
    throw DomainError("oracle check: guard exceeded (B <= 8, 2 <= K <= 6)");
  std::uniform_int_distribution<std::size_t> bdist(1, cfg.max_samples), kdist(cfg.min_classes, cfg.max_classes),
      ddist(2, 6), hdist(2, 16), ldist(0, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Instance in;
  for (;;) {
    MlpShape s;
    s.dims.push_back(ddist(eng));
    const std::size_t hidden_layers = ldist(eng) + 1;
    for (std::size_t l = 0; l < hidden_layers; ++l) s.dims.push_back(hdist(eng));
    s.dims.push_back(kdist(eng));
    if (s.parameter_count() > cfg.max_params) continue;
    in.params = ModelParams(s);
    break;
  }
  for (double& v : in.params.values()) v = 0.5 * normal(eng);
  const std::size_t B = bdist(eng), K = in.params.shape().output_dim();
  in.x_aug = Matrix(B, in.params.shape().input_dim());
  for (double& v : in.x_aug.data()) v = normal(eng);
  in.g_val = ParamGrad(in.params.shape());
  for (double& v : in.g_val.values()) v = normal(eng);
  std::uniform_int_distribution<std::size_t> ydist(0, K - 1);
  for (std::size_t i = 0; i < B; ++i) in.orig_labels.push_back(ydist(eng));
  return in;
}

inline InstanceResult check_instance(const Instance& in, const CheckConfig& cfg) {
  SaflexConfig sc;
  sc.tau = cfg.tau;
  sc.beta = cfg.beta;
  sc.gumbel_enabled = false;
  PiScores forward_pi = pi_scores(in.params, in.x_aug, in.g_val);
  SaflexOutput out = saflex_assign(forward_pi, in.orig_labels, sc);
  Assignment closed = closed_form_assignment(forward_pi, out);

  Optimum opt = enumerate_optimum(in.params, in.x_aug, in.g_val, cfg.constraint);
  InstanceResult r;
  r.samples = in.x_aug.rows();
  r.classes = in.params.shape().output_dim();
  r.params = in.params.size();
  r.enumerated = opt.result.objective;
  r.closed_form = assignment_objective(opt.pi, closed);
  r.gap = r.enumerated - r.closed_form;
  r.tie_break_match = closed.equivalent(opt.result.best);
  r.soft_rule_gap = r.enumerated - assignment_objective(opt.pi, to_assignment(out));

  Assignment sum_rule = closed;
  for (std::size_t i = 0; i < sum_rule.size(); ++i) {
    double total = 0.0;
    for (double v : forward_pi[i]) total += v;
    sum_rule.keep[i] = total >= 0.0;
    r.rule_disagreements += sum_rule.keep[i] != closed.keep[i] ? 1 : 0;
  }
  r.sum_rule_gap = r.enumerated - assignment_objective(opt.pi, sum_rule);
  return r;
}

inline CheckReport run_check(const CheckConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  Engine eng = make_engine(cfg.seed, {stream_tag::kOracle});
  CheckReport rep;
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    Instance in = random_instance(eng, cfg);
    InstanceResult r = check_instance(in, cfg);
    rep.max_gap = std::max(rep.max_gap, r.gap);
    rep.value_matches += r.gap == 0.0 ? 1 : 0;
    rep.tie_break_matches += r.tie_break_match ? 1 : 0;
    rep.max_soft_rule_gap = std::max(rep.max_soft_rule_gap, r.soft_rule_gap);
    rep.soft_rule_value_matches += r.soft_rule_gap == 0.0 ? 1 : 0;
    rep.max_sum_rule_gap = std::max(rep.max_sum_rule_gap, r.sum_rule_gap);
    rep.sum_rule_value_matches += r.sum_rule_gap == 0.0 ? 1 : 0;
    rep.rule_disagreements += r.rule_disagreements;
    rep.samples_total += r.samples;
    rep.instances.push_back(r);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

} // namespace saflex::oracle
