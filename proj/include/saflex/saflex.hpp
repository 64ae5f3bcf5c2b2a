#pragma once

// Greedy single-step refinement of augmented samples. For each augmented
// sample, the K-vector of alignment scores
//     Pi_k = < grad_theta ce(x, k), grad_theta L_val >
// says how much one descent step on label k would reduce the validation
// loss to first order. Labels follow a (Gumbel-)softmax of Pi plus a
// retention bonus on the original label; weights keep a sample iff its
// labelled score Pi . y is nonnegative.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "saflex/errors.hpp"
#include "saflex/losses.hpp"
#include "saflex/matrix.hpp"
#include "saflex/nn.hpp"
#include "saflex/random.hpp"

namespace saflex {

struct SaflexConfig {
  double beta = 0.0;               // retention bonus on the original label
  double tau = 0.01;               // softmax temperature
  std::size_t val_batch_size = 0;  // 0: same as the training batch size
  std::uint64_t seed = 0;
  bool gumbel_enabled = true;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("SaflexConfig: tau must be > 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw DomainError("SaflexConfig: beta must be >= 0");
  }
};

/// Where a batch sits in training; selects its Gumbel stream.
struct StepKey {
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
};

/// Per-sample alignment scores, B x K.
struct PiScores {
  Matrix values;

  std::size_t samples() const { return values.rows(); }
  std::size_t classes() const { return values.cols(); }
  std::span<const double> operator[](std::size_t i) const { return values.row(i); }
};

struct SaflexDiagnostics {
  double frac_zero_weight = 0.0;
  double frac_label_changed = 0.0;
  /// Fraction dropped under the alternative rule sum_k Pi_k >= 0.
  double frac_zero_weight_sum_rule = 0.0;
  /// Fraction of samples where the two weight rules disagree.
  double frac_rule_disagreement = 0.0;
};

struct SaflexOutput {
  std::vector<double> weights;     // renormalized to sum 1, or all zero
  std::vector<double> raw_weights; // binary, before renormalization
  Matrix soft_labels;              // B x K, rows on the simplex
  std::vector<std::size_t> hard_labels; // argmax of each soft label row
  SaflexDiagnostics diagnostics;
};

struct ValidationGradient {
  ParamGrad grad;
  double loss = 0.0; // mean CE at the same parameters
};

/// Mean cross-entropy gradient over the validation minibatch.
inline ValidationGradient validation_gradient_and_loss(const ModelParams& params, const Batch& val) {
  if (val.empty()) throw DomainError("validation_gradient: empty validation batch");
  const std::size_t K = params.shape().output_dim();
  val.validate(K);
  ForwardCache cache = mlp_forward(params, val.X);
  Matrix y = val.targets(K);
  std::vector<double> w(val.size(), 1.0 / static_cast<double>(val.size()));
  ValidationGradient out;
  out.loss = weighted_soft_ce_logits(cache.logits(), w, y);
  out.grad = mlp_backward(params, cache, ce_grad_logits(cache.probs, w, y));
  return out;
}

inline ParamGrad validation_gradient(const ModelParams& params, const Batch& val) {
  return validation_gradient_and_loss(params, val).grad;
}

/// Pi_k = p.u - u_k, where u is the logit JVP along the validation gradient.
/// Equals <J^T (p - e_k), g_val>, the alignment of label-k descent.
inline void pi_from_logit_jvp(std::span<const double> probs, std::span<const double> u, std::span<double> out) {
  if (probs.size() != u.size() || out.size() != u.size()) throw ShapeError("pi_from_logit_jvp: length mismatch");
  const double pu = dot(probs, u);
  for (std::size_t k = 0; k < u.size(); ++k) out[k] = pu - u[k];
}

/// Scores for every row of an existing forward cache (one JVP per row).
inline PiScores pi_scores(const ModelParams& params, const ForwardCache& cache, const ParamGrad& g_val) {
  params.check(g_val, "pi_scores");
  Matrix u = jvp_logits_batch(params, cache, g_val);
  PiScores pi{Matrix(u.rows(), u.cols())};
  for (std::size_t i = 0; i < u.rows(); ++i) pi_from_logit_jvp(cache.probs.row(i), u.row(i), pi.values.row(i));
  return pi;
}

inline PiScores pi_scores(const ModelParams& params, const Matrix& x_aug, const ParamGrad& g_val) {
  return pi_scores(params, mlp_forward(params, x_aug), g_val);
}

/// Gumbel(0,1) K-vector for one sample, a pure function of
/// (seed, epoch, batch, sample).
inline std::vector<double> gumbel_draw(std::uint64_t seed, StepKey key, std::size_t sample, std::size_t K) {
  CounterStream s(derive_key(seed, {stream_tag::kGumbel, key.epoch, key.batch, sample}));
  std::vector<double> g(K);
  for (double& v : g) v = s.gumbel();
  return g;
}

/// Label and weight assignment from precomputed scores.
inline SaflexOutput saflex_assign(const PiScores& pi, std::span<const std::size_t> orig_labels,
                                  const SaflexConfig& cfg, StepKey key = {}) {
  cfg.validate();
  const std::size_t B = pi.samples(), K = pi.classes();
  if (orig_labels.size() != B) throw ShapeError("saflex_assign: label count != samples");
  SaflexOutput out;
  out.soft_labels = Matrix(B, K);
  out.raw_weights.assign(B, 0.0);
  out.hard_labels.assign(B, 0);
  std::size_t zero = 0, changed = 0, zero_sum_rule = 0, disagree = 0;
  std::vector<double> score(K);
  for (std::size_t i = 0; i < B; ++i) {
    if (orig_labels[i] >= K) throw DomainError("saflex_assign: original label out of range");
    auto p = pi[i];
    std::vector<double> g = cfg.gumbel_enabled ? gumbel_draw(cfg.seed, key, i, K) : std::vector<double>(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) score[k] = (p[k] + (k == orig_labels[i] ? cfg.beta : 0.0) + g[k]) / cfg.tau;
    auto y = out.soft_labels.row(i);
    std::copy(score.begin(), score.end(), y.begin());
    softmax_inplace(y);
    out.hard_labels[i] = argmax(std::span<const double>(y.data(), y.size()));

    const bool keep = dot(p, y) >= 0.0;
    double total = 0.0;
    for (double v : p) total += v;
    const bool keep_sum_rule = total >= 0.0;
    out.raw_weights[i] = keep ? 1.0 : 0.0;
    zero += keep ? 0 : 1;
    zero_sum_rule += keep_sum_rule ? 0 : 1;
    disagree += keep != keep_sum_rule ? 1 : 0;
    changed += out.hard_labels[i] != orig_labels[i] ? 1 : 0;
  }
  double kept = 0.0;
  for (double w : out.raw_weights) kept += w;
  out.weights = out.raw_weights;
  if (kept > 0.0)
    for (double& w : out.weights) w /= kept;
  if (B > 0) {
    const double b = static_cast<double>(B);
    out.diagnostics = {static_cast<double>(zero) / b, static_cast<double>(changed) / b,
                       static_cast<double>(zero_sum_rule) / b, static_cast<double>(disagree) / b};
  }
  return out;
}

/// Contrastive variant: the batch is a B-way proxy classification whose
/// original label for sample i is its own partner i.
inline SaflexOutput saflex_assign_contrastive(const PiScores& pi, const SaflexConfig& cfg, StepKey key = {}) {
  if (pi.classes() != pi.samples()) throw ShapeError("saflex_assign_contrastive: scores must be B x B");
  std::vector<std::size_t> own(pi.samples());
  for (std::size_t i = 0; i < own.size(); ++i) own[i] = i;
  return saflex_assign(pi, own, cfg, key);
}

/// Gradient of  mean_i ce(train_i) + sum_j w_j ce_soft(aug_j)  at params,
/// reusing forward caches of both batches.
inline ParamGrad combined_gradient(const ModelParams& params, const Batch& train, const ForwardCache& train_cache,
                                   const ForwardCache* aug_cache, std::span<const double> aug_weights,
                                   const Matrix& aug_targets) {
  const std::size_t K = params.shape().output_dim();
  std::vector<double> wt(train.size(), train.empty() ? 0.0 : 1.0 / static_cast<double>(train.size()));
  ParamGrad g(params.shape());
  if (!train.empty()) g = mlp_backward(params, train_cache, ce_grad_logits(train_cache.probs, wt, train.targets(K)));
  if (aug_cache && aug_cache->batch() > 0) {
    bool any = false;
    for (double w : aug_weights) any = any || w != 0.0;
    if (any) g.axpy(1.0, mlp_backward(params, *aug_cache, ce_grad_logits(aug_cache->probs, aug_weights, aug_targets)));
  }
  return g;
}

inline double mean_ce(const ModelParams& params, const Batch& b) {
  const std::size_t K = params.shape().output_dim();
  ForwardCache c = mlp_forward(params, b.X);
  std::vector<double> w(b.size(), 1.0 / static_cast<double>(b.size()));
  return weighted_soft_ce_logits(c.logits(), w, b.targets(K));
}

struct SaflexStepMetrics {
  double train_loss = 0.0;      // mean CE of the training batch before the update
  double val_loss_before = 0.0; // on the validation batch
  double val_loss_after = std::numeric_limits<double>::quiet_NaN();
};

struct SaflexStepResult {
  ModelParams params;
  SaflexOutput output;
  SaflexStepMetrics metrics;
};

struct SaflexGradient {
  ParamGrad grad;
  SaflexOutput output;
  SaflexStepMetrics metrics;
};

/// Everything in a refined update short of applying it: validation
/// gradient, scores for each augmented sample, assignment, and the gradient
/// of the combined loss at the current parameters.
inline SaflexGradient saflex_gradient(const ModelParams& params, const Batch& train, const Batch& aug,
                                      const Batch& val, const SaflexConfig& cfg, StepKey key = {}) {
  if (train.empty() || aug.empty() || val.empty()) throw DomainError("saflex_step: empty batch");
  cfg.validate();
  const std::size_t K = params.shape().output_dim();
  train.validate(K);
  aug.validate(K);

  SaflexGradient r;
  ValidationGradient vg = validation_gradient_and_loss(params, val);
  ForwardCache aug_cache = mlp_forward(params, aug.X);
  PiScores pi = pi_scores(params, aug_cache, vg.grad);
  r.output = saflex_assign(pi, aug.labels, cfg, key);

  ForwardCache train_cache = mlp_forward(params, train.X);
  std::vector<double> wt(train.size(), 1.0 / static_cast<double>(train.size()));
  r.metrics.train_loss = weighted_soft_ce_logits(train_cache.logits(), wt, train.targets(K));
  r.metrics.val_loss_before = vg.loss;
  r.grad = combined_gradient(params, train, train_cache, &aug_cache, r.output.weights, r.output.soft_labels);
  return r;
}

/// One refined update followed by a single SGD step on the combined loss.
/// Post-step validation loss costs an extra forward pass and is only
/// computed when requested.
inline SaflexStepResult saflex_step(const ModelParams& params, const Batch& train, const Batch& aug, const Batch& val,
                                    double lr, const SaflexConfig& cfg, StepKey key = {},
                                    bool eval_val_after = false) {
  if (!(lr >= 0.0)) throw DomainError("saflex_step: learning rate must be >= 0");
  SaflexGradient g = saflex_gradient(params, train, aug, val, cfg, key);
  SaflexStepResult r{sgd_step(params, g.grad, lr), std::move(g.output), g.metrics};
  if (eval_val_after) r.metrics.val_loss_after = mean_ce(r.params, val);
  return r;
}

} // namespace saflex
