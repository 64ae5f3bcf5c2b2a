#pragma once

// Losses that are linear in per-sample weights and soft labels. Every
// reduction here is a weighted SUM over the batch; callers normalize weights.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saflex/errors.hpp"
#include "saflex/matrix.hpp"

namespace saflex {

struct Batch {
  Matrix X;
  std::vector<std::size_t> labels;
  std::optional<Matrix> soft_labels;
  std::optional<std::vector<double>> weights;

  std::size_t size() const { return X.rows(); }
  bool empty() const { return X.rows() == 0; }

  /// Soft labels if present, else one-hot rows of the hard labels.
  Matrix targets(std::size_t K) const {
    if (soft_labels) {
      if (soft_labels->cols() != K) throw ShapeError("Batch: soft label width != K");
      return *soft_labels;
    }
    Matrix t(size(), K);
    for (std::size_t i = 0; i < size(); ++i) {
      if (labels[i] >= K) throw DomainError("Batch: label " + std::to_string(labels[i]) + " >= K");
      t(i, labels[i]) = 1.0;
    }
    return t;
  }

  /// Explicit weights, or `fill` for every sample.
  std::vector<double> weights_or(double fill) const {
    return weights ? *weights : std::vector<double>(size(), fill);
  }

  void validate(std::size_t K) const {
    if (labels.size() != X.rows()) throw ShapeError("Batch: label count != rows");
    for (std::size_t y : labels)
      if (y >= K) throw DomainError("Batch: label out of range");
    if (soft_labels) {
      if (soft_labels->rows() != X.rows() || soft_labels->cols() != K)
        throw ShapeError("Batch: soft labels must be B x K");
      for (std::size_t i = 0; i < soft_labels->rows(); ++i) {
        double s = 0.0;
        for (double v : soft_labels->row(i)) {
          if (v < 0.0) throw DomainError("Batch: negative soft label");
          s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw DomainError("Batch: soft label row does not sum to 1");
      }
    }
    if (weights) {
      if (weights->size() != X.rows()) throw ShapeError("Batch: weight count != rows");
      for (double w : *weights)
        if (!(w >= 0.0 && w <= 1.0)) throw DomainError("Batch: weight outside [0,1]");
    }
  }

  Batch subset(std::span<const std::size_t> idx) const {
    Batch b;
    b.X = X.gather_rows(idx);
    b.labels.reserve(idx.size());
    for (std::size_t i : idx) b.labels.push_back(labels[i]);
    if (soft_labels) b.soft_labels = soft_labels->gather_rows(idx);
    if (weights) {
      b.weights.emplace();
      for (std::size_t i : idx) b.weights->push_back((*weights)[i]);
    }
    return b;
  }
};

/// -sum_i w_i sum_k y_ik log p_ik
inline double weighted_soft_ce(const Matrix& probs, std::span<const double> weights, const Matrix& soft_labels) {
  require_same_shape(probs, soft_labels, "weighted_soft_ce");
  if (weights.size() != probs.rows()) throw ShapeError("weighted_soft_ce: weight count != rows");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      if (!(p > 0.0)) throw DomainError("weighted_soft_ce: nonpositive probability");
      row += soft_labels(i, k) * std::log(p);
    }
    total -= weights[i] * row;
  }
  return total;
}

/// Same loss from logits via log-sum-exp; safe where softmax underflows.
inline double weighted_soft_ce_logits(const Matrix& logits, std::span<const double> weights,
                                      const Matrix& soft_labels) {
  require_same_shape(logits, soft_labels, "weighted_soft_ce_logits");
  if (weights.size() != logits.rows()) throw ShapeError("weighted_soft_ce_logits: weight count != rows");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    double mx = z[argmax(z)];
    double se = 0.0;
    for (double v : z) se += std::exp(v - mx);
    const double lse = mx + std::log(se);
    double row = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) row += soft_labels(i, k) * (z[k] - lse);
    total -= weights[i] * row;
  }
  return total;
}

/// Row i = w_i (p_i - y_i): the logit gradient of weighted_soft_ce for
/// soft labels on the simplex.
inline Matrix ce_grad_logits(const Matrix& probs, std::span<const double> weights, const Matrix& soft_labels) {
  require_same_shape(probs, soft_labels, "ce_grad_logits");
  if (weights.size() != probs.rows()) throw ShapeError("ce_grad_logits: weight count != rows");
  Matrix g(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t k = 0; k < probs.cols(); ++k) g(i, k) = weights[i] * (probs(i, k) - soft_labels(i, k));
  return g;
}

// ---------------------------------------------------------------------------
// Contrastive objectives over B proxy classes.

struct ContrastiveBatch {
  Matrix anchors;  // B x e, rows unit norm
  Matrix partners; // B x e, rows unit norm; partners[i] is the positive of anchors[i]
  double temperature = 0.07;
  std::optional<std::vector<double>> weights;
  std::optional<Matrix> proxy_labels; // B x B, rows on the simplex

  std::size_t size() const { return anchors.rows(); }

  void validate() const {
    require_same_shape(anchors, partners, "ContrastiveBatch");
    if (!(temperature > 0.0)) throw DomainError("ContrastiveBatch: temperature must be > 0");
    for (const Matrix* m : {&anchors, &partners}) {
      for (std::size_t i = 0; i < m->rows(); ++i) {
        double n = std::sqrt(dot(m->row(i), m->row(i)));
        if (std::abs(n - 1.0) > 1e-9) throw DomainError("ContrastiveBatch: embedding row not L2-normalized");
      }
    }
    if (weights && weights->size() != size()) throw ShapeError("ContrastiveBatch: weight count != B");
    if (proxy_labels && (proxy_labels->rows() != size() || proxy_labels->cols() != size()))
      throw ShapeError("ContrastiveBatch: proxy labels must be B x B");
  }
};

/// Scales each row to unit L2 norm.
inline Matrix l2_normalize_rows(Matrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double n = std::sqrt(dot(r, r));
    if (n > 0.0)
      for (double& v : r) v /= n;
  }
  return m;
}

/// S_ij = <anchor_i, partner_j> / temperature
inline Matrix similarity_logits(const ContrastiveBatch& cb) {
  const std::size_t B = cb.size();
  Matrix s(B, B);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) s(i, j) = dot(cb.anchors.row(i), cb.partners.row(j)) / cb.temperature;
  return s;
}

namespace detail {
inline double log_sum_exp(std::span<const double> z) {
  double mx = z[argmax(z)];
  double se = 0.0;
  for (double v : z) se += std::exp(v - mx);
  return mx + std::log(se);
}
} // namespace detail

/// InfoNCE with the other B-1 partners as in-batch negatives, summed over anchors.
inline double infonce_loss(const ContrastiveBatch& cb) {
  if (cb.size() == 0) throw DomainError("infonce_loss: empty batch");
  cb.validate();
  Matrix s = similarity_logits(cb);
  double total = 0.0;
  for (std::size_t i = 0; i < cb.size(); ++i) total += detail::log_sum_exp(s.row(i)) - s(i, i);
  return total;
}

/// Weighted soft-label symmetric contrastive loss:
///   sum_i w_i sum_j y_ij [ -log softmax_j(S_i.) - log softmax_j(S_.i) ]
/// With y = I and w = 1 this is the two-directional CLIP objective.
inline double weighted_soft_clip(const ContrastiveBatch& cb) {
  cb.validate();
  const std::size_t B = cb.size();
  if (B == 0) throw DomainError("weighted_soft_clip: empty batch");
  Matrix s = similarity_logits(cb);
  std::vector<double> row_lse(B), col_lse(B), col(B);
  for (std::size_t i = 0; i < B; ++i) {
    row_lse[i] = detail::log_sum_exp(s.row(i));
    for (std::size_t j = 0; j < B; ++j) col[j] = s(j, i);
    col_lse[i] = detail::log_sum_exp(col);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double w = cb.weights ? (*cb.weights)[i] : 1.0;
    double row = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      const double y = cb.proxy_labels ? (*cb.proxy_labels)(i, j) : (i == j ? 1.0 : 0.0);
      if (y == 0.0) continue;
      row += y * ((row_lse[i] - s(i, j)) + (col_lse[i] - s(j, i)));
    }
    total += w * row;
  }
  return total;
}

} // namespace saflex
