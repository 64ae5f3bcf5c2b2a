#pragma once

// Upstream augmenters. Each takes a batch by const reference and returns a
// new batch of the same size and feature width.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "saflex/errors.hpp"
#include "saflex/losses.hpp"
#include "saflex/matrix.hpp"
#include "saflex/random.hpp"

namespace saflex {

enum class AugmentKind { kGaussianJitter, kCropFlip, kMixup, kCutmixTabular, kLabelNoise };

inline std::string_view to_string(AugmentKind k) {
  switch (k) {
  case AugmentKind::kGaussianJitter: return "gaussian_jitter";
  case AugmentKind::kCropFlip: return "crop_flip";
  case AugmentKind::kMixup: return "mixup";
  case AugmentKind::kCutmixTabular: return "cutmix_tabular";
  case AugmentKind::kLabelNoise: return "label_noise";
  }
  return "?";
}

inline AugmentKind parse_augment_kind(std::string_view s) {
  for (AugmentKind k : {AugmentKind::kGaussianJitter, AugmentKind::kCropFlip, AugmentKind::kMixup,
                        AugmentKind::kCutmixTabular, AugmentKind::kLabelNoise})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown augmenter kind '" + std::string(s) + "'");
}

struct AugmenterSpec {
  AugmentKind kind = AugmentKind::kGaussianJitter;
  double sigma = 0.1;       // gaussian_jitter
  std::size_t pad = 2;      // crop_flip
  double flip_prob = 0.5;   // crop_flip
  double mixup_alpha = 1.0; // mixup
  double p_replace = 0.3;   // cutmix_tabular
  double rho = 0.1;         // label_noise
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0,1]");
    };
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (!(mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be > 0");
    prob(flip_prob, "flip_prob");
    prob(p_replace, "p_replace");
    prob(rho, "rho");
  }
};

/// Contiguous run of feature columns replaced as a unit (a one-hot group).
struct FeatureGroup {
  std::size_t begin = 0;
  std::size_t count = 1;
};

inline Batch gaussian_jitter(const Batch& in, double sigma, Engine& eng) {
  if (!(sigma >= 0.0)) throw DomainError("gaussian_jitter: sigma must be >= 0");
  Batch out = in;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : out.X.data()) v += noise(eng);
  return out;
}

/// Each feature group independently takes the values of a uniformly chosen
/// other row with probability p_replace. Labels stay with the base row.
inline Batch cutmix_tabular(const Batch& in, double p_replace, Engine& eng,
                            std::vector<FeatureGroup> groups = {}) {
  if (!(p_replace >= 0.0 && p_replace <= 1.0)) throw DomainError("cutmix_tabular: p_replace must be in [0,1]");
  Batch out = in;
  const std::size_t B = in.size();
  if (B < 2 || p_replace == 0.0) return out;
  if (groups.empty())
    for (std::size_t c = 0; c < in.X.cols(); ++c) groups.push_back({c, 1});
  std::bernoulli_distribution replace(p_replace);
  std::uniform_int_distribution<std::size_t> donor_dist(0, B - 2);
  for (std::size_t i = 0; i < B; ++i) {
    for (const FeatureGroup& g : groups) {
      if (!replace(eng)) continue;
      std::size_t donor = donor_dist(eng);
      if (donor >= i) ++donor;
      for (std::size_t c = g.begin; c < g.begin + g.count; ++c) out.X(i, c) = in.X(donor, c);
    }
  }
  return out;
}

/// Convex combination of row i with row perm[i] at weight lambda; soft labels
/// mix the same way. The hard label follows the dominant partner.
inline Batch mixup_with(const Batch& in, double lambda, const std::vector<std::size_t>& perm, std::size_t K) {
  if (perm.size() != in.size()) throw ShapeError("mixup: permutation size != batch size");
  Batch out = in;
  Matrix y = in.targets(K);
  Matrix mixed(in.size(), K);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t j = perm[i];
    for (std::size_t c = 0; c < in.X.cols(); ++c) out.X(i, c) = lambda * in.X(i, c) + (1.0 - lambda) * in.X(j, c);
    for (std::size_t k = 0; k < K; ++k) mixed(i, k) = lambda * y(i, k) + (1.0 - lambda) * y(j, k);
    out.labels[i] = lambda >= 0.5 ? in.labels[i] : in.labels[j];
  }
  out.soft_labels = std::move(mixed);
  return out;
}

inline Batch mixup(const Batch& in, double alpha, std::size_t K, Engine& eng) {
  if (!(alpha > 0.0)) throw DomainError("mixup: alpha must be > 0");
  std::gamma_distribution<double> ga(alpha, 1.0);
  const double a = ga(eng), b = ga(eng);
  const double lambda = (a + b) > 0.0 ? a / (a + b) : 0.5;
  std::vector<std::size_t> perm(in.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), eng);
  return mixup_with(in, lambda, perm, K);
}

/// Side length of square single-channel images stored one per row.
inline std::size_t image_side(const Matrix& X) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(X.cols()))));
  if (side * side != X.cols()) throw ShapeError("crop_flip: rows are not square images");
  return side;
}

/// Zero-pad by `pad`, crop back at offset (dy, dx) in [0, 2*pad], optionally
/// mirror horizontally.
inline void crop_flip_row(std::span<const double> src, std::span<double> dst, std::size_t side, std::size_t pad,
                          std::size_t dy, std::size_t dx, bool flip) {
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      // Position in the padded image, then back to source coordinates.
      const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r + dy) - static_cast<std::ptrdiff_t>(pad);
      const std::size_t cc = flip ? side - 1 - c : c;
      const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(cc + dx) - static_cast<std::ptrdiff_t>(pad);
      const bool inside = sr >= 0 && sc >= 0 && sr < static_cast<std::ptrdiff_t>(side) &&
                          sc < static_cast<std::ptrdiff_t>(side);
      dst[r * side + c] = inside ? src[static_cast<std::size_t>(sr) * side + static_cast<std::size_t>(sc)] : 0.0;
    }
  }
}

inline Batch crop_flip(const Batch& in, std::size_t pad, Engine& eng, double flip_prob = 0.5) {
  const std::size_t side = image_side(in.X);
  Batch out = in;
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  std::bernoulli_distribution flip(flip_prob);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t dy = off(eng), dx = off(eng);
    crop_flip_row(in.X.row(i), out.X.row(i), side, pad, dy, dx, flip(eng));
  }
  return out;
}

struct NoisyBatch {
  Batch batch;
  std::vector<std::uint8_t> corrupted; // 1 where the label was replaced
};

/// Each label is replaced, with probability rho, by a uniformly chosen
/// different class.
inline NoisyBatch label_noise_masked(const Batch& in, double rho, std::size_t K, Engine& eng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("label_noise: rho must be in [0,1]");
  if (K < 2 && rho > 0.0) throw DomainError("label_noise: needs K >= 2");
  NoisyBatch out{in, std::vector<std::uint8_t>(in.size(), 0)};
  if (rho == 0.0) return out;
  std::bernoulli_distribution hit(rho);
  std::uniform_int_distribution<std::size_t> other(0, K - 2);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!hit(eng)) continue;
    std::size_t y = other(eng);
    if (y >= in.labels[i]) ++y;
    out.batch.labels[i] = y;
    out.corrupted[i] = 1;
    if (out.batch.soft_labels) {
      for (double& v : out.batch.soft_labels->row(i)) v = 0.0;
      (*out.batch.soft_labels)(i, y) = 1.0;
    }
  }
  return out;
}

inline Batch label_noise(const Batch& in, double rho, std::size_t K, Engine& eng) {
  return label_noise_masked(in, rho, K, eng).batch;
}

/// Ordered stack of augmenters applied to each training batch.
struct AugmentPipeline {
  std::vector<AugmenterSpec> stages;
  std::vector<FeatureGroup> groups; // cutmix replacement units; empty = per column
};

inline NoisyBatch apply_pipeline(const AugmentPipeline& p, const Batch& in, std::size_t K, Engine& eng) {
  NoisyBatch cur{in, std::vector<std::uint8_t>(in.size(), 0)};
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const AugmenterSpec& st = p.stages[s];
    st.validate();
    Engine stage_eng(derive_key(eng(), {st.seed, s}));
    switch (st.kind) {
    case AugmentKind::kGaussianJitter: cur.batch = gaussian_jitter(cur.batch, st.sigma, stage_eng); break;
    case AugmentKind::kCropFlip: cur.batch = crop_flip(cur.batch, st.pad, stage_eng, st.flip_prob); break;
    case AugmentKind::kMixup: cur.batch = mixup(cur.batch, st.mixup_alpha, K, stage_eng); break;
    case AugmentKind::kCutmixTabular: cur.batch = cutmix_tabular(cur.batch, st.p_replace, stage_eng, p.groups); break;
    case AugmentKind::kLabelNoise: {
      NoisyBatch nb = label_noise_masked(cur.batch, st.rho, K, stage_eng);
      for (std::size_t i = 0; i < nb.corrupted.size(); ++i) cur.corrupted[i] |= nb.corrupted[i];
      cur.batch = std::move(nb.batch);
      break;
    }
    }
  }
  return cur;
}

} // namespace saflex
