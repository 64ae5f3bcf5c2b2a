#pragma once

// Dense ReLU MLP classifier: forward pass, reverse-mode parameter gradients
// and forward-mode logit JVPs over a flat parameter vector.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "saflex/errors.hpp"
#include "saflex/matrix.hpp"
#include "saflex/parallel.hpp"
#include "saflex/random.hpp"

namespace saflex {

/// Layer widths, input first and class count last: {d, h1, ..., K}.
/// Every layer but the last is followed by a ReLU.
struct MlpShape {
  std::vector<std::size_t> dims;

  std::size_t layers() const { return dims.size() < 2 ? 0 : dims.size() - 1; }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
  std::size_t in(std::size_t l) const { return dims[l]; }
  std::size_t out(std::size_t l) const { return dims[l + 1]; }

  std::size_t parameter_count() const {
    std::size_t m = 0;
    for (std::size_t l = 0; l < layers(); ++l) m += (in(l) + 1) * out(l);
    return m;
  }

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Flat parameter vector with layer metadata. Layer l occupies
/// [offset(l), offset(l) + out*in) for its row-major weight (out x in),
/// followed by out bias entries.
class ParamVector {
public:
  ParamVector() = default;
  explicit ParamVector(MlpShape shape) : shape_(std::move(shape)) {
    if (shape_.dims.size() < 2) throw ShapeError("MlpShape needs at least input and output dims");
    for (std::size_t d : shape_.dims)
      if (d == 0) throw ShapeError("MlpShape: zero-width layer");
    offsets_.resize(shape_.layers() + 1, 0);
    for (std::size_t l = 0; l < shape_.layers(); ++l)
      offsets_[l + 1] = offsets_[l] + (shape_.in(l) + 1) * shape_.out(l);
    data_.assign(offsets_.back(), 0.0);
  }

  const MlpShape& shape() const { return shape_; }
  std::size_t layers() const { return shape_.layers(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::span<double> weight(std::size_t l) {
    return {data_.data() + offsets_[l], shape_.in(l) * shape_.out(l)};
  }
  std::span<const double> weight(std::size_t l) const {
    return {data_.data() + offsets_[l], shape_.in(l) * shape_.out(l)};
  }
  std::span<double> bias(std::size_t l) {
    return {data_.data() + offsets_[l] + shape_.in(l) * shape_.out(l), shape_.out(l)};
  }
  std::span<const double> bias(std::size_t l) const {
    return {data_.data() + offsets_[l] + shape_.in(l) * shape_.out(l), shape_.out(l)};
  }

  double& w(std::size_t l, std::size_t o, std::size_t i) { return weight(l)[o * shape_.in(l) + i]; }
  double w(std::size_t l, std::size_t o, std::size_t i) const { return weight(l)[o * shape_.in(l) + i]; }

  bool same_shape(const ParamVector& other) const { return shape_ == other.shape_; }

  /// this += scale * other
  ParamVector& axpy(double scale, const ParamVector& other) {
    check(other, "axpy");
    for (std::size_t j = 0; j < data_.size(); ++j) data_[j] += scale * other.data_[j];
    return *this;
  }
  ParamVector& scale(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  double norm() const { return std::sqrt(saflex::dot(values(), values())); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void check(const ParamVector& other, const char* where) const {
    if (!same_shape(other)) throw ShapeError(std::string(where) + ": parameter shapes differ");
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  MlpShape shape_;
  std::vector<std::size_t> offsets_;
  std::vector<double> data_;
};

using ModelParams = ParamVector;
using ParamGrad = ParamVector;

inline double param_dot(const ParamGrad& a, const ParamGrad& b) {
  a.check(b, "param_dot");
  return dot(a.values(), b.values());
}

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline ModelParams init_params(const MlpShape& shape, std::uint64_t seed) {
  ModelParams p(shape);
  Engine eng = make_engine(seed, {stream_tag::kInit});
  for (std::size_t l = 0; l < p.layers(); ++l) {
    double limit = std::sqrt(6.0 / static_cast<double>(shape.in(l) + shape.out(l)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : p.weight(l)) v = dist(eng);
  }
  return p;
}

struct ForwardCache {
  /// acts[0] is the input; acts[l] (0 < l < L) the ReLU output of layer l-1.
  std::vector<Matrix> acts;
  /// Pre-activations of each layer; pre.back() holds the logits.
  std::vector<Matrix> pre;
  Matrix probs;

  const Matrix& logits() const { return pre.back(); }
  std::size_t batch() const { return probs.rows(); }
};

inline ForwardCache mlp_forward(const ModelParams& params, const Matrix& X) {
  const MlpShape& s = params.shape();
  if (X.cols() != s.input_dim()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(X.cols()) + " features, model expects " +
                     std::to_string(s.input_dim()));
  }
  const std::size_t L = s.layers(), B = X.rows();
  ForwardCache c;
  c.acts.reserve(L);
  c.pre.reserve(L);
  c.acts.push_back(X);
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix& a = c.acts.back();
    const std::size_t nin = s.in(l), nout = s.out(l);
    auto W = params.weight(l);
    auto b = params.bias(l);
    Matrix z(B, nout);
    parallel_for(B, [&](std::size_t i) {
      auto ai = a.row(i);
      auto zi = z.row(i);
      for (std::size_t o = 0; o < nout; ++o) {
        const double* wr = W.data() + o * nin;
        double acc = b[o];
        for (std::size_t j = 0; j < nin; ++j) acc += wr[j] * ai[j];
        zi[o] = acc;
      }
    });
    if (l + 1 < L) {
      Matrix h = z;
      for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
      c.pre.push_back(std::move(z));
      c.acts.push_back(std::move(h));
    } else {
      c.pre.push_back(std::move(z));
    }
  }
  c.probs = softmax_rows(c.pre.back());
  return c;
}

/// Gradient of a scalar loss whose logit-gradient is dlogits, summed over the
/// batch in row order.
inline ParamGrad mlp_backward(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits) {
  const MlpShape& s = params.shape();
  const std::size_t L = s.layers();
  if (dlogits.rows() != cache.batch() || dlogits.cols() != s.output_dim())
    throw ShapeError("mlp_backward: dlogits must be batch x K");
  ParamGrad g(s);
  Matrix delta = dlogits;
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& a = cache.acts[l];
    const std::size_t nin = s.in(l), nout = s.out(l), B = a.rows();
    auto gW = g.weight(l);
    auto gb = g.bias(l);
    for (std::size_t i = 0; i < B; ++i) {
      auto di = delta.row(i);
      auto ai = a.row(i);
      for (std::size_t o = 0; o < nout; ++o) {
        const double d = di[o];
        gb[o] += d;
        if (d == 0.0) continue;
        double* gr = gW.data() + o * nin;
        for (std::size_t j = 0; j < nin; ++j) gr[j] += d * ai[j];
      }
    }
    if (l == 0) break;
    auto W = params.weight(l);
    const Matrix& zprev = cache.pre[l - 1];
    Matrix next(B, nin);
    parallel_for(B, [&](std::size_t i) {
      auto di = delta.row(i);
      auto ni = next.row(i);
      for (std::size_t o = 0; o < nout; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        const double* wr = W.data() + o * nin;
        for (std::size_t j = 0; j < nin; ++j) ni[j] += d * wr[j];
      }
      auto zi = zprev.row(i);
      for (std::size_t j = 0; j < nin; ++j)
        if (zi[j] <= 0.0) ni[j] = 0.0;
    });
    delta = std::move(next);
  }
  return g;
}

/// Directional derivative of the logits of cache row `row` along `tangent`,
/// by propagating (value, tangent) pairs through the network once.
inline std::vector<double> jvp_logits(const ModelParams& params, const ForwardCache& cache, std::size_t row,
                                      const ParamGrad& tangent) {
  params.check(tangent, "jvp_logits");
  const MlpShape& s = params.shape();
  if (row >= cache.batch()) throw ShapeError("jvp_logits: row out of range");
  std::vector<double> da, dz;
  for (std::size_t l = 0; l < s.layers(); ++l) {
    const std::size_t nin = s.in(l), nout = s.out(l);
    auto a = cache.acts[l].row(row);
    auto W = params.weight(l);
    auto dW = tangent.weight(l);
    auto db = tangent.bias(l);
    dz.assign(nout, 0.0);
    for (std::size_t o = 0; o < nout; ++o) {
      const double* wr = W.data() + o * nin;
      const double* dwr = dW.data() + o * nin;
      double acc = db[o];
      for (std::size_t j = 0; j < nin; ++j) acc += dwr[j] * a[j];
      if (l > 0)
        for (std::size_t j = 0; j < nin; ++j) acc += wr[j] * da[j];
      dz[o] = acc;
    }
    if (l + 1 < s.layers()) {
      auto z = cache.pre[l].row(row);
      for (std::size_t o = 0; o < nout; ++o)
        if (z[o] <= 0.0) dz[o] = 0.0;
      da.swap(dz);
    }
  }
  return dz;
}

/// JVPs for every cached row, one row of the result per sample.
inline Matrix jvp_logits_batch(const ModelParams& params, const ForwardCache& cache, const ParamGrad& tangent) {
  Matrix u(cache.batch(), params.shape().output_dim());
  parallel_for(cache.batch(), [&](std::size_t i) {
    auto ui = jvp_logits(params, cache, i, tangent);
    std::copy(ui.begin(), ui.end(), u.row(i).begin());
  });
  return u;
}

inline std::vector<double> jvp_logits(const ModelParams& params, std::span<const double> x,
                                      const ParamGrad& tangent) {
  Matrix X(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return jvp_logits(params, mlp_forward(params, X), 0, tangent);
}

inline ModelParams sgd_step(const ModelParams& params, const ParamGrad& grad, double lr) {
  if (!(lr >= 0.0)) throw DomainError("sgd_step: learning rate must be >= 0");
  ModelParams next = params;
  next.axpy(-lr, grad);
  return next;
}

// Checkpoint layout (all little-endian):
//   "SFLX1" | u32 layer_count | (layer_count + 1) x u32 dims |
//   per layer: out*in f64 weights (row-major), out f64 biases.
namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  os.write(b.data(), 4);
}
inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  std::array<char, 8> b{};
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  os.write(b.data(), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("truncated file");
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[k]) << (8 * k);
  return v;
}
inline double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("truncated file");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
} // namespace detail

inline constexpr char kCheckpointMagic[5] = {'S', 'F', 'L', 'X', '1'};

inline void write_checkpoint(std::ostream& os, const ModelParams& p) {
  os.write(kCheckpointMagic, 5);
  detail::put_u32(os, static_cast<std::uint32_t>(p.layers()));
  for (std::size_t d : p.shape().dims) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : p.values()) detail::put_f64(os, v);
}

inline ModelParams read_checkpoint(std::istream& is) {
  char magic[5];
  if (!is.read(magic, 5) || !std::equal(magic, magic + 5, kCheckpointMagic))
    throw FormatError("checkpoint: bad magic");
  std::uint32_t L = detail::get_u32(is);
  if (L == 0 || L > 1024) throw FormatError("checkpoint: implausible layer count");
  MlpShape s;
  for (std::uint32_t l = 0; l <= L; ++l) s.dims.push_back(detail::get_u32(is));
  ModelParams p(s);
  for (double& v : p.values()) v = detail::get_f64(is);
  return p;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, p);
  if (!os) throw FormatError("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_checkpoint(is);
}

} // namespace saflex
