#pragma once

// Dataset generation and ingestion: synthetic 2-D tasks, schema-driven CSV,
// a raw uint8 image format, z-score normalization and stratified splits.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "saflex/augment.hpp"
#include "saflex/errors.hpp"
#include "saflex/losses.hpp"
#include "saflex/matrix.hpp"
#include "saflex/nn.hpp"
#include "saflex/random.hpp"

namespace saflex {

enum class ColumnKind { kContinuous, kCategorical };

/// One source column and the feature columns it occupies in X.
struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  std::size_t cardinality = 1;     // categorical only
  std::vector<std::string> levels; // optional names for categorical levels
  std::size_t begin = 0;           // first feature column in X
  std::size_t width() const { return kind == ColumnKind::kCategorical ? cardinality : 1; }
};

struct Dataset {
  Matrix X;
  std::vector<std::size_t> labels;
  std::size_t K = 0;
  std::vector<ColumnInfo> schema;
  std::string label_name = "label";
  std::vector<std::string> label_levels;

  std::size_t size() const { return X.rows(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d = *this;
    d.X = X.gather_rows(idx);
    d.labels.clear();
    for (std::size_t i : idx) d.labels.push_back(labels[i]);
    return d;
  }

  Batch as_batch() const { return Batch{X, labels, std::nullopt, std::nullopt}; }

  Batch batch(std::span<const std::size_t> idx) const {
    Batch b;
    b.X = X.gather_rows(idx);
    for (std::size_t i : idx) b.labels.push_back(labels[i]);
    return b;
  }

  /// Replacement units for tabular CutMix: one per source column.
  std::vector<FeatureGroup> feature_groups() const {
    std::vector<FeatureGroup> g;
    for (const ColumnInfo& c : schema) g.push_back({c.begin, c.width()});
    return g;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> n(K, 0);
    for (std::size_t y : labels) ++n[y];
    return n;
  }
};

inline std::vector<ColumnInfo> continuous_schema(std::size_t d, const std::string& prefix = "x") {
  std::vector<ColumnInfo> s;
  for (std::size_t c = 0; c < d; ++c) s.push_back({prefix + std::to_string(c), ColumnKind::kContinuous, 1, {}, c});
  return s;
}

/// Balanced classes; sample i belongs to class i % means.size() and is drawn
/// from N(mean_c, sigma^2 I).
inline Dataset gen_gaussian_classes(std::size_t n, const std::vector<std::vector<double>>& means, double sigma,
                                    std::uint64_t seed) {
  if (n < 2) throw DomainError("gen_two_gaussians: n must be >= 2");
  if (means.size() < 2) throw DomainError("gen_two_gaussians: need at least two class means");
  if (!(sigma >= 0.0)) throw DomainError("gen_two_gaussians: sigma must be >= 0");
  const std::size_t d = means.front().size();
  for (const auto& m : means)
    if (m.size() != d) throw ShapeError("gen_two_gaussians: means differ in dimension");
  Engine eng = make_engine(seed, {stream_tag::kData});
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.K = means.size();
  ds.X = Matrix(n, d);
  ds.schema = continuous_schema(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % ds.K;
    ds.labels.push_back(c);
    for (std::size_t j = 0; j < d; ++j) ds.X(i, j) = means[c][j] + sigma * normal(eng);
  }
  return ds;
}

inline Dataset gen_two_gaussians(std::size_t n, double sigma, std::uint64_t seed, double offset = 1.0) {
  return gen_gaussian_classes(n, {{-offset, -offset}, {offset, offset}}, sigma, seed);
}

/// Two interleaved half circles with isotropic Gaussian noise.
inline Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw DomainError("gen_two_moons: n must be >= 2");
  if (!(noise >= 0.0)) throw DomainError("gen_two_moons: noise must be >= 0");
  Engine eng = make_engine(seed, {stream_tag::kData});
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.K = 2;
  ds.X = Matrix(n, 2);
  ds.schema = continuous_schema(2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 2;
    const double t = angle(eng);
    double x = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    ds.labels.push_back(c);
    ds.X(i, 0) = x + noise * normal(eng);
    ds.X(i, 1) = y + noise * normal(eng);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Schema + CSV

/// Schema file: one line per column, `name,kind[,cardinality[,level...]]`,
/// kind in {continuous, categorical, label}. Blank lines and lines starting
/// with '#' are ignored.
struct SchemaEntry {
  std::string name;
  std::string kind;
  std::size_t cardinality = 0;
  std::vector<std::string> levels;
};

namespace detail {
inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  return s;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline bool parse_index(const std::string& s, std::size_t& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

/// Level index of `value` for a categorical/label column.
inline std::size_t category_index(const SchemaEntry& col, const std::string& value, std::size_t line) {
  if (!col.levels.empty()) {
    auto it = std::find(col.levels.begin(), col.levels.end(), value);
    if (it != col.levels.end()) return static_cast<std::size_t>(it - col.levels.begin());
  } else {
    std::size_t idx;
    if (parse_index(value, idx) && (col.cardinality == 0 || idx < col.cardinality)) return idx;
  }
  throw FormatError("line " + std::to_string(line) + ": column '" + col.name + "': unknown category '" + value +
                    "'");
}
} // namespace detail

inline std::vector<SchemaEntry> parse_schema(std::istream& is) {
  std::vector<SchemaEntry> out;
  std::string line;
  std::size_t ln = 0;
  std::size_t labels = 0;
  while (std::getline(is, line)) {
    ++ln;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_commas(line);
    for (auto& s : f) s = detail::trim(s);
    if (f.size() < 2) throw FormatError("schema line " + std::to_string(ln) + ": expected name,kind");
    SchemaEntry e{f[0], f[1], 0, {}};
    if (e.kind != "continuous" && e.kind != "categorical" && e.kind != "label")
      throw FormatError("schema line " + std::to_string(ln) + ": unknown kind '" + e.kind + "'");
    if (f.size() >= 3 && !f[2].empty() && !detail::parse_index(f[2], e.cardinality))
      throw FormatError("schema line " + std::to_string(ln) + ": bad cardinality '" + f[2] + "'");
    for (std::size_t k = 3; k < f.size(); ++k) e.levels.push_back(f[k]);
    if (!e.levels.empty() && e.levels.size() != e.cardinality)
      throw FormatError("schema line " + std::to_string(ln) + ": level count != cardinality");
    if (e.kind == "categorical" && e.cardinality == 0)
      throw FormatError("schema line " + std::to_string(ln) + ": categorical column needs a cardinality");
    labels += e.kind == "label" ? 1 : 0;
    out.push_back(std::move(e));
  }
  if (labels != 1) throw FormatError("schema: exactly one label column required");
  return out;
}

/// Per-column z-score statistics for continuous features.
struct Standardizer {
  std::vector<std::size_t> columns;
  std::vector<double> mean, scale;

  static Standardizer fit(const Dataset& ds) {
    Standardizer s;
    for (const ColumnInfo& c : ds.schema) {
      if (c.kind != ColumnKind::kContinuous) continue;
      double m = 0.0, v = 0.0;
      const double n = static_cast<double>(ds.size());
      for (std::size_t i = 0; i < ds.size(); ++i) m += ds.X(i, c.begin);
      m = ds.size() ? m / n : 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) v += (ds.X(i, c.begin) - m) * (ds.X(i, c.begin) - m);
      const double sd = ds.size() ? std::sqrt(v / n) : 0.0;
      s.columns.push_back(c.begin);
      s.mean.push_back(m);
      s.scale.push_back(sd > 0.0 ? sd : 1.0);
    }
    return s;
  }

  void apply(Dataset& ds) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      for (std::size_t i = 0; i < ds.size(); ++i) ds.X(i, columns[j]) = (ds.X(i, columns[j]) - mean[j]) / scale[j];
  }
};

/// Reads a headed CSV against a schema. Categorical columns are one-hot
/// expanded; the label column maps to [0, K). With `normalize`, continuous
/// columns are z-scored using this file's own statistics.
inline Dataset load_csv(const std::string& path, const std::string& schema_path, bool normalize = true) {
  std::ifstream ss(schema_path);
  if (!ss) throw FormatError("cannot open schema " + schema_path);
  std::vector<SchemaEntry> schema = parse_schema(ss);
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path + ": missing header row");
  auto header = detail::split_commas(line);
  for (auto& h : header) h = detail::trim(h);

  std::vector<std::size_t> src(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), schema[c].name);
    if (it == header.end()) throw FormatError("schema error: column '" + schema[c].name + "' missing from " + path);
    src[c] = static_cast<std::size_t>(it - header.begin());
  }
  for (const std::string& h : header)
    if (std::none_of(schema.begin(), schema.end(), [&](const SchemaEntry& e) { return e.name == h; }))
      throw FormatError("schema error: column '" + h + "' not described by " + schema_path);

  Dataset ds;
  std::size_t width = 0;
  const SchemaEntry* label_col = nullptr;
  for (const SchemaEntry& e : schema) {
    if (e.kind == "label") {
      label_col = &e;
      ds.label_name = e.name;
      ds.label_levels = e.levels;
      continue;
    }
    ColumnInfo ci{e.name, e.kind == "categorical" ? ColumnKind::kCategorical : ColumnKind::kContinuous,
                  e.kind == "categorical" ? e.cardinality : 1, e.levels, width};
    width += ci.width();
    ds.schema.push_back(ci);
  }

  std::vector<double> values;
  std::size_t ln = 1, rows = 0, max_label = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_commas(line);
    if (f.size() != header.size())
      throw FormatError(path + " line " + std::to_string(ln) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
    std::vector<double> row(width, 0.0);
    std::size_t feat = 0;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const SchemaEntry& e = schema[c];
      const std::string v = detail::trim(f[src[c]]);
      if (e.kind == "label") {
        std::size_t y = detail::category_index(e, v, ln);
        max_label = std::max(max_label, y);
        ds.labels.push_back(y);
        continue;
      }
      const ColumnInfo& ci = ds.schema[feat++];
      if (ci.kind == ColumnKind::kContinuous) {
        double x;
        if (!detail::parse_double(v, x) || !std::isfinite(x))
          throw FormatError(path + " line " + std::to_string(ln) + ": column '" + e.name + "': bad number '" + v +
                            "'");
        row[ci.begin] = x;
      } else {
        row[ci.begin + detail::category_index(e, v, ln)] = 1.0;
      }
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  ds.X = Matrix(rows, width, std::move(values));
  ds.K = label_col->cardinality ? label_col->cardinality : (rows ? max_label + 1 : 0);
  if (normalize) Standardizer::fit(ds).apply(ds);
  return ds;
}

/// Writes features (categorical columns collapsed back to their level) and
/// labels as CSV plus a matching schema file.
inline void write_csv(const Dataset& ds, const std::string& path, const std::string& schema_path) {
  std::ofstream sch(schema_path);
  if (!sch) throw FormatError("cannot open " + schema_path + " for writing");
  for (const ColumnInfo& c : ds.schema) {
    if (c.kind == ColumnKind::kContinuous) {
      sch << c.name << ",continuous\n";
    } else {
      sch << c.name << ",categorical," << c.cardinality;
      for (const auto& l : c.levels) sch << ',' << l;
      sch << '\n';
    }
  }
  sch << ds.label_name << ",label," << ds.K;
  for (const auto& l : ds.label_levels) sch << ',' << l;
  sch << '\n';

  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  for (const ColumnInfo& c : ds.schema) os << c.name << ',';
  os << ds.label_name << '\n';
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (const ColumnInfo& c : ds.schema) {
      if (c.kind == ColumnKind::kContinuous) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, ds.X(i, c.begin));
        os.write(buf, p - buf);
      } else {
        std::size_t lvl = 0;
        for (std::size_t k = 0; k < c.cardinality; ++k)
          if (ds.X(i, c.begin + k) > 0.5) lvl = k;
        if (c.levels.empty())
          os << lvl;
        else
          os << c.levels[lvl];
      }
      os << ',';
    }
    if (ds.label_levels.empty())
      os << ds.labels[i];
    else
      os << ds.label_levels[ds.labels[i]];
    os << '\n';
  }
  if (!os) throw FormatError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Raw images: "SFIM" | u32 count | u32 height | u32 width | u32 K |
// count*height*width u8 pixels (row-major, image after image) | count u8 labels.

inline constexpr char kImageMagic[4] = {'S', 'F', 'I', 'M'};

inline void write_images_raw(const std::string& path, std::span<const std::uint8_t> pixels,
                             std::span<const std::uint8_t> labels, std::uint32_t height, std::uint32_t width,
                             std::uint32_t K) {
  if (pixels.size() != labels.size() * height * width) throw ShapeError("write_images_raw: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(kImageMagic, 4);
  detail::put_u32(os, static_cast<std::uint32_t>(labels.size()));
  detail::put_u32(os, height);
  detail::put_u32(os, width);
  detail::put_u32(os, K);
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!os) throw FormatError("write failed: " + path);
}

inline Dataset load_images_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kImageMagic)) throw FormatError(path + ": bad magic");
  const std::uint32_t count = detail::get_u32(is), h = detail::get_u32(is), w = detail::get_u32(is),
                      K = detail::get_u32(is);
  const std::size_t npx = static_cast<std::size_t>(count) * h * w;
  std::vector<std::uint8_t> px(npx), lab(count);
  if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(npx)) ||
      !is.read(reinterpret_cast<char*>(lab.data()), count))
    throw FormatError(path + ": truncated payload (header declares " + std::to_string(count) + " images)");
  Dataset ds;
  ds.K = K;
  ds.X = Matrix(count, static_cast<std::size_t>(h) * w);
  for (std::size_t j = 0; j < npx; ++j) ds.X.data()[j] = px[j] / 255.0;
  for (std::uint8_t y : lab) {
    if (y >= K) throw FormatError(path + ": label " + std::to_string(y) + " >= K");
    ds.labels.push_back(y);
  }
  ds.schema = continuous_schema(static_cast<std::size_t>(h) * w, "px");
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train = 0.5, val = 0.25, test = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train >= 0 && val >= 0 && test >= 0)) throw ConfigError("split fractions must be >= 0");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (!(train > 0 && val > 0 && test > 0)) throw ConfigError("split fractions must be positive");
  }
};

struct Splits {
  Dataset train, val, test;
  std::array<std::vector<std::size_t>, 3> indices; // into the source dataset, ascending
  std::vector<std::string> warnings;
};

/// Stratified, seed-deterministic partition. Each class is divided by the
/// largest-remainder method so every split's per-class count is within one
/// sample of its exact share.
inline Splits split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::array<double, 3> frac{spec.train, spec.val, spec.test};
  const std::array<const char*, 3> names{"train", "val", "test"};
  std::vector<std::vector<std::size_t>> by_class(ds.K);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  Splits out;
  for (std::size_t c = 0; c < ds.K; ++c) {
    auto& idx = by_class[c];
    Engine eng = make_engine(spec.seed, {stream_tag::kSplit, c});
    std::shuffle(idx.begin(), idx.end(), eng);
    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> cnt{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = frac[s] * n;
      cnt[s] = static_cast<std::size_t>(std::floor(exact));
      rem[s] = exact - std::floor(exact);
      assigned += cnt[s];
    }
    while (assigned < idx.size()) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[s] > rem[best]) best = s;
      ++cnt[best];
      rem[best] = -1.0;
      ++assigned;
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      out.indices[s].insert(out.indices[s].end(), idx.begin() + pos, idx.begin() + pos + cnt[s]);
      pos += cnt[s];
    }
  }
  // Every split gets at least one sample when the dataset allows it.
  for (int s = 0; s < 3; ++s) {
    if (!out.indices[s].empty()) continue;
    int donor = 0;
    for (int t = 1; t < 3; ++t)
      if (out.indices[t].size() > out.indices[donor].size()) donor = t;
    if (out.indices[donor].size() < 2) continue;
    out.indices[s].push_back(out.indices[donor].back());
    out.indices[donor].pop_back();
  }
  for (int s = 0; s < 3; ++s) {
    std::sort(out.indices[s].begin(), out.indices[s].end());
    std::vector<std::size_t> seen(ds.K, 0);
    for (std::size_t i : out.indices[s]) ++seen[ds.labels[i]];
    for (std::size_t c = 0; c < ds.K; ++c)
      if (!by_class[c].empty() && seen[c] == 0)
        out.warnings.push_back(std::string("stratification: ") + names[s] + " split has no samples of class " +
                               std::to_string(c));
  }
  out.train = ds.subset(out.indices[0]);
  out.val = ds.subset(out.indices[1]);
  out.test = ds.subset(out.indices[2]);
  return out;
}

/// Z-scores continuous columns of all three splits with training statistics.
inline void normalize_with_train_stats(Splits& s) {
  Standardizer st = Standardizer::fit(s.train);
  st.apply(s.train);
  st.apply(s.val);
  st.apply(s.test);
}

} // namespace saflex
