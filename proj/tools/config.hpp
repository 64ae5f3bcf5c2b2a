#pragma once

// JSON run configuration for the command-line tool. Every key has a default
// and unknown keys are rejected, so `--print-config` is the full reference.

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "saflex/data.hpp"
#include "saflex/oracle.hpp"
#include "saflex/trainer.hpp"

namespace saflex::cli {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string kind = "two_gaussians"; // two_gaussians | two_moons | csv | images
  std::size_t n = 2000;
  double sigma = 1.0;  // two_gaussians: class spread
  double offset = 1.0; // two_gaussians: means at +-(offset, offset)
  double noise = 0.2;  // two_moons
  std::uint64_t seed = 0;
  std::string path;   // csv | images
  std::string schema; // csv
  bool normalize = true;
};

struct Config {
  DataConfig data;
  SplitSpec split;
  RunConfig run;
  std::string output_dir = "saflex_out";
  oracle::CheckConfig oracle;
};

namespace detail {

inline std::string constraint_name(oracle::WeightConstraint c) {
  return c == oracle::WeightConstraint::kSumToOne ? "sum_to_one" : "none";
}

inline oracle::WeightConstraint parse_constraint(const std::string& s) {
  if (s == "none") return oracle::WeightConstraint::kNone;
  if (s == "sum_to_one") return oracle::WeightConstraint::kSumToOne;
  throw ConfigError("oracle.constraint: expected none or sum_to_one, got '" + s + "'");
}

inline Json stage_json(const AugmenterSpec& s) {
  return Json{{"kind", std::string(to_string(s.kind))}, {"sigma", s.sigma},       {"pad", s.pad},
              {"flip_prob", s.flip_prob},               {"mixup_alpha", s.mixup_alpha}, {"p_replace", s.p_replace},
              {"rho", s.rho},                           {"seed", s.seed}};
}

/// Reads keys of one object into typed fields, rejecting anything unread.
class Section {
public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + it->type_name() + ")");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + (path_ == "config" ? it.key() : path_ + "." + it.key()) + "'");
  }

private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

} // namespace detail

inline Json to_json(const Config& c) {
  Json stages = Json::array();
  for (const auto& s : c.run.augment.stages) stages.push_back(detail::stage_json(s));
  const auto& o = c.run.optimizer;
  const auto& q = c.oracle;
  return Json{
      {"data",
       {{"kind", c.data.kind},
        {"n", c.data.n},
        {"sigma", c.data.sigma},
        {"offset", c.data.offset},
        {"noise", c.data.noise},
        {"seed", c.data.seed},
        {"path", c.data.path},
        {"schema", c.data.schema},
        {"normalize", c.data.normalize}}},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}, {"seed", c.split.seed}}},
      {"model", {{"hidden", c.run.hidden}}},
      {"optimizer",
       {{"kind", std::string(to_string(o.kind))},
        {"lr", o.lr},
        {"momentum", o.momentum},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps}}},
      {"run",
       {{"mode", std::string(to_string(c.run.mode))},
        {"epochs", c.run.epochs},
        {"batch_size", c.run.batch_size},
        {"seed", c.run.seed},
        {"refresh", std::string(to_string(c.run.refresh))},
        {"record_timing", c.run.record_timing},
        {"output_dir", c.output_dir}}},
      {"augment", {{"stages", stages}}},
      {"saflex",
       {{"beta", c.run.saflex.beta},
        {"tau", c.run.saflex.tau},
        {"val_batch_size", c.run.saflex.val_batch_size},
        {"seed", c.run.saflex.seed},
        {"gumbel_enabled", c.run.saflex.gumbel_enabled}}},
      {"oracle",
       {{"instances", q.instances},
        {"seed", q.seed},
        {"max_samples", q.max_samples},
        {"max_classes", q.max_classes},
        {"min_classes", q.min_classes},
        {"max_params", q.max_params},
        {"tau", q.tau},
        {"beta", q.beta},
        {"constraint", detail::constraint_name(q.constraint)}}},
  };
}

/// Defaults used by `--print-config` and as the base of every parse.
inline Config default_config() {
  Config c;
  c.run.hidden = {32, 32};
  AugmenterSpec jitter;
  jitter.kind = AugmentKind::kGaussianJitter;
  jitter.sigma = 0.5;
  c.run.augment.stages = {jitter};
  return c;
}

inline Config from_json(const Json& j) {
  using detail::Section;
  Config c = default_config();
  Section root(j, "config");
  if (const Json* d = root.child("data")) {
    Section s(*d, "data");
    s.get("kind", c.data.kind);
    s.get("n", c.data.n);
    s.get("sigma", c.data.sigma);
    s.get("offset", c.data.offset);
    s.get("noise", c.data.noise);
    s.get("seed", c.data.seed);
    s.get("path", c.data.path);
    s.get("schema", c.data.schema);
    s.get("normalize", c.data.normalize);
    s.finish();
  }
  if (const Json* d = root.child("split")) {
    Section s(*d, "split");
    s.get("train", c.split.train);
    s.get("val", c.split.val);
    s.get("test", c.split.test);
    s.get("seed", c.split.seed);
    s.finish();
  }
  if (const Json* d = root.child("model")) {
    Section s(*d, "model");
    s.get("hidden", c.run.hidden);
    s.finish();
  }
  if (const Json* d = root.child("optimizer")) {
    Section s(*d, "optimizer");
    std::string kind(to_string(c.run.optimizer.kind));
    s.get("kind", kind);
    c.run.optimizer.kind = parse_optimizer_kind(kind);
    s.get("lr", c.run.optimizer.lr);
    s.get("momentum", c.run.optimizer.momentum);
    s.get("beta1", c.run.optimizer.beta1);
    s.get("beta2", c.run.optimizer.beta2);
    s.get("eps", c.run.optimizer.eps);
    s.finish();
  }
  if (const Json* d = root.child("run")) {
    Section s(*d, "run");
    std::string mode(to_string(c.run.mode)), refresh(to_string(c.run.refresh));
    s.get("mode", mode);
    c.run.mode = parse_train_mode(mode);
    s.get("epochs", c.run.epochs);
    s.get("batch_size", c.run.batch_size);
    s.get("seed", c.run.seed);
    s.get("refresh", refresh);
    c.run.refresh = parse_augment_refresh(refresh);
    s.get("record_timing", c.run.record_timing);
    s.get("output_dir", c.output_dir);
    s.finish();
  }
  if (const Json* d = root.child("augment")) {
    Section s(*d, "augment");
    if (const Json* st = s.child("stages")) {
      if (!st->is_array()) throw ConfigError("augment.stages: expected an array");
      c.run.augment.stages.clear();
      for (std::size_t i = 0; i < st->size(); ++i) {
        Section e((*st)[i], "augment.stages[" + std::to_string(i) + "]");
        AugmenterSpec spec;
        std::string kind(to_string(spec.kind));
        e.get("kind", kind);
        spec.kind = parse_augment_kind(kind);
        e.get("sigma", spec.sigma);
        e.get("pad", spec.pad);
        e.get("flip_prob", spec.flip_prob);
        e.get("mixup_alpha", spec.mixup_alpha);
        e.get("p_replace", spec.p_replace);
        e.get("rho", spec.rho);
        e.get("seed", spec.seed);
        e.finish();
        c.run.augment.stages.push_back(spec);
      }
    }
    s.finish();
  }
  if (const Json* d = root.child("saflex")) {
    Section s(*d, "saflex");
    s.get("beta", c.run.saflex.beta);
    s.get("tau", c.run.saflex.tau);
    s.get("val_batch_size", c.run.saflex.val_batch_size);
    s.get("seed", c.run.saflex.seed);
    s.get("gumbel_enabled", c.run.saflex.gumbel_enabled);
    s.finish();
  }
  if (const Json* d = root.child("oracle")) {
    Section s(*d, "oracle");
    s.get("instances", c.oracle.instances);
    s.get("seed", c.oracle.seed);
    s.get("max_samples", c.oracle.max_samples);
    s.get("max_classes", c.oracle.max_classes);
    s.get("min_classes", c.oracle.min_classes);
    s.get("max_params", c.oracle.max_params);
    s.get("tau", c.oracle.tau);
    s.get("beta", c.oracle.beta);
    std::string constraint = detail::constraint_name(c.oracle.constraint);
    s.get("constraint", constraint);
    c.oracle.constraint = detail::parse_constraint(constraint);
    s.finish();
  }
  root.finish();

  static const std::set<std::string> kinds{"two_gaussians", "two_moons", "csv", "images"};
  if (!kinds.count(c.data.kind))
    throw ConfigError("data.kind: expected two_gaussians, two_moons, csv or images, got '" + c.data.kind + "'");
  if ((c.data.kind == "csv" || c.data.kind == "images") && c.data.path.empty())
    throw ConfigError("data.path is required for data.kind '" + c.data.kind + "'");
  if (c.data.kind == "csv" && c.data.schema.empty()) throw ConfigError("data.schema is required for data.kind 'csv'");
  c.split.validate();
  c.run.validate();
  return c;
}

inline Config parse_config(std::istream& is, const std::string& name) {
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(name + ": " + e.what());
  }
  return from_json(j);
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return parse_config(is, path);
}

inline std::string dump(const Config& c) { return to_json(c).dump(2) + "\n"; }

/// Builds the dataset named by the config and splits it.
inline Splits load_splits(const Config& c) {
  Dataset ds;
  if (c.data.kind == "two_gaussians") {
    ds = gen_two_gaussians(c.data.n, c.data.sigma, c.data.seed, c.data.offset);
  } else if (c.data.kind == "two_moons") {
    ds = gen_two_moons(c.data.n, c.data.noise, c.data.seed);
  } else if (c.data.kind == "csv") {
    ds = load_csv(c.data.path, c.data.schema, false);
  } else {
    ds = load_images_raw(c.data.path);
  }
  Splits s = split(ds, c.split);
  if (c.data.normalize) normalize_with_train_stats(s);
  return s;
}

} // namespace saflex::cli
