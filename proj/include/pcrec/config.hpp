#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "pcrec/error.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/finetune.hpp"
#include "pcrec/io.hpp"
#include "pcrec/pretrain.hpp"
#include "pcrec/synth.hpp"

namespace pcrec {

using nlohmann::json;

struct ReviewSource {
  std::string path;
  ReviewFormat format = ReviewFormat::Csv;
};

struct DataConfig {
  enum class Kind { Synthetic, Reviews, Edges };
  Kind kind = Kind::Synthetic;

  // synthetic; the seed follows the run seed unless set explicitly
  SynthConfig synth;
  bool synth_seed_fixed = false;

  // reviews
  ReviewSource source_reviews;
  ReviewSource target_reviews;
  std::uint32_t k_user = 1;
  std::uint32_t k_item = 1;

  // edges: dense-index edge lists plus a `source<TAB>target` user alignment
  std::string source_edges;
  std::string target_edges;
  std::string alignment;
};

struct EvalConfig {
  std::vector<std::size_t> ks{20, 40};
  double train_ratio = 0.8;
  double val_frac = 0.1;
};

struct TransferConfig {
  TransferMode mode = TransferMode::Full;
  bool full_source_common_users = false;
};

struct AblationConfig {
  std::vector<std::string> arms{"random", "pre-only", "cu-pe", "cu-pm", "full", "l1", "l3", "r2", "r3"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "out";
  DataConfig data;
  SamplerConfig sampler;
  EncoderShape encoder;
  PretrainConfig pretrain;  // sampler, encoder and seed are filled from the fields above
  FinetuneConfig finetune;
  EvalConfig eval;
  TransferConfig transfer;
  AblationConfig ablation;

  // Copies of the per-module configs with the run seed and shared sections applied.
  PretrainConfig pretrain_config() const {
    PretrainConfig p = pretrain;
    p.sampler = sampler;
    p.encoder = encoder;
    p.seed = seed;
    return p;
  }
  FinetuneConfig finetune_config() const {
    FinetuneConfig f = finetune;
    f.seed = seed;
    return f;
  }
  SplitConfig split_config() const { return {eval.train_ratio, eval.val_frac, seed}; }
  SynthConfig synth_config() const {
    SynthConfig s = data.synth;
    if (!data.synth_seed_fixed) s.seed = seed;
    return s;
  }

  void validate() const;
};

namespace detail {

// Reads an object's fields and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name_ + "." + key + "' has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, name_.empty() ? key : name_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + (name_.empty() ? key : name_ + "." + key) + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline ReviewSource read_review_source(Section s) {
  ReviewSource out;
  std::string format = "csv";
  s.get("path", out.path);
  s.get("format", format);
  s.finish();
  out.format = parse_review_format(format);
  return out;
}

inline json review_source_json(const ReviewSource& r) {
  return {{"path", r.path}, {"format", r.format == ReviewFormat::Csv ? "csv" : "jsonl"}};
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  detail::Section root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  {
    auto d = root.child("data");
    std::string kind = "synthetic";
    d.get("kind", kind);
    if (kind == "synthetic") {
      c.data.kind = DataConfig::Kind::Synthetic;
    } else if (kind == "reviews") {
      c.data.kind = DataConfig::Kind::Reviews;
    } else if (kind == "edges") {
      c.data.kind = DataConfig::Kind::Edges;
    } else {
      throw ConfigError("config: data.kind must be synthetic, reviews or edges");
    }
    auto s = d.child("synth");
    auto& sc = c.data.synth;
    s.get("source_users", sc.source_users);
    s.get("source_items", sc.source_items);
    s.get("target_users", sc.target_users);
    s.get("target_items", sc.target_items);
    s.get("shared_fraction", sc.shared_fraction);
    s.get("latent_dim", sc.latent_dim);
    s.get("density", sc.density);
    s.get("popularity_sigma", sc.popularity_sigma);
    s.get("degree_sigma", sc.degree_sigma);
    s.get("affinity_scale", sc.affinity_scale);
    s.get("noise", sc.noise);
    c.data.synth_seed_fixed = s.has("seed");
    s.get("seed", sc.seed);
    s.finish();
    if (d.has("source")) c.data.source_reviews = detail::read_review_source(d.child("source"));
    if (d.has("target")) c.data.target_reviews = detail::read_review_source(d.child("target"));
    auto k = d.child("k_core");
    k.get("user", c.data.k_user);
    k.get("item", c.data.k_item);
    k.finish();
    d.get("source_edges", c.data.source_edges);
    d.get("target_edges", c.data.target_edges);
    d.get("alignment", c.data.alignment);
    d.finish();
  }
  {
    auto s = root.child("sampler");
    s.get("r", c.sampler.r);
    s.get("restart_prob", c.sampler.restart_prob);
    s.get("max_walk_steps", c.sampler.max_walk_steps);
    s.get("max_subgraph_nodes", c.sampler.max_subgraph_nodes);
    s.finish();
  }
  {
    auto s = root.child("encoder");
    std::uint32_t d_in = static_cast<std::uint32_t>(c.encoder.d_in), d = static_cast<std::uint32_t>(c.encoder.d);
    s.get("d_in", d_in);
    s.get("d", d);
    s.get("layers", c.encoder.num_layers);
    s.finish();
    c.encoder.d_in = d_in;
    c.encoder.d = d;
  }
  {
    auto s = root.child("pretrain");
    auto& p = c.pretrain;
    s.get("tau", p.tau);
    s.get("momentum", p.momentum);
    s.get("lr", p.lr);
    s.get("batch_size", p.batch_size);
    s.get("queue_size", p.queue_size);
    s.get("steps", p.steps);
    s.get("epochs", p.epochs);
    s.get("checkpoint_every", p.checkpoint_every);
    s.finish();
  }
  {
    auto s = root.child("finetune");
    auto& f = c.finetune;
    s.get("lr", f.lr);
    s.get("lambda", f.lambda);
    s.get("negatives", f.negatives);
    s.get("batch_size", f.batch_size);
    s.get("max_epochs", f.max_epochs);
    s.get("patience", f.patience);
    s.get("eval_interval", f.eval_interval);
    s.get("lgcn_layers", f.lgcn_layers);
    s.get("monitor_k", f.monitor_k);
    s.finish();
  }
  {
    auto s = root.child("eval");
    s.get("ks", c.eval.ks);
    s.get("train_ratio", c.eval.train_ratio);
    s.get("val_frac", c.eval.val_frac);
    s.finish();
  }
  {
    auto s = root.child("transfer");
    std::string mode = to_string(c.transfer.mode);
    s.get("mode", mode);
    s.get("full_source_common_users", c.transfer.full_source_common_users);
    s.finish();
    c.transfer.mode = parse_transfer_mode(mode);
  }
  {
    auto s = root.child("ablation");
    s.get("arms", c.ablation.arms);
    s.get("seeds", c.ablation.seeds);
    s.finish();
  }
  root.finish();
  return c;
}

// Every field, defaults included; `output_dir` is left out so the same
// experiment written to two places has one fingerprint.
inline json config_to_json(const PipelineConfig& c) {
  const char* kinds[] = {"synthetic", "reviews", "edges"};
  const auto& sc = c.data.synth;
  json data = {{"kind", kinds[static_cast<int>(c.data.kind)]}};
  if (c.data.kind == DataConfig::Kind::Synthetic) {
    data["synth"] = {{"source_users", sc.source_users},     {"source_items", sc.source_items},
                     {"target_users", sc.target_users},     {"target_items", sc.target_items},
                     {"shared_fraction", sc.shared_fraction}, {"latent_dim", sc.latent_dim},
                     {"density", sc.density},               {"popularity_sigma", sc.popularity_sigma},
                     {"degree_sigma", sc.degree_sigma},     {"affinity_scale", sc.affinity_scale},
                     {"noise", sc.noise}};
    if (c.data.synth_seed_fixed) data["synth"]["seed"] = sc.seed;
  } else if (c.data.kind == DataConfig::Kind::Reviews) {
    data["source"] = detail::review_source_json(c.data.source_reviews);
    data["target"] = detail::review_source_json(c.data.target_reviews);
    data["k_core"] = {{"user", c.data.k_user}, {"item", c.data.k_item}};
  } else {
    data["source_edges"] = c.data.source_edges;
    data["target_edges"] = c.data.target_edges;
    data["alignment"] = c.data.alignment;
  }
  const auto& p = c.pretrain;
  const auto& f = c.finetune;
  return {
      {"seed", c.seed},
      {"data", data},
      {"sampler",
       {{"r", c.sampler.r},
        {"restart_prob", c.sampler.restart_prob},
        {"max_walk_steps", c.sampler.max_walk_steps},
        {"max_subgraph_nodes", c.sampler.max_subgraph_nodes}}},
      {"encoder", {{"d_in", c.encoder.d_in}, {"d", c.encoder.d}, {"layers", c.encoder.num_layers}}},
      {"pretrain",
       {{"tau", p.tau},
        {"momentum", p.momentum},
        {"lr", p.lr},
        {"batch_size", p.batch_size},
        {"queue_size", p.queue_size},
        {"steps", p.steps},
        {"epochs", p.epochs},
        {"checkpoint_every", p.checkpoint_every}}},
      {"finetune",
       {{"lr", f.lr},
        {"lambda", f.lambda},
        {"negatives", f.negatives},
        {"batch_size", f.batch_size},
        {"max_epochs", f.max_epochs},
        {"patience", f.patience},
        {"eval_interval", f.eval_interval},
        {"lgcn_layers", f.lgcn_layers},
        {"monitor_k", f.monitor_k}}},
      {"eval", {{"ks", c.eval.ks}, {"train_ratio", c.eval.train_ratio}, {"val_frac", c.eval.val_frac}}},
      {"transfer",
       {{"mode", to_string(c.transfer.mode)}, {"full_source_common_users", c.transfer.full_source_common_users}}},
      {"ablation", {{"arms", c.ablation.arms}, {"seeds", c.ablation.seeds}}},
  };
}

// 64-bit FNV-1a of the canonical (sorted-key, compact) JSON, as 16 hex digits.
inline std::string fingerprint(const PipelineConfig& c) {
  const std::string canonical = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void PipelineConfig::validate() const {
  sampler.validate();
  pretrain_config().validate();
  finetune_config().validate();
  if (eval.ks.empty()) throw ConfigError("config: eval.ks is empty");
  for (auto k : eval.ks) {
    if (k < 1) throw ConfigError("config: eval.ks entries must be >= 1");
  }
  if (data.kind == DataConfig::Kind::Synthetic) synth_config().validate();
  if (data.k_user < 1 || data.k_item < 1) throw ConfigError("config: k_core thresholds must be >= 1");
  auto require_file = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string("config: ") + what + " is required");
    if (!std::filesystem::is_regular_file(path)) throw IoError(std::string("config: ") + what + " not found: " + path);
  };
  if (data.kind == DataConfig::Kind::Reviews) {
    require_file(data.source_reviews.path, "data.source.path");
    require_file(data.target_reviews.path, "data.target.path");
  }
  if (data.kind == DataConfig::Kind::Edges) {
    require_file(data.source_edges, "data.source_edges");
    require_file(data.target_edges, "data.target_edges");
    require_file(data.alignment, "data.alignment");
  }
}

inline PipelineConfig load_config(const std::string& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false, /*ignore_comments=*/true);
  if (j.is_discarded()) throw ConfigError("config: " + path + " is not valid JSON");
  PipelineConfig c = config_from_json(j);
  // relative data paths are resolved against the config file's directory
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.source_reviews.path);
  resolve(c.data.target_reviews.path);
  resolve(c.data.source_edges);
  resolve(c.data.target_edges);
  resolve(c.data.alignment);
  return c;
}

}  // namespace pcrec
