#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcrec/checkpoint.hpp"
#include "pcrec/config.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/finetune.hpp"
#include "pcrec/io.hpp"
#include "pcrec/pretrain.hpp"
#include "pcrec/synth.hpp"

namespace pcrec {

// Source and target graphs with their common-user bridge. External IDs are
// kept when the data came from review logs.
struct DomainData {
  BipartiteGraph source;
  BipartiteGraph target;
  CommonUserAlignment common_users;
  std::optional<IdMap> source_users, source_items, target_users, target_items;
  std::size_t skipped_source = 0;
  std::size_t skipped_target = 0;
};

namespace detail {

struct LabeledCore {
  BipartiteGraph graph;
  IdMap users;
  IdMap items;
};

inline LabeledCore ingest_domain(const ReviewSource& src, std::uint32_t k_user, std::uint32_t k_item,
                                 std::size_t& skipped) {
  ParsedReviews parsed = parse_reviews(src.path, src.format);
  skipped = parsed.skipped;
  const LabeledGraph lg = build_graph(parsed.pairs);
  const CoreResult core = k_core_with_origins(lg.graph, k_user, k_item);
  if (core.graph.empty()) throw EmptyGraph("k-core of " + src.path + " is empty");
  return {core.graph, lg.users.restrict_to(core.users), lg.items.restrict_to(core.items)};
}

inline BipartiteGraph read_dense_graph(const std::string& path) {
  auto in = open_for_read(path, false);
  return read_dense_edge_list(in);
}

}  // namespace detail

inline DomainData load_data(const PipelineConfig& cfg) {
  DomainData d;
  switch (cfg.data.kind) {
    case DataConfig::Kind::Synthetic: {
      SyntheticPair p = generate_synthetic_pair(cfg.synth_config());
      d.source = std::move(p.source);
      d.target = std::move(p.target);
      d.common_users = std::move(p.common_users);
      break;
    }
    case DataConfig::Kind::Reviews: {
      auto src = detail::ingest_domain(cfg.data.source_reviews, cfg.data.k_user, cfg.data.k_item, d.skipped_source);
      auto tgt = detail::ingest_domain(cfg.data.target_reviews, cfg.data.k_user, cfg.data.k_item, d.skipped_target);
      d.common_users = align_common_users(src.users, tgt.users);
      d.source = std::move(src.graph);
      d.target = std::move(tgt.graph);
      d.source_users = std::move(src.users);
      d.source_items = std::move(src.items);
      d.target_users = std::move(tgt.users);
      d.target_items = std::move(tgt.items);
      break;
    }
    case DataConfig::Kind::Edges: {
      d.source = detail::read_dense_graph(cfg.data.source_edges);
      d.target = detail::read_dense_graph(cfg.data.target_edges);
      auto in = open_for_read(cfg.data.alignment, false);
      d.common_users = read_alignment(in);
      for (const auto& [s, t] : d.common_users) {
        if (s >= d.source.num_users() || t >= d.target.num_users()) {
          throw FormatError("alignment names a user outside the edge lists");
        }
      }
      break;
    }
  }
  return d;
}

// Writes source.edges, target.edges and alignment.tsv (dense indices), plus
// the external-ID tables when known (line k holds the ID of index k).
inline std::vector<std::string> write_data(const std::string& dir, const DomainData& d) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, auto&& fn) {
    const std::string path = (base / name).string();
    auto out = open_for_write(path, false);
    fn(out);
    if (!out) throw IoError("write failed: " + path);
    written.push_back(path);
  };
  emit("source.edges", [&](std::ostream& o) { write_edge_list(o, d.source); });
  emit("target.edges", [&](std::ostream& o) { write_edge_list(o, d.target); });
  emit("alignment.tsv", [&](std::ostream& o) { write_alignment(o, d.common_users); });
  auto ids = [&](const char* name, const std::optional<IdMap>& m) {
    if (!m) return;
    emit(name, [&](std::ostream& o) {
      for (const auto& id : m->externals()) o << id << '\n';
    });
  };
  ids("source_users.txt", d.source_users);
  ids("source_items.txt", d.source_items);
  ids("target_users.txt", d.target_users);
  ids("target_items.txt", d.target_items);
  return written;
}

// ---------------------------------------------------------------------------
// Stages

inline PretrainResult pretrain_stage(const PipelineConfig& cfg, const BipartiteGraph& source, std::uint32_t r,
                                     std::ostream* log) {
  PretrainConfig p = cfg.pretrain_config();
  p.sampler.r = r;
  const std::uint64_t total = total_steps(source, p);
  const std::uint64_t every = std::max<std::uint64_t>(1, total / 10);
  return run_pretrain(source, p, [&](std::uint64_t step, double loss) {
    if (log && (step % every == 0 || step == total)) *log << "pretrain r=" << r << " step " << step << "/" << total << " loss " << loss << "\n";
  });
}

inline EmbeddingTable init_stage(const PipelineConfig& cfg, const EncoderParams& encoder, const DomainData& d,
                                 const BipartiteGraph& target_train, TransferMode mode, std::uint32_t r) {
  SamplerConfig sampler = cfg.sampler;
  sampler.r = r;
  const TransferInputs inputs{&d.source, &d.common_users, cfg.transfer.full_source_common_users};
  return init_target_embeddings(encoder, target_train, mode, inputs, sampler, cfg.seed);
}

inline FinetuneResult finetune_stage(const PipelineConfig& cfg, const EmbeddingTable& init,
                                     const InteractionSplit& split, std::uint32_t lgcn_layers, std::ostream* log) {
  FinetuneConfig f = cfg.finetune_config();
  f.lgcn_layers = lgcn_layers;
  return train_mf(init, split, f, [&](std::uint32_t epoch, double loss) {
    if (log && epoch % f.eval_interval == 0) *log << "finetune epoch " << epoch << " loss " << loss << "\n";
  });
}

struct PipelineResult {
  PretrainResult pretrained;
  EmbeddingTable init;
  std::optional<FinetuneResult> finetuned;
  MetricsReport report;
};

// Data -> pre-training -> transfer -> fine-tuning -> evaluation, with every
// artifact written under `out_dir` when it is nonempty.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir = {},
                                   std::ostream* log = nullptr) {
  cfg.validate();
  const std::string fp = fingerprint(cfg);
  const DomainData data = load_data(cfg);
  const InteractionSplit split = split_interactions(data.target, cfg.split_config());
  const BipartiteGraph train = split.train_graph();
  const TransferMode mode = cfg.transfer.mode;

  PipelineResult r;
  if (mode != TransferMode::Random) r.pretrained = pretrain_stage(cfg, data.source, cfg.sampler.r, log);
  else r.pretrained.encoder = init_encoder(cfg.seed, cfg.encoder, cfg.pretrain.momentum).query;
  r.init = init_stage(cfg, r.pretrained.encoder, data, train, mode, cfg.sampler.r);
  const EmbeddingTable* final_table = &r.init;
  if (fine_tunes(mode)) {
    r.finetuned = finetune_stage(cfg, r.init, split, cfg.finetune.lgcn_layers, log);
    final_table = &r.finetuned->embeddings;
  }
  r.report = evaluate(*final_table, split, cfg.eval.ks, fp, cfg.seed);

  if (!out_dir.empty()) {
    const std::filesystem::path base(out_dir);
    write_data((base / "data").string(), data);
    save_encoder((base / "encoder.bin").string(), r.pretrained.encoder, cfg.pretrain.momentum);
    {
      auto out = open_for_write((base / "pretrain_loss.tsv").string(), false);
      write_loss_trace(out, r.pretrained.losses);
    }
    save_table((base / "init.emb").string(), r.init);
    if (r.finetuned) {
      save_table((base / "final.emb").string(), r.finetuned->embeddings);
      auto out = open_for_write((base / "validation.tsv").string(), false);
      for (const auto& v : r.finetuned->validation) out << v.epoch << '\t' << v.recall << '\n';
    }
    write_file((base / "config.json").string(), config_to_json(cfg).dump(2) + "\n");
    write_file((base / "metrics.json").string(), r.report.to_json().dump(2) + "\n");
    write_file((base / "metrics.txt").string(), r.report.to_text());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ablations

struct ArmSpec {
  std::string name;
  TransferMode mode = TransferMode::Full;
  std::uint32_t lgcn_layers = 0;
  std::optional<std::uint32_t> r;  // pre-training radius; unset = config's sampler.r
};

// random, pre-only, cu-pe, cu-pm, full, l1, l3 (Full + LightGCN), r<N>
// (Pre-Only with an encoder pre-trained at radius N).
inline ArmSpec arm_from_name(const std::string& name) {
  if (name == "l1") return {name, TransferMode::Full, 1, std::nullopt};
  if (name == "l3") return {name, TransferMode::Full, 3, std::nullopt};
  if (name.size() >= 2 && name[0] == 'r' && std::all_of(name.begin() + 1, name.end(), [](unsigned char ch) { return std::isdigit(ch) != 0; })) {
    return {name, TransferMode::PreOnly, 0, static_cast<std::uint32_t>(std::stoul(name.substr(1)))};
  }
  return {name, parse_transfer_mode(name), 0, std::nullopt};
}

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct AblationTable {
  std::vector<std::string> arms;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // arm-major within each seed
  std::size_t primary_k = 20;

  std::vector<double> recall_values(const std::string& arm, std::size_t k) const {
    std::vector<double> out;
    for (const auto& r : rows) {
      if (r.arm == arm) out.push_back(r.report.recall.at(k));
    }
    return out;
  }

  static double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  double median_recall(const std::string& arm, std::size_t k) const { return median(recall_values(arm, k)); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["arms"] = arms;
    j["seeds"] = seeds;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row = r.report.to_json();
      row["arm"] = r.arm;
      j["rows"].push_back(row);
    }
    for (const auto& arm : arms) {
      for (const auto& [k, v] : rows.front().report.recall) {
        j["median"][arm]["recall@" + std::to_string(k)] = median_recall(arm, k);
      }
    }
    return j;
  }

  // arm<TAB>seed<TAB>recall@K...<TAB>map@K...
  std::string to_tsv() const {
    std::ostringstream out;
    char buf[32];
    out << "arm\tseed";
    if (!rows.empty()) {
      for (const auto& [k, v] : rows.front().report.recall) out << "\trecall@" << k;
      for (const auto& [k, v] : rows.front().report.map) out << "\tmap@" << k;
    }
    out << "\n";
    for (const auto& r : rows) {
      out << r.arm << '\t' << r.seed;
      for (const auto* m : {&r.report.recall, &r.report.map}) {
        for (const auto& [k, v] : *m) {
          std::snprintf(buf, sizeof buf, "%.6f", v);
          out << '\t' << buf;
        }
      }
      out << "\n";
    }
    return out.str();
  }
};

// Runs every arm on every seed. For a given seed all arms share the data, the
// split and the pre-trained encoder of their radius.
inline AblationTable run_ablations(const PipelineConfig& base, const std::vector<std::string>& arm_names,
                                   const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr) {
  if (arm_names.empty() || seeds.empty()) throw ConfigError("ablate: no arms or no seeds");
  std::vector<ArmSpec> arms;
  for (const auto& name : arm_names) arms.push_back(arm_from_name(name));
  AblationTable table;
  table.arms = arm_names;
  table.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    PipelineConfig cfg = base;
    cfg.seed = seed;
    cfg.validate();
    const std::string fp = fingerprint(cfg);
    const DomainData data = load_data(cfg);
    const InteractionSplit split = split_interactions(data.target, cfg.split_config());
    const BipartiteGraph train = split.train_graph();
    std::map<std::uint32_t, EncoderParams> encoders;
    auto encoder_for = [&](std::uint32_t r) -> const EncoderParams& {
      auto it = encoders.find(r);
      if (it == encoders.end()) it = encoders.emplace(r, pretrain_stage(cfg, data.source, r, log).encoder).first;
      return it->second;
    };
    const EncoderParams untrained = init_encoder(cfg.seed, cfg.encoder, cfg.pretrain.momentum).query;
    for (const auto& arm : arms) {
      const std::uint32_t r = arm.r.value_or(cfg.sampler.r);
      const EncoderParams& enc = arm.mode == TransferMode::Random ? untrained : encoder_for(r);
      const EmbeddingTable init = init_stage(cfg, enc, data, train, arm.mode, r);
      EmbeddingTable final_table = init;
      if (fine_tunes(arm.mode)) final_table = finetune_stage(cfg, init, split, arm.lgcn_layers, nullptr).embeddings;
      AblationRow row{arm.name, seed, evaluate(final_table, split, cfg.eval.ks, fp, seed)};
      if (log) *log << "ablate seed " << seed << " arm " << arm.name << " recall@" << cfg.eval.ks.front() << " "
                    << row.report.recall.at(cfg.eval.ks.front()) << "\n";
      table.rows.push_back(std::move(row));
    }
  }
  table.primary_k = base.eval.ks.front();
  return table;
}

}  // namespace pcrec
