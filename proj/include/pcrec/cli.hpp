#pragma once

// Command-line driver. Needs CLI11.hpp on the include path.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcrec/checkpoint.hpp"
#include "pcrec/config.hpp"
#include "pcrec/pipeline.hpp"

namespace pcrec {

namespace detail {

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::uint32_t> r;
  std::optional<std::uint32_t> lgcn_layers;
  std::optional<std::string> out;
  bool quiet = false;

  // subcommand inputs
  std::string encoder;
  std::string init;
  std::string emb;
  std::string resume;
  std::string arms;
  std::string seeds;
  bool text = false;
};

inline void add_common(CLI::App* sub, CliOptions& o) {
  sub->add_option("-c,--config", o.config, "pipeline config (JSON)");
  sub->add_option("--seed", o.seed, "run seed");
  sub->add_option("--mode", o.mode, "transfer mode: random|pre-only|cu-pe|cu-pm|full");
  sub->add_option("--r", o.r, "ego-network radius");
  sub->add_option("--lgcn-layers", o.lgcn_layers, "LightGCN layers for fine-tuning: 0|1|3");
  sub->add_option("--out", o.out, "output directory");
  sub->add_flag("-q,--quiet", o.quiet, "no progress on stderr");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline PipelineConfig resolve_config(const CliOptions& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.transfer.mode = parse_transfer_mode(*o.mode);
  if (o.r) c.sampler.r = *o.r;
  if (o.lgcn_layers) c.finetune.lgcn_layers = *o.lgcn_layers;
  if (o.out) c.output_dir = *o.out;
  c.validate();
  return c;
}

inline std::string in_out(const PipelineConfig& c, const std::string& name) {
  return (std::filesystem::path(c.output_dir) / name).string();
}

}  // namespace detail

// Returns the process exit code: 0 success, 1 contract/config error, 2 I/O error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"pcrec: contrastive pre-training for cross-domain recommendation"};
  app.require_subcommand(1);
  detail::CliOptions o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic source/target pair");
  auto* ingest = app.add_subcommand("ingest", "parse review logs, apply k-core, dump graphs");
  auto* pretrain = app.add_subcommand("pretrain", "contrastive pre-training on the source graph");
  auto* init_emb = app.add_subcommand("init-emb", "initialize target embeddings with a transfer mode");
  auto* finetune = app.add_subcommand("finetune", "BPR fine-tuning of target embeddings");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Recall@K / MAP@K of an embedding table");
  auto* ablate = app.add_subcommand("ablate", "run ablation arms over paired seeds");
  auto* pipeline = app.add_subcommand("pipeline", "data, pre-training, transfer, fine-tuning, evaluation");
  for (auto* sub : {synth, ingest, pretrain, init_emb, finetune, evaluate_cmd, ablate, pipeline}) {
    detail::add_common(sub, o);
  }
  pretrain->add_option("--resume", o.resume, "training checkpoint to continue from");
  init_emb->add_option("--encoder", o.encoder, "encoder checkpoint (default <out>/encoder.bin)");
  init_emb->add_flag("--text", o.text, "also write a text export");
  finetune->add_option("--init", o.init, "initial table (default <out>/init.emb)");
  finetune->add_flag("--text", o.text, "also write a text export");
  evaluate_cmd->add_option("--emb", o.emb, "embedding table (default <out>/final.emb)");
  ablate->add_option("--arms", o.arms, "comma-separated arms (default from config)");
  ablate->add_option("--seeds", o.seeds, "comma-separated seeds (default from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const PipelineConfig cfg = detail::resolve_config(o);
    std::ostream* log = o.quiet ? nullptr : &err;
    const std::string fp = fingerprint(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    if (synth->parsed() || ingest->parsed()) {
      if (synth->parsed() && cfg.data.kind != DataConfig::Kind::Synthetic) {
        throw ConfigError("synth: config data.kind is not synthetic");
      }
      const DomainData d = load_data(cfg);
      for (const auto& path : write_data(cfg.output_dir, d)) out << path << "\n";
      if (log) {
        *log << "source " << d.source.num_users() << " users, " << d.source.num_items() << " items, "
             << d.source.edge_count() << " edges; target " << d.target.num_users() << " users, "
             << d.target.num_items() << " items, " << d.target.edge_count() << " edges; " << d.common_users.size()
             << " common users";
        if (cfg.data.kind == DataConfig::Kind::Reviews) {
          *log << "; skipped lines " << d.skipped_source << " (source), " << d.skipped_target << " (target)";
        }
        *log << "\n";
      }
      return 0;
    }

    if (pretrain->parsed()) {
      const DomainData d = load_data(cfg);
      PretrainConfig p = cfg.pretrain_config();
      if (p.checkpoint_every > 0) p.checkpoint_path = detail::in_out(cfg, "pretrain_state.bin");
      PretrainState state = o.resume.empty() ? init_pretrain_state(p) : load_pretrain_state(o.resume);
      const std::uint64_t first = state.step + 1;
      std::vector<double> trace;
      const std::uint64_t total = total_steps(d.source, p);
      continue_pretrain(state, d.source, p, total, trace, [&](std::uint64_t step, double loss) {
        if (log && (step % 100 == 0 || step == total)) *log << "step " << step << "/" << total << " loss " << loss << "\n";
      });
      const std::string enc_path = detail::in_out(cfg, "encoder.bin");
      save_encoder(enc_path, state.encoders.query, p.momentum);
      auto trace_out = open_for_write(detail::in_out(cfg, "pretrain_loss.tsv"), false);
      write_loss_trace(trace_out, trace, first);
      out << enc_path << "\n";
      return 0;
    }

    if (init_emb->parsed()) {
      const DomainData d = load_data(cfg);
      const InteractionSplit split = split_interactions(d.target, cfg.split_config());
      const std::string enc_path = o.encoder.empty() ? detail::in_out(cfg, "encoder.bin") : o.encoder;
      EncoderParams encoder = cfg.transfer.mode == TransferMode::Random
                                  ? init_encoder(cfg.seed, cfg.encoder).query
                                  : load_encoder(enc_path);
      const EmbeddingTable t = init_stage(cfg, encoder, d, split.train_graph(), cfg.transfer.mode, cfg.sampler.r);
      const std::string path = detail::in_out(cfg, "init.emb");
      save_table(path, t);
      if (o.text) {
        auto text = open_for_write(detail::in_out(cfg, "init.tsv"), false);
        write_table_text(text, t);
      }
      out << path << "\n";
      return 0;
    }

    if (finetune->parsed()) {
      const DomainData d = load_data(cfg);
      const InteractionSplit split = split_interactions(d.target, cfg.split_config());
      const EmbeddingTable init = load_table(o.init.empty() ? detail::in_out(cfg, "init.emb") : o.init);
      const FinetuneResult r = finetune_stage(cfg, init, split, cfg.finetune.lgcn_layers, log);
      const std::string path = detail::in_out(cfg, "final.emb");
      save_table(path, r.embeddings);
      {
        auto v = open_for_write(detail::in_out(cfg, "validation.tsv"), false);
        for (const auto& p : r.validation) v << p.epoch << '\t' << p.recall << '\n';
        auto l = open_for_write(detail::in_out(cfg, "finetune_loss.tsv"), false);
        write_loss_trace(l, r.epoch_losses);
      }
      if (o.text) {
        auto text = open_for_write(detail::in_out(cfg, "final.tsv"), false);
        write_table_text(text, r.embeddings);
      }
      out << path << "\n";
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      const DomainData d = load_data(cfg);
      const InteractionSplit split = split_interactions(d.target, cfg.split_config());
      const EmbeddingTable t = load_table(o.emb.empty() ? detail::in_out(cfg, "final.emb") : o.emb);
      if (t.num_users() != d.target.num_users() || t.num_items() != d.target.num_items()) {
        throw ShapeError("evaluate: table does not match the target graph");
      }
      const MetricsReport report = evaluate(t, split, cfg.eval.ks, fp, cfg.seed);
      write_file(detail::in_out(cfg, "metrics.json"), report.to_json().dump(2) + "\n");
      write_file(detail::in_out(cfg, "metrics.txt"), report.to_text());
      out << report.to_json().dump(2) << "\n";
      return 0;
    }

    if (ablate->parsed()) {
      std::vector<std::string> arms = o.arms.empty() ? cfg.ablation.arms : detail::split_list(o.arms);
      std::vector<std::uint64_t> seeds = cfg.ablation.seeds;
      if (!o.seeds.empty()) {
        seeds.clear();
        for (const auto& s : detail::split_list(o.seeds)) seeds.push_back(std::stoull(s));
      }
      const AblationTable table = run_ablations(cfg, arms, seeds, log);
      write_file(detail::in_out(cfg, "ablation.json"), table.to_json().dump(2) + "\n");
      write_file(detail::in_out(cfg, "ablation.tsv"), table.to_tsv());
      out << table.to_tsv();
      return 0;
    }

    if (pipeline->parsed()) {
      const PipelineResult r = run_pipeline(cfg, cfg.output_dir, log);
      out << r.report.to_json().dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pcrec
