#pragma once

// CLI subcommands. Each takes a resolved RunConfig, writes its files under
// cfg.out, prints a one-line JSON summary to `out`, and reports failures by
// throwing ovoda::Error (the entrypoint maps these to exit codes).

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "ovoda/config.hpp"
#include "ovoda/embedding.hpp"
#include "ovoda/errors.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/losses.hpp"
#include "ovoda/ovad.hpp"
#include "ovoda/pipeline.hpp"
#include "ovoda/proposals.hpp"
#include "ovoda/remote_provider.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

inline constexpr const char* kSceneFile = "scene.json";
inline constexpr const char* kProposalFile = "proposals.jsonl";
inline constexpr const char* kDetectionFile = "detections.jsonl";
inline constexpr const char* kEventFile = "events.jsonl";
inline constexpr const char* kGtAttributeFile = "attributes_gt.jsonl";
inline constexpr const char* kOvadFile = "ovad_pairs.jsonl";
inline constexpr const char* kOvadSummaryFile = "ovad_summary.json";
inline constexpr const char* kEvalFile = "eval_report.json";
inline constexpr const char* kLossFile = "losses_check.json";
inline constexpr const char* kEffectiveConfigFile = "effective_config.json";

namespace detail {

inline std::string out_path(const RunConfig& cfg, const char* name) {
  return (std::filesystem::path(cfg.out) / name).string();
}

inline void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.out + "': " + ec.message());
  write_text_file(out_path(cfg, kEffectiveConfigFile), canonical_dump(config_to_json(cfg)) + "\n");
}

inline void require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("config key '") + key + "' is required for this command");
  if (!std::filesystem::exists(value)) throw ConfigError(std::string(key) + " '" + value + "' does not exist");
}

struct LoadedData {
  SceneDataset ds;
  Vocabulary vocab;
};

inline LoadedData load_inputs(const RunConfig& cfg) {
  require_path(cfg.dataset, "dataset");
  LoadedData d;
  d.ds = dataset_from_json(parse_json(read_text_file(cfg.dataset), cfg.dataset));
  d.vocab = cfg.vocabulary.empty() ? resolve_vocabulary(d.ds.vocabulary_ref, cfg.dataset) : load_vocabulary(cfg.vocabulary);
  d.vocab.validate();
  validate_dataset(d.ds, d.vocab);
  return d;
}

inline std::string summary_line(const json& j) { return canonical_dump(j) + "\n"; }

}  // namespace detail

/// Owns the configured provider and, when enabled, a caching layer on top.
class ProviderStack {
 public:
  ProviderStack(const RunConfig& cfg, const SceneDataset& ds, const Vocabulary& vocab) {
    if (cfg.provider.kind == "synthetic") {
      SyntheticProviderConfig pc;
      pc.seed = cfg.provider_seed();
      pc.dim = cfg.provider.dim;
      pc.noise = cfg.provider.noise;
      pc.prompt = cfg.pipeline.prompt;
      inner_ = std::make_unique<SyntheticProvider>(pc, ds, vocab);
    } else {
      inner_ = std::make_unique<RemoteProvider>(RemoteProviderConfig{cfg.provider.url, cfg.provider.dim,
                                                                     cfg.provider.timeout_s, cfg.provider.retries,
                                                                     cfg.provider.backoff_ms});
    }
    if (cfg.provider.cache && inner_->deterministic()) cache_ = std::make_unique<CachingProvider>(*inner_);
  }

  EmbeddingProvider& get() { return cache_ ? static_cast<EmbeddingProvider&>(*cache_) : *inner_; }

 private:
  std::unique_ptr<EmbeddingProvider> inner_;
  std::unique_ptr<CachingProvider> cache_;
};

inline NoiseConfig effective_proposer(const RunConfig& cfg) {
  NoiseConfig n = cfg.proposer;
  n.anchor_seed = cfg.provider_seed();
  return n;
}

inline void cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const SceneDataset ds = generate_synthetic(cfg.synth, cfg.seed);
  detail::prepare_out(cfg);
  write_dataset(ds, detail::out_path(cfg, kSceneFile));
  const ProposalSet props = synth_proposals(ds, effective_proposer(cfg), cfg.seed);
  write_proposals(ds, props, detail::out_path(cfg, kProposalFile));
  std::size_t n_props = 0, n_anns = 0;
  for (std::size_t s = 0; s < ds.scenes.size(); ++s)
    for (std::size_t f = 0; f < ds.scenes[s].frames.size(); ++f) {
      n_props += props[s][f].size();
      n_anns += ds.scenes[s].frames[f].annotations.size();
    }
  out << detail::summary_line({{"command", "synth"},
                               {"seed", cfg.seed},
                               {"scenes", ds.scenes.size()},
                               {"frames", ds.frame_count()},
                               {"annotations", n_anns},
                               {"proposals", n_props},
                               {"dataset", detail::out_path(cfg, kSceneFile)},
                               {"proposal_file", detail::out_path(cfg, kProposalFile)}});
}

inline void cmd_build_ovad(const RunConfig& cfg, std::ostream& out) {
  const auto in = detail::load_inputs(cfg);
  OvadSummary summary;
  const auto pairs = build_ovad(in.ds, cfg.ovad_max_distance, &summary);
  detail::prepare_out(cfg);
  std::string text;
  for (const auto& p : pairs) text += canonical_dump(ovad_pair_to_json(p)) + "\n";
  write_text_file(detail::out_path(cfg, kOvadFile), text);
  const json sj = ovad_summary_to_json(summary);
  write_text_file(detail::out_path(cfg, kOvadSummaryFile), canonical_dump(sj) + "\n");
  out << detail::summary_line({{"command", "build-ovad"},
                               {"pairs", summary.pairs},
                               {"frames", summary.frames},
                               {"skipped_coincident", summary.skipped_coincident},
                               {"relation_counts", summary.relation_counts},
                               {"attribute_counts", summary.attribute_counts},
                               {"pair_file", detail::out_path(cfg, kOvadFile)}});
}

inline void cmd_detect(const RunConfig& cfg, std::ostream& out) {
  const auto in = detail::load_inputs(cfg);
  ProposalSet props;
  if (cfg.proposals.empty()) {
    props = synth_proposals(in.ds, effective_proposer(cfg), cfg.seed);
  } else {
    detail::require_path(cfg.proposals, "proposals");
    props = load_proposals(cfg.proposals, in.ds, cfg.proposer.det_dim);
  }
  ProviderStack provider(cfg, in.ds, in.vocab);
  Pipeline pipeline(in.vocab, provider.get(), cfg.pipeline);
  const auto results = pipeline.detect(in.ds, props);
  const auto gt_attr = pipeline.attributes_on_ground_truth(in.ds);

  detail::prepare_out(cfg);
  write_text_file(detail::out_path(cfg, kDetectionFile), detection_records(in.ds, results));
  write_text_file(detail::out_path(cfg, kEventFile), event_records(in.ds, results));
  write_text_file(detail::out_path(cfg, kGtAttributeFile), event_records(in.ds, gt_attr));

  std::size_t n_obj = 0, n_disc = 0, n_ev = 0, n_novel_attr = 0, skipped = 0;
  for (const auto& r : results) {
    n_obj += r.objects.size();
    n_disc += r.discovered_objects.size();
    n_ev += r.events.size();
    n_novel_attr += r.discovered_attributes.size();
    skipped += r.skipped_proposals;
  }
  out << detail::summary_line({{"command", "detect"},
                               {"frames", results.size()},
                               {"detections", n_obj},
                               {"discovered_objects", n_disc},
                               {"events", n_ev},
                               {"discovered_attributes", n_novel_attr},
                               {"skipped_proposals", skipped},
                               {"out", cfg.out}});
}

/// Reads detect outputs from cfg.detections (or cfg.out when unset).
inline EvalReport cmd_eval(const RunConfig& cfg, std::ostream& out, bool table = true) {
  const auto in = detail::load_inputs(cfg);
  const std::string dir = cfg.detections.empty() ? cfg.out : cfg.detections;
  const auto file = [&](const char* name) {
    const std::string p = (std::filesystem::path(dir) / name).string();
    return parse_jsonl(read_text_file(p), p);
  };
  EvalSettings st = cfg.eval;
  st.pair_distance = cfg.ovad_max_distance;
  const EvalReport rep =
      evaluate_records(in.ds, in.vocab, file(kDetectionFile), file(kEventFile), file(kGtAttributeFile), st);
  detail::prepare_out(cfg);
  write_text_file(detail::out_path(cfg, kEvalFile), canonical_dump(eval_report_to_json(rep)) + "\n");
  if (table) out << eval_report_table(rep);
  out << detail::summary_line(eval_report_to_json(rep));
  return rep;
}

struct LossCheckResult {
  std::vector<LossGradCheck> configs;
  double worst = 0.0;
  bool passed = false;
};

inline LossCheckResult run_loss_check(const RunConfig& cfg) {
  const auto& ls = cfg.losses;
  LossCheckResult r;
  for (int k = 0; k < ls.configs; ++k) {
    const auto seed = derive_seed(cfg.seed, {"losses-check", std::to_string(k)});
    const LossProblem p = random_loss_problem(seed, ls.rows, ls.dim, ls.classes, ls.attributes);
    r.configs.push_back(check_loss_gradients(p, ls.weights, ls.step));
    r.worst = std::max(r.worst, r.configs.back().worst());
  }
  r.passed = r.worst <= ls.tolerance;
  return r;
}

inline void cmd_losses_check(const RunConfig& cfg, std::ostream& out) {
  const LossCheckResult r = run_loss_check(cfg);
  json rows = json::array();
  for (const auto& c : r.configs)
    rows.push_back({{"od", c.od}, {"oc", c.oc}, {"ad", c.ad}, {"ac", c.ac}, {"total", c.total}});
  const json report{{"command", "losses-check"},
                    {"configs", cfg.losses.configs},
                    {"step", cfg.losses.step},
                    {"tolerance", cfg.losses.tolerance},
                    {"max_relative_error", r.worst},
                    {"passed", r.passed},
                    {"per_config", rows}};
  detail::prepare_out(cfg);
  write_text_file(detail::out_path(cfg, kLossFile), canonical_dump(report) + "\n");
  out << detail::summary_line({{"command", "losses-check"},
                               {"configs", cfg.losses.configs},
                               {"max_relative_error", r.worst},
                               {"passed", r.passed}});
  if (!r.passed)
    throw NonFiniteGradient("gradient check exceeded tolerance: " + std::to_string(r.worst));
}

inline void cmd_provider_probe(const RunConfig& cfg, std::ostream& out, int rounds = 5) {
  RemoteProvider provider(RemoteProviderConfig{cfg.provider.url, cfg.provider.dim, cfg.provider.timeout_s,
                                               cfg.provider.retries, cfg.provider.backoff_ms});
  const json health = provider.health();
  std::vector<double> ms;
  double norm = 0.0;
  for (int i = 0; i < rounds; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto v = provider.embed_text({"car"});
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    norm = std::sqrt(dot(v.front(), v.front()));
  }
  double mean = 0.0;
  for (double x : ms) mean += x;
  mean /= static_cast<double>(ms.size());
  out << detail::summary_line({{"command", "provider-probe"},
                               {"url", cfg.provider.url},
                               {"health", health},
                               {"dim", cfg.provider.dim},
                               {"vector_norm", norm},
                               {"latency_ms",
                                {{"min", *std::min_element(ms.begin(), ms.end())},
                                 {"mean", mean},
                                 {"max", *std::max_element(ms.begin(), ms.end())}}}});
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth", "build-ovad", "detect", "eval", "losses-check", "provider-probe"};
  return names;
}

inline void run_command(const std::string& name, const RunConfig& cfg, std::ostream& out) {
  if (name == "synth")
    cmd_synth(cfg, out);
  else if (name == "build-ovad")
    cmd_build_ovad(cfg, out);
  else if (name == "detect")
    cmd_detect(cfg, out);
  else if (name == "eval")
    cmd_eval(cfg, out);
  else if (name == "losses-check")
    cmd_losses_check(cfg, out);
  else if (name == "provider-probe")
    cmd_provider_probe(cfg, out);
  else
    throw ConfigError("unknown command '" + name + "'");
}

/// {"error": {"kind", "message", "exit_code"[, "retryable"]}}
inline std::string error_json(const Error& e) {
  json body{{"kind", e.kind()}, {"message", e.what()}, {"exit_code", static_cast<int>(e.exit_code())}};
  if (const auto* pe = dynamic_cast<const ProviderError*>(&e)) body["retryable"] = pe->retryable();
  return json{{"error", body}}.dump();
}

}  // namespace ovoda
