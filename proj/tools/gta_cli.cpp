// gta: command-line front end for the transductive attribute engine.
//
//   gta run         full loop for T iterations
//   gta transduct   one transductive solve on the current bank
//   gta mine        confused class pairs from a stored z
//   gta gen-attrs   query the LLM for new (or static) attributes
//   gta metrics     accuracy of a result against manifest ground truth
//   gta export-bank attribute embeddings + index for offline projection

#include "gta/http_clients.hpp"
#include "gta/orchestrator.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <memory>
#include <optional>

namespace {

using namespace gta;

struct RunFlags {
  std::string config;
  std::optional<std::string> features, manifest, bank, output, bank_output, checkpoint_dir;
  std::optional<std::string> mode, llm_endpoint, llm_model, bridge, gmm_weight_mode;
  std::optional<int> iterations, top_k, max_outer, inner_z, max_tokens, adapt_steps, in_flight;
  std::optional<double> alpha, coverage, lambda, tau, z_tol;
  std::optional<Index> knn;
  std::optional<std::uint64_t> seed;
  bool mock_embedder = false, no_attributes = false, no_transduct = false, no_generate = false,
       no_adapt = false, self_loops = false, per_class_cov = false, store_z = false,
       resume = false, large_dataset = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration; its keys override flags");
    app->add_option("--features", features, "EMB1 image features");
    app->add_option("--manifest", manifest, "dataset manifest JSON");
    app->add_option("--bank", bank, "attribute bank JSON");
    app->add_option("--output", output, "run result JSON");
    app->add_option("--bank-output", bank_output, "final attribute bank JSON");
    app->add_option("--checkpoint-dir", checkpoint_dir, "per-iteration checkpoints");
    app->add_option("--mode", mode, "zero-shot | few-shot | seen-classes");
    app->add_option("-T,--iterations", iterations, "outer iterations (default 30)");
    app->add_option("--top-k", top_k, "images per class for adaptation (default 8)");
    app->add_option("--alpha", alpha, "confusion margin threshold (default 0.1)");
    app->add_option("--coverage", coverage, "fraction of confused images to cover (default 0.05)");
    app->add_option("--lambda", lambda, "text agreement weight (default 1)");
    app->add_option("--tau", tau, "similarity temperature (default 0.01)");
    app->add_option("--knn", knn, "affinity graph neighbors (default 3)");
    app->add_option("--z-tol", z_tol, "solver convergence tolerance");
    app->add_option("--max-outer", max_outer, "solver outer iterations");
    app->add_option("--inner-z", inner_z, "z passes per outer iteration");
    app->add_option("--gmm-weight-mode", gmm_weight_mode, "as-written | unnormalized");
    app->add_option("--llm-endpoint", llm_endpoint, "chat-completions URL");
    app->add_option("--llm-model", llm_model, "model name sent to the endpoint");
    app->add_option("--max-tokens", max_tokens, "LLM max tokens (default 500)");
    app->add_option("--llm-in-flight", in_flight, "concurrent LLM requests");
    app->add_option("--bridge", bridge, "encoder bridge base URL or 'none'");
    app->add_option("--adapt-steps", adapt_steps, "fine-tuning passes per iteration");
    app->add_option("--seed", seed, "seed forwarded to the bridge and mock embedder");
    app->add_flag("--mock-embedder", mock_embedder, "test-only hash embedder for new texts");
    app->add_flag("--no-attributes", no_attributes, "class prompts only");
    app->add_flag("--no-transduct", no_transduct, "z = text prior");
    app->add_flag("--no-generate", no_generate, "disable LLM attribute generation");
    app->add_flag("--no-adapt", no_adapt, "disable encoder fine-tuning");
    app->add_flag("--self-loops", self_loops, "keep w_ii in the affinity graph");
    app->add_flag("--per-class-covariance", per_class_cov, "per-class diagonal variance");
    app->add_flag("--store-z", store_z, "write the full z matrix into the result");
    app->add_flag("--resume", resume, "continue from the latest matching checkpoint");
    app->add_flag("--large-dataset", large_dataset, "use alpha = 0.05");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (large_dataset) c.alpha = kLargeDatasetAlpha;
    auto set = [](const auto& opt, auto& field) {
      if (opt) field = *opt;
    };
    set(features, c.paths.features);
    set(manifest, c.paths.manifest);
    set(bank, c.paths.bank);
    set(output, c.paths.output);
    set(bank_output, c.paths.bank_output);
    set(checkpoint_dir, c.paths.checkpoint_dir);
    if (mode) c.mode = mode_from_string(*mode);
    set(iterations, c.iterations);
    set(top_k, c.top_k);
    set(alpha, c.alpha);
    set(coverage, c.coverage_fraction);
    set(lambda, c.solver.lambda);
    set(tau, c.temperature);
    set(knn, c.knn);
    set(z_tol, c.solver.z_tol);
    set(max_outer, c.solver.max_outer_iters);
    set(inner_z, c.solver.inner_z_iters);
    if (gmm_weight_mode) apply_json(json{{"solver", {{"gmm_weight_mode", *gmm_weight_mode}}}}, c);
    set(llm_endpoint, c.llm.endpoint_url);
    set(llm_model, c.llm.model_name);
    set(max_tokens, c.llm.max_tokens);
    set(in_flight, c.llm.max_in_flight);
    set(bridge, c.bridge);
    set(adapt_steps, c.adapt_steps);
    set(seed, c.seed);
    if (mock_embedder) c.allow_mock_embedder = true;
    if (no_attributes) c.use_attributes = false;
    if (no_transduct) c.use_transduct = false;
    if (no_generate) c.generate_attributes = false;
    if (no_adapt) c.adapt = false;
    if (self_loops) c.include_self_loops = true;
    if (per_class_cov) c.solver.per_class_covariance = true;
    if (store_z) c.store_z = true;
    if (resume) c.resume = true;
    // keys present in the config file win over flags
    if (!config.empty()) apply_json(read_json(config), c);
    return c;
  }
};

struct ServiceSet {
  std::unique_ptr<HttpChatClient> llm;
  std::unique_ptr<HttpBridge> bridge;
  std::unique_ptr<MockEmbedder> mock;
  Services view;
};

ServiceSet make_services(const RunConfig& cfg, Index dim) {
  ServiceSet s;
  if (!cfg.llm.endpoint_url.empty() && cfg.generate_attributes)
    s.llm = std::make_unique<HttpChatClient>(cfg.llm);
  if (!cfg.bridge.empty() && cfg.bridge != "none") {
    s.bridge = std::make_unique<HttpBridge>(cfg.bridge);
    if (!s.bridge->healthy())
      throw EndpointUnavailable("encoder bridge " + cfg.bridge + " is not reachable (GET /health failed)");
  }
  if (cfg.allow_mock_embedder) s.mock = std::make_unique<MockEmbedder>(dim, cfg.seed);
  s.view = Services{s.llm.get(), s.mock.get(), s.bridge.get()};
  return s;
}

Index feature_dim(const std::string& path) { return read_emb1(path).cols(); }

void print_summary(const RunResult& r) {
  json j{{"images", r.labels.size()}, {"iterations", r.objective.size()}};
  if (r.metrics)
    j["metrics"] = {{"top1_accuracy", r.metrics->top1},
                    {"mean_per_class_accuracy", r.metrics->mean_per_class}};
  if (!r.objective.empty()) j["final_objective"] = r.objective.back();
  std::cout << j.dump(2) << "\n";
}

int cmd_run(const RunFlags& flags) {
  RunConfig cfg = flags.resolve();
  ServiceSet s = make_services(cfg, feature_dim(cfg.paths.features));
  RunOutput out = run_from_files(cfg, s.view);
  print_summary(out.result);
  return 0;
}

int cmd_transduct(const RunFlags& flags) {
  RunConfig cfg = flags.resolve();
  cfg.iterations = 1;
  cfg.generate_attributes = false;
  cfg.adapt = false;
  cfg.store_z = true;
  cfg.paths.checkpoint_dir.clear();
  ServiceSet s = make_services(cfg, feature_dim(cfg.paths.features));
  RunOutput out = run_from_files(cfg, s.view);
  print_summary(out.result);
  return 0;
}

int cmd_mine(const std::string& result_path, double alpha, double coverage,
             const std::string& queried_path, const std::string& output) {
  const RunResult r = load_result(result_path);
  if (!r.z) throw Error("result has no z matrix; rerun with --store-z");
  std::set<ClassPair> queried;
  if (!queried_path.empty())
    for (const json& p : read_json(queried_path)) queried.insert(pair_from_json(p));
  ConfusionReport report = mine(*r.z, alpha);
  report.coverage_fraction = coverage;
  report.selected_pairs = select_pairs(report, coverage, queried);
  if (!output.empty()) write_json(output, to_json(report));
  json summary{{"entries", report.entries.size()}, {"selected_pairs", json::array()}};
  for (const auto& p : report.selected_pairs) {
    const std::string a = p.lo < static_cast<int>(r.classes.size()) ? r.classes[p.lo] : std::to_string(p.lo);
    const std::string b = p.hi < static_cast<int>(r.classes.size()) ? r.classes[p.hi] : std::to_string(p.hi);
    summary["selected_pairs"].push_back({{"pair", {p.lo, p.hi}}, {"classes", {a, b}},
                                         {"count", report.pair_counts.at(p)}});
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_gen_attrs(const RunFlags& flags, const std::string& report_path, bool static_only,
                  int iteration, const std::string& audit_path) {
  RunConfig cfg = flags.resolve();
  if (cfg.llm.endpoint_url.empty()) throw Error("--llm-endpoint is required");
  const DatasetManifest manifest = load_manifest(cfg.paths.manifest);
  HttpChatClient llm(cfg.llm);
  std::unique_ptr<TextEmbedder> embedder;
  if (!cfg.bridge.empty() && cfg.bridge != "none") embedder = std::make_unique<HttpBridge>(cfg.bridge);
  else if (cfg.allow_mock_embedder) {
    if (cfg.paths.features.empty()) throw Error("--mock-embedder needs --features for the dimension");
    embedder = std::make_unique<MockEmbedder>(feature_dim(cfg.paths.features), cfg.seed);
  } else {
    throw Error("an embedder is required: pass --bridge URL or --mock-embedder");
  }
  if (cfg.paths.output.empty()) throw Error("--output is required");

  if (static_only) {
    AttributeBank bank = bootstrap_static_bank(manifest.classes, manifest.domain_word, &llm, *embedder);
    save_bank(bank, cfg.paths.output);
    std::cout << "wrote static bank for " << bank.num_classes() << " classes\n";
    return 0;
  }
  AttributeBank bank = load_bank(cfg.paths.bank);
  const ConfusionReport report = report_from_json(read_json(report_path));
  const auto generated = generate_for_pairs(report.selected_pairs, bank, manifest.domain_word, llm, cfg.llm);
  const auto added = append_generated(bank, generated, *embedder, iteration);
  save_bank(bank, cfg.paths.output);
  if (!audit_path.empty()) {
    json audit = json::array();
    for (const auto& g : generated)
      audit.push_back({{"class", g.class_index}, {"pair", {g.source.lo, g.source.hi}},
                       {"texts", g.texts}, {"raw_response", g.raw_response}});
    write_json(audit_path, audit);
  }
  std::cout << "added " << added.size() << " attributes\n";
  return 0;
}

int cmd_metrics(const std::string& result_path, const std::string& manifest_path) {
  const RunResult r = load_result(result_path);
  const DatasetManifest m = load_manifest(manifest_path);
  std::vector<std::optional<int>> truth;
  if (r.image_ids.empty()) {
    truth = m.truth();
  } else {
    std::map<std::string, std::optional<int>> by_id;
    for (const auto& im : m.images) by_id[im.id] = im.label;
    for (const auto& id : r.image_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw Error("result image '" + id + "' not in manifest");
      truth.push_back(it->second);
    }
  }
  // Seen-class results use a renumbered class list.
  std::map<std::string, int> remap;
  for (std::size_t c = 0; c < r.classes.size(); ++c) remap[r.classes[c]] = static_cast<int>(c);
  const Index num_classes = r.classes.empty() ? m.num_classes() : static_cast<Index>(r.classes.size());
  if (!r.classes.empty() && r.classes != m.classes)
    for (auto& t : truth) {
      if (!t) continue;
      auto it = remap.find(m.classes[static_cast<std::size_t>(*t)]);
      t = it == remap.end() ? std::nullopt : std::optional<int>(it->second);
    }
  const Metrics metrics = compute_metrics(r.labels, truth, num_classes);
  std::cout << json{{"top1_accuracy", metrics.top1},
                    {"mean_per_class_accuracy", metrics.mean_per_class},
                    {"evaluated", metrics.evaluated}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_export_bank(const std::string& bank_path, const std::string& prefix) {
  const AttributeBank bank = load_bank(bank_path);
  Index rows = 0, dim = 0;
  for (const auto& list : bank.attrs)
    for (const auto& a : list) {
      ++rows;
      dim = a.embedding.size();
    }
  Matrix emb(rows, dim);
  json index = json::array();
  Index r = 0;
  for (std::size_t j = 0; j < bank.attrs.size(); ++j)
    for (const auto& a : bank.attrs[j]) {
      if (a.embedding.size() != dim) throw Error("attribute '" + a.text + "' has no embedding");
      emb.row(r++) = a.embedding.transpose();
      index.push_back({{"class", bank.classes[j]}, {"class_index", j}, {"text", a.text},
                       {"origin", std::string(to_string(a.origin))},
                       {"iteration_added", a.iteration_added}});
    }
  write_emb1(prefix + ".emb", emb);
  write_json(prefix + ".index.json", json{{"schema_version", kSchemaVersion}, {"rows", std::move(index)}});
  std::cout << "exported " << rows << " attribute embeddings\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transductive attribute-augmented label inference"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only warnings and errors");

  RunFlags run_flags, transduct_flags, gen_flags;
  auto* run_cmd = app.add_subcommand("run", "full loop for T iterations");
  run_flags.attach(run_cmd);
  auto* transduct_cmd = app.add_subcommand("transduct", "single transductive solve");
  transduct_flags.attach(transduct_cmd);

  auto* mine_cmd = app.add_subcommand("mine", "confused class pairs from a stored z");
  std::string mine_result, mine_output, mine_queried;
  double mine_alpha = kDefaultAlpha, mine_coverage = kDefaultCoverage;
  mine_cmd->add_option("--result", mine_result, "run result JSON with z")->required();
  mine_cmd->add_option("--alpha", mine_alpha, "margin threshold");
  mine_cmd->add_option("--coverage", mine_coverage, "fraction of confused images to cover");
  mine_cmd->add_option("--queried", mine_queried, "JSON list of already queried pairs");
  mine_cmd->add_option("--output", mine_output, "confusion report JSON");

  auto* gen_cmd = app.add_subcommand("gen-attrs", "generate attributes with the LLM");
  gen_flags.attach(gen_cmd);
  std::string gen_report, gen_audit;
  bool gen_static = false;
  int gen_iteration = 0;
  gen_cmd->add_option("--report", gen_report, "confusion report JSON with selected pairs");
  gen_cmd->add_flag("--static", gen_static, "bootstrap a static bank for every class");
  gen_cmd->add_option("--iteration", gen_iteration, "iteration recorded on new attributes");
  gen_cmd->add_option("--audit", gen_audit, "raw responses JSON");

  auto* metrics_cmd = app.add_subcommand("metrics", "accuracy against ground truth");
  std::string metrics_result, metrics_manifest;
  metrics_cmd->add_option("--result", metrics_result, "run result JSON")->required();
  metrics_cmd->add_option("--manifest", metrics_manifest, "dataset manifest JSON")->required();

  auto* export_cmd = app.add_subcommand("export-bank", "dump attribute embeddings");
  std::string export_bank, export_prefix;
  export_cmd->add_option("--bank", export_bank, "attribute bank JSON")->required();
  export_cmd->add_option("--output", export_prefix, "output prefix (.emb, .index.json)")->required();

  CLI11_PARSE(app, argc, argv);
  if (quiet) gta::log::set_level(gta::log::Level::kWarn);

  try {
    if (*run_cmd) return cmd_run(run_flags);
    if (*transduct_cmd) return cmd_transduct(transduct_flags);
    if (*mine_cmd) return cmd_mine(mine_result, mine_alpha, mine_coverage, mine_queried, mine_output);
    if (*gen_cmd) {
      if (!gen_static && gen_report.empty()) throw gta::Error("--report or --static is required");
      return cmd_gen_attrs(gen_flags, gen_report, gen_static, gen_iteration, gen_audit);
    }
    if (*metrics_cmd) return cmd_metrics(metrics_result, metrics_manifest);
    if (*export_cmd) return cmd_export_bank(export_bank, export_prefix);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
