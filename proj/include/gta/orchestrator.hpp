#pragma once

// The outer loop: transduct, mine confusions, generate and embed attributes,
// transduct again, then hand the top-k pseudo-labels to the encoder bridge and
// refresh embeddings. Repeated for T iterations.

#include "gta/adapt_job.hpp"
#include "gta/affinity_graph.hpp"
#include "gta/attribute_generator.hpp"
#include "gta/confusion_miner.hpp"
#include "gta/dataset_io.hpp"
#include "gta/embedder.hpp"
#include "gta/log.hpp"
#include "gta/model_state.hpp"
#include "gta/text_prior.hpp"
#include "gta/transduct_solver.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gta {

enum class Mode { kZeroShot, kFewShot, kSeenClasses };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kZeroShot: return "zero-shot";
    case Mode::kFewShot: return "few-shot";
    case Mode::kSeenClasses: return "seen-classes";
  }
  return "zero-shot";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "zero-shot") return Mode::kZeroShot;
  if (s == "few-shot") return Mode::kFewShot;
  if (s == "seen-classes") return Mode::kSeenClasses;
  throw Error("unknown mode '" + std::string(s) + "'");
}

struct RunPaths {
  std::string features;
  std::string manifest;
  std::string bank;
  std::string output;
  std::string bank_output;     // final bank; defaults to <output>.bank.json
  std::string checkpoint_dir;  // empty disables checkpoints
};

struct RunConfig {
  Mode mode = Mode::kZeroShot;
  int iterations = 30;  // T
  int top_k = 8;
  double alpha = kDefaultAlpha;
  double coverage_fraction = kDefaultCoverage;
  double temperature = kDefaultTemperature;
  Index knn = 3;
  bool include_self_loops = false;
  SolverConfig solver;
  LlmConfig llm;
  std::string bridge = "none";  // base URL of the encoder bridge

  // Component switches; every ablation configuration is reachable from these.
  bool use_attributes = true;       // false: class prompts only
  bool use_transduct = true;        // false: z = text prior
  bool generate_attributes = true;  // confusion-driven LLM queries
  bool adapt = true;                // encoder fine-tuning through the bridge

  bool allow_mock_embedder = false;
  int adapt_steps = 1;
  std::uint64_t seed = 0;
  bool store_z = false;
  bool resume = false;
  RunPaths paths;

  void check() const {
    if (iterations < 1) throw Error("T must be >= 1");
    if (top_k < 1) throw Error("top_k must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must be in (0, 1)");
    if (!(coverage_fraction > 0.0 && coverage_fraction <= 1.0))
      throw Error("coverage fraction must be in (0, 1]");
    if (!(temperature > 0.0)) throw Error("temperature must be > 0");
    if (adapt_steps < 0) throw Error("adapt_steps must be >= 0");
    solver.check();
    llm.check();
  }
};

inline json to_json(const RunConfig& c) {
  return json{
      {"mode", std::string(to_string(c.mode))},
      {"iterations", c.iterations},
      {"top_k", c.top_k},
      {"alpha", c.alpha},
      {"coverage_fraction", c.coverage_fraction},
      {"temperature", c.temperature},
      {"knn", c.knn},
      {"include_self_loops", c.include_self_loops},
      {"solver",
       {{"lambda", c.solver.lambda},
        {"max_outer_iters", c.solver.max_outer_iters},
        {"z_tol", c.solver.z_tol},
        {"inner_z_iters", c.solver.inner_z_iters},
        {"gmm_weight_mode",
         c.solver.gmm_weight_mode == GmmWeightMode::kAsWritten ? "as-written" : "unnormalized"},
        {"per_class_covariance", c.solver.per_class_covariance},
        {"sigma_floor", c.solver.sigma_floor}}},
      {"llm",
       {{"endpoint_url", c.llm.endpoint_url},
        {"model_name", c.llm.model_name},
        {"max_tokens", c.llm.max_tokens},
        {"request_timeout_s", c.llm.request_timeout_s},
        {"max_retries", c.llm.max_retries},
        {"temperature", c.llm.temperature},
        {"max_in_flight", c.llm.max_in_flight},
        {"api_key_env", c.llm.api_key_env}}},
      {"bridge", c.bridge},
      {"use_attributes", c.use_attributes},
      {"use_transduct", c.use_transduct},
      {"generate_attributes", c.generate_attributes},
      {"adapt", c.adapt},
      {"allow_mock_embedder", c.allow_mock_embedder},
      {"adapt_steps", c.adapt_steps},
      {"seed", c.seed},
      {"store_z", c.store_z},
      {"resume", c.resume},
      {"paths",
       {{"features", c.paths.features},
        {"manifest", c.paths.manifest},
        {"bank", c.paths.bank},
        {"output", c.paths.output},
        {"bank_output", c.paths.bank_output},
        {"checkpoint_dir", c.paths.checkpoint_dir}}}};
}

/// Overlays the keys present in `j` onto `c`; absent keys keep their value.
inline void apply_json(const json& j, RunConfig& c) {
  auto get = [](const json& obj, const char* key, auto& field) {
    if (obj.contains(key) && !obj[key].is_null())
      field = obj[key].get<std::decay_t<decltype(field)>>();
  };
  if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
  get(j, "iterations", c.iterations);
  get(j, "top_k", c.top_k);
  get(j, "alpha", c.alpha);
  get(j, "coverage_fraction", c.coverage_fraction);
  get(j, "temperature", c.temperature);
  get(j, "knn", c.knn);
  get(j, "include_self_loops", c.include_self_loops);
  if (j.contains("solver")) {
    const json& s = j["solver"];
    get(s, "lambda", c.solver.lambda);
    get(s, "max_outer_iters", c.solver.max_outer_iters);
    get(s, "z_tol", c.solver.z_tol);
    get(s, "inner_z_iters", c.solver.inner_z_iters);
    if (s.contains("gmm_weight_mode")) {
      const auto m = s["gmm_weight_mode"].get<std::string>();
      if (m == "as-written") c.solver.gmm_weight_mode = GmmWeightMode::kAsWritten;
      else if (m == "unnormalized") c.solver.gmm_weight_mode = GmmWeightMode::kUnnormalized;
      else throw Error("unknown gmm_weight_mode '" + m + "'");
    }
    get(s, "per_class_covariance", c.solver.per_class_covariance);
    get(s, "sigma_floor", c.solver.sigma_floor);
  }
  if (j.contains("llm")) {
    const json& l = j["llm"];
    get(l, "endpoint_url", c.llm.endpoint_url);
    get(l, "model_name", c.llm.model_name);
    get(l, "max_tokens", c.llm.max_tokens);
    get(l, "request_timeout_s", c.llm.request_timeout_s);
    get(l, "max_retries", c.llm.max_retries);
    get(l, "temperature", c.llm.temperature);
    get(l, "max_in_flight", c.llm.max_in_flight);
    get(l, "api_key_env", c.llm.api_key_env);
  }
  get(j, "bridge", c.bridge);
  get(j, "use_attributes", c.use_attributes);
  get(j, "use_transduct", c.use_transduct);
  get(j, "generate_attributes", c.generate_attributes);
  get(j, "adapt", c.adapt);
  get(j, "allow_mock_embedder", c.allow_mock_embedder);
  get(j, "adapt_steps", c.adapt_steps);
  get(j, "seed", c.seed);
  get(j, "store_z", c.store_z);
  get(j, "resume", c.resume);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    get(p, "features", c.paths.features);
    get(p, "manifest", c.paths.manifest);
    get(p, "bank", c.paths.bank);
    get(p, "output", c.paths.output);
    get(p, "bank_output", c.paths.bank_output);
    get(p, "checkpoint_dir", c.paths.checkpoint_dir);
  }
}

/// Hash of everything that affects the numeric trajectory. T, paths and the
/// resume flag are excluded so a run can be resumed and extended.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("iterations");
  j.erase("paths");
  j.erase("resume");
  j.erase("store_z");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

// --- external encoder ---------------------------------------------------------

struct FinetuneOutcome {
  std::optional<Matrix> features;         // rows follow the run's image order
  std::optional<Matrix> text_embeddings;  // rows follow the texts sent with the job
};

/// The deep-learning side: text/image embedding and pseudo-label fine-tuning.
class EncoderBridge : public TextEmbedder {
 public:
  virtual Matrix embed_images(const std::vector<std::string>& ids) = 0;
  virtual FinetuneOutcome finetune(const AdaptJob& job, const std::vector<std::string>& image_ids,
                                   const std::vector<std::string>& texts) = 0;
};

struct Services {
  ChatClient* llm = nullptr;
  TextEmbedder* embedder = nullptr;  // used only when allow_mock_embedder is set
  EncoderBridge* bridge = nullptr;
};

// --- supervision modes ----------------------------------------------------------

inline ClampLabels fewshot_clamps(const DatasetManifest& manifest) {
  ClampLabels clamps(manifest.images.size());
  if (manifest.fewshot_labels.empty()) return clamps;
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < manifest.images.size(); ++i) row_of[manifest.images[i].id] = i;
  for (const FewShotLabel& l : manifest.fewshot_labels) {
    auto it = row_of.find(l.id);
    if (it == row_of.end()) throw Error("few-shot label for unknown image id '" + l.id + "'");
    if (l.label < 0 || l.label >= manifest.num_classes())
      throw Error("few-shot label " + std::to_string(l.label) + " out of range");
    clamps[it->second] = l.label;
  }
  return clamps;
}

/// Sets and fixes the labeled rows of z to their one-hot vectors.
inline Assignments apply_fewshot(const DatasetManifest& manifest, Matrix z) {
  return make_assignments(std::move(z), fewshot_clamps(manifest));
}

struct SeenClassPlan {
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  std::vector<Index> seen_images;    // labeled images of seen classes
  std::vector<Index> target_images;  // images transduction runs on
};

inline SeenClassPlan seen_class_split(const DatasetManifest& manifest) {
  SeenClassPlan plan;
  plan.seen_classes = manifest.seen_classes;
  std::sort(plan.seen_classes.begin(), plan.seen_classes.end());
  const std::set<int> seen(plan.seen_classes.begin(), plan.seen_classes.end());
  if (manifest.unseen_classes.empty()) {
    for (int c = 0; c < manifest.num_classes(); ++c)
      if (!seen.contains(c)) plan.unseen_classes.push_back(c);
  } else {
    plan.unseen_classes = manifest.unseen_classes;
    std::sort(plan.unseen_classes.begin(), plan.unseen_classes.end());
    for (int c : plan.unseen_classes)
      if (seen.contains(c))
        throw Error("class " + std::to_string(c) + " is marked both seen and unseen");
  }
  if (plan.unseen_classes.empty()) throw Error("seen-class mode needs at least one unseen class");
  const std::set<int> unseen(plan.unseen_classes.begin(), plan.unseen_classes.end());
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    const ImageRecord& im = manifest.images[i];
    const Index row = static_cast<Index>(i);
    if (im.split == "seen" || (im.label && seen.contains(*im.label))) {
      if (im.label && seen.contains(*im.label)) plan.seen_images.push_back(row);
      continue;
    }
    if (!im.label || unseen.contains(*im.label)) plan.target_images.push_back(row);
  }
  return plan;
}

// --- adapt job ------------------------------------------------------------------

/// Top-k images per class by z[., j], ties to the lower row index.
inline AdaptJob build_adapt_job(const Matrix& z, const std::vector<std::string>& ids,
                                const AttributeBank& bank, int top_k,
                                const ClampLabels& clamps = {}) {
  AdaptJob job;
  job.classes = bank.classes;
  const Index n = z.rows();
  const Index k = std::min<Index>(top_k, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index j = 0; j < z.cols(); ++j) {
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
      return z(a, j) > z(b, j) || (z(a, j) == z(b, j) && a < b);
    });
    auto& list = job.images.emplace_back();
    for (Index r = 0; r < k; ++r)
      list.push_back({ids[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])],
                      z(order[static_cast<std::size_t>(r)], j)});
    std::vector<std::string> texts;
    for (const Attribute& a : bank.attrs[static_cast<std::size_t>(j)]) texts.push_back(a.text);
    job.attributes.push_back(std::move(texts));
  }
  job.fewshot_ids.resize(job.classes.size());
  for (std::size_t i = 0; i < clamps.size(); ++i)
    if (clamps[i]) job.fewshot_ids[static_cast<std::size_t>(*clamps[i])].push_back(ids[i]);
  return job;
}

// --- checkpoints ----------------------------------------------------------------

struct Checkpoint {
  int iteration = 0;
  std::string config_hash;
  AttributeBank bank;
  Matrix z;
  std::vector<ClassPair> queried_pairs;
  std::vector<double> objective;
  std::vector<std::vector<double>> objective_traces;
  std::optional<Matrix> features;  // present once the bridge has refreshed them

  bool operator==(const Checkpoint& o) const {
    return iteration == o.iteration && config_hash == o.config_hash && bank == o.bank &&
           z.rows() == o.z.rows() && z.cols() == o.z.cols() && z == o.z &&
           queried_pairs == o.queried_pairs && objective == o.objective &&
           objective_traces == o.objective_traces &&
           features.has_value() == o.features.has_value() &&
           (!features || (features->rows() == o.features->rows() && *features == *o.features));
  }
};

inline json to_json(const Checkpoint& c) {
  json pairs = json::array();
  for (const auto& p : c.queried_pairs) pairs.push_back({p.lo, p.hi});
  json j{{"schema_version", kSchemaVersion}, {"iteration", c.iteration},
         {"config_hash", c.config_hash},     {"bank", to_json(c.bank)},
         {"z", matrix_to_json(c.z)},         {"queried_pairs", std::move(pairs)},
         {"objective", c.objective},         {"objective_traces", c.objective_traces}};
  if (c.features) j["features"] = matrix_to_json(*c.features);
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  check_schema(j, "checkpoint");
  Checkpoint c;
  c.iteration = j.at("iteration").get<int>();
  c.config_hash = j.at("config_hash").get<std::string>();
  c.bank = bank_from_json(j.at("bank"));
  c.z = matrix_from_json(j.at("z"));
  for (const json& p : j.at("queried_pairs")) c.queried_pairs.push_back(pair_from_json(p));
  c.objective = j.at("objective").get<std::vector<double>>();
  c.objective_traces = j.at("objective_traces").get<std::vector<std::vector<double>>>();
  if (j.contains("features")) c.features = matrix_from_json(j["features"]);
  return c;
}

inline std::string checkpoint_path(const std::string& dir, int iteration) {
  std::ostringstream os;
  os << "iter_" << std::setw(4) << std::setfill('0') << iteration << ".json";
  return (std::filesystem::path(dir) / os.str()).string();
}

/// Latest checkpoint in `dir` whose config hash matches, if any.
inline std::optional<Checkpoint> latest_checkpoint(const std::string& dir, const std::string& hash,
                                                   int max_iteration) {
  if (dir.empty() || !std::filesystem::is_directory(dir)) return std::nullopt;
  for (int t = max_iteration; t >= 1; --t) {
    const std::string path = checkpoint_path(dir, t);
    if (!std::filesystem::exists(path)) continue;
    Checkpoint c = checkpoint_from_json(read_json(path));
    if (c.config_hash == hash) return c;
    log::warn() << "ignoring checkpoint " << path << ": configuration changed";
  }
  return std::nullopt;
}

// --- the loop -------------------------------------------------------------------

struct RunInputs {
  FeatureMatrix features;
  DatasetManifest manifest;
  AttributeBank bank;
};

struct RunOutput {
  RunResult result;
  AttributeBank bank;
  Assignments z;
  std::vector<ClassPair> queried_pairs;
  int iterations_run = 0;
};

namespace detail {

inline Matrix refresh_texts(TextEmbedder& embedder, AttributeBank& bank) {
  std::vector<std::string> texts;
  for (const auto& list : bank.attrs)
    for (const auto& a : list) texts.push_back(a.text);
  Matrix emb = normalized_embeddings(embedder.embed(texts));
  if (emb.rows() != static_cast<Index>(texts.size()))
    throw Error("embedder returned the wrong number of rows");
  Index r = 0;
  for (auto& list : bank.attrs)
    for (auto& a : list) a.embedding = emb.row(r++).transpose();
  return emb;
}

inline std::vector<std::string> all_texts(const AttributeBank& bank) {
  std::vector<std::string> texts;
  for (const auto& list : bank.attrs)
    for (const auto& a : list) texts.push_back(a.text);
  return texts;
}

inline void set_text_embeddings(AttributeBank& bank, const Matrix& emb) {
  Matrix normed = normalized_embeddings(emb);
  Index r = 0;
  for (auto& list : bank.attrs)
    for (auto& a : list) {
      if (r >= normed.rows()) throw Error("too few refreshed text embeddings");
      a.embedding = normed.row(r++).transpose();
    }
  if (r != normed.rows()) throw Error("too many refreshed text embeddings");
}

/// Keeps only the class prompt of every class, creating it when missing.
inline AttributeBank prompt_only_bank(const AttributeBank& bank, TextEmbedder* embedder) {
  AttributeBank out;
  out.classes = bank.classes;
  out.attrs.resize(bank.classes.size());
  for (std::size_t j = 0; j < bank.classes.size(); ++j) {
    for (const Attribute& a : bank.attrs[j])
      if (a.origin == Origin::kPrompt) out.attrs[j].push_back(a);
    if (!out.attrs[j].empty()) continue;
    if (embedder == nullptr)
      throw Error("class '" + bank.classes[j] +
                  "' has no prompt attribute and no embedder is available");
    const std::string text = class_prompt_text(bank.classes[j]);
    out.attrs[j].push_back(
        Attribute{text, embedder->embed({text}).row(0).transpose(), Origin::kPrompt, 0});
  }
  return out;
}

}  // namespace detail

inline RunOutput run(RunInputs in, const RunConfig& cfg, const Services& svc) {
  cfg.check();
  validate_manifest(in.manifest);
  if (in.features.size() != static_cast<Index>(in.manifest.images.size()))
    throw Error("feature rows (" + std::to_string(in.features.size()) +
                ") do not match manifest images (" + std::to_string(in.manifest.images.size()) +
                ")");
  if (in.bank.classes != in.manifest.classes)
    throw Error("attribute bank classes do not match the manifest");
  if (in.features.ids.empty()) in.features.ids = in.manifest.image_ids();

  TextEmbedder* embedder = svc.bridge;
  if (embedder == nullptr && cfg.allow_mock_embedder) embedder = svc.embedder;

  // Embed text-only banks up front.
  const bool missing = std::any_of(in.bank.attrs.begin(), in.bank.attrs.end(), [](const auto& l) {
    return std::any_of(l.begin(), l.end(), [](const Attribute& a) { return a.embedding.size() == 0; });
  });
  if (missing) {
    if (embedder == nullptr) throw Error("attribute bank lacks embeddings and no embedder is available");
    detail::refresh_texts(*embedder, in.bank);
  }
  if (auto v = validate(in.bank); !v.empty()) throw Error("invalid attribute bank: " + v.front().what);
  if (auto v = validate(in.features); !v.empty()) throw Error("invalid features: " + v.front().what);

  AttributeBank bank = cfg.use_attributes ? std::move(in.bank)
                                          : detail::prompt_only_bank(in.bank, embedder);
  FeatureMatrix features = std::move(in.features);
  const ClampLabels clamps =
      cfg.mode == Mode::kFewShot ? fewshot_clamps(in.manifest) : ClampLabels{};

  const bool generating = cfg.use_attributes && cfg.generate_attributes && svc.llm != nullptr &&
                          embedder != nullptr;
  if (cfg.use_attributes && cfg.generate_attributes && svc.llm != nullptr && embedder == nullptr)
    log::warn() << "no encoder bridge or mock embedder: dynamic attribute generation disabled";
  const bool adapting = cfg.adapt && svc.bridge != nullptr;

  const std::string hash = config_hash(cfg);
  RunOutput out;
  std::set<ClassPair> queried;
  int start = 1;
  Matrix z_final;
  if (cfg.resume) {
    if (auto ck = latest_checkpoint(cfg.paths.checkpoint_dir, hash, cfg.iterations)) {
      log::info() << "resuming after iteration " << ck->iteration;
      start = ck->iteration + 1;
      out.iterations_run = ck->iteration;
      bank = std::move(ck->bank);
      if (ck->features) features.data = *ck->features;
      queried.insert(ck->queried_pairs.begin(), ck->queried_pairs.end());
      out.queried_pairs = ck->queried_pairs;
      out.result.objective = std::move(ck->objective);
      out.result.objective_traces = std::move(ck->objective_traces);
      z_final = std::move(ck->z);
    }
  }

  bool features_refreshed = false;
  auto make_graph = [&] {
    return cfg.use_transduct ? build_graph(features, GraphOptions{cfg.knn, cfg.include_self_loops})
                             : AffinityGraph::empty(features.size());
  };
  AffinityGraph graph = make_graph();
  auto cache = std::make_unique<SimilarityCache>(features, bank);

  auto solve = [&](const TextPrior& prior) -> Matrix {
    if (!cfg.use_transduct) return make_assignments(prior.y_hat, clamps).z;
    TransductResult r = transduct(features, prior, graph, std::nullopt, clamps, cfg.solver);
    out.result.objective_traces.push_back(r.objective_trace);
    return std::move(r.z.z);
  };

  for (int t = start; t <= cfg.iterations; ++t) {
    Matrix z = solve(text_predictions(cache->s_bar(cfg.temperature)));

    if (generating) {
      ConfusionReport report = mine(z, cfg.alpha);
      const std::vector<ClassPair> pairs = select_pairs(report, cfg.coverage_fraction, queried);
      if (!pairs.empty()) {
        const auto generated =
            generate_for_pairs(pairs, bank, in.manifest.domain_word, *svc.llm, cfg.llm);
        const auto added = append_generated(bank, generated, *embedder, t);
        for (const auto& [cls, emb] : added) cache->append(cls, emb);
        for (const ClassPair& p : pairs) {
          queried.insert(p);
          out.queried_pairs.push_back(p);
        }
        log::info() << "iteration " << t << ": " << pairs.size() << " pairs queried, "
                    << added.size() << " attributes added";
        if (!added.empty()) z = solve(text_predictions(cache->s_bar(cfg.temperature)));
      }
    }

    if (!out.result.objective_traces.empty() && cfg.use_transduct)
      out.result.objective.push_back(out.result.objective_traces.back().back());

    if (adapting) {
      AdaptJob job = build_adapt_job(z, features.ids, bank, cfg.top_k, clamps);
      job.iteration = t;
      job.steps = cfg.adapt_steps;
      job.seed = cfg.seed;
      const std::vector<std::string> texts = detail::all_texts(bank);
      FinetuneOutcome refreshed = svc.bridge->finetune(job, features.ids, texts);
      features.data = normalized_embeddings(refreshed.features ? std::move(*refreshed.features)
                                                               : svc.bridge->embed_images(features.ids));
      if (features.data.rows() != static_cast<Index>(features.ids.size()))
        throw Error("bridge returned the wrong number of image embeddings");
      detail::set_text_embeddings(bank, refreshed.text_embeddings ? *refreshed.text_embeddings
                                                                  : svc.bridge->embed(texts));
      features_refreshed = true;
      graph = make_graph();
      cache = std::make_unique<SimilarityCache>(features, bank);
    }

    z_final = std::move(z);
    out.iterations_run = t;
    if (!cfg.paths.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.paths.checkpoint_dir);
      Checkpoint ck{t, hash, bank, z_final, out.queried_pairs, out.result.objective,
                    out.result.objective_traces,
                    features_refreshed ? std::optional<Matrix>(features.data) : std::nullopt};
      write_json(checkpoint_path(cfg.paths.checkpoint_dir, t), to_json(ck));
    }
  }

  if (z_final.size() == 0)  // resumed from a checkpoint at or past T
    throw Error("nothing to run: checkpoint already covers " + std::to_string(cfg.iterations) +
                " iterations");

  RunResult& r = out.result;
  r.classes = bank.classes;
  r.image_ids = features.ids;
  r.labels = argmax_rows(z_final);
  const auto truth = in.manifest.truth();
  if (std::any_of(truth.begin(), truth.end(), [](const auto& t) { return t.has_value(); })) {
    std::vector<bool> exclude(truth.size(), false);
    for (std::size_t i = 0; i < clamps.size(); ++i) exclude[i] = clamps[i].has_value();
    try {
      r.metrics = compute_metrics(r.labels, truth, in.manifest.num_classes(), exclude);
    } catch (const Error&) {
      // every image with ground truth is a labeled few-shot image
    }
  }
  if (cfg.store_z) r.z = z_final;
  out.z = make_assignments(std::move(z_final), clamps);
  out.bank = std::move(bank);
  return out;
}

// --- seen-class mode ------------------------------------------------------------

/// Restricts a run to the target images and unseen classes of `plan`, with
/// class indices renumbered in ascending order.
inline RunInputs restrict_to_unseen(const RunInputs& in, const SeenClassPlan& plan) {
  RunInputs sub;
  std::map<int, int> remap;
  for (std::size_t k = 0; k < plan.unseen_classes.size(); ++k)
    remap[plan.unseen_classes[k]] = static_cast<int>(k);

  sub.manifest.dataset_name = in.manifest.dataset_name;
  sub.manifest.domain_word = in.manifest.domain_word;
  for (int c : plan.unseen_classes) {
    sub.manifest.classes.push_back(in.manifest.classes[static_cast<std::size_t>(c)]);
    sub.bank.classes.push_back(in.bank.classes[static_cast<std::size_t>(c)]);
    sub.bank.attrs.push_back(in.bank.attrs[static_cast<std::size_t>(c)]);
  }
  sub.features.data.resize(static_cast<Index>(plan.target_images.size()), in.features.dim());
  for (std::size_t k = 0; k < plan.target_images.size(); ++k) {
    const Index row = plan.target_images[k];
    sub.features.data.row(static_cast<Index>(k)) = in.features.data.row(row);
    ImageRecord im = in.manifest.images[static_cast<std::size_t>(row)];
    if (im.label) im.label = remap.at(*im.label);
    sub.features.ids.push_back(im.id);
    sub.manifest.images.push_back(std::move(im));
  }
  return sub;
}

/// Adapts the encoders on labeled seen-class images (when a bridge is present),
/// then runs zero-shot transduction over the unseen classes only.
inline RunOutput run_seen_classes(RunInputs in, RunConfig cfg, const Services& svc) {
  const SeenClassPlan plan = seen_class_split(in.manifest);
  if (in.features.ids.empty()) in.features.ids = in.manifest.image_ids();
  if (!plan.seen_classes.empty() && svc.bridge != nullptr && cfg.adapt) {
    AdaptJob job;
    job.kind = "seen-classes";
    job.steps = cfg.adapt_steps;
    job.seed = cfg.seed;
    for (int c : plan.seen_classes) {
      job.classes.push_back(in.manifest.classes[static_cast<std::size_t>(c)]);
      job.images.emplace_back();
      std::vector<std::string> texts;
      for (const Attribute& a : in.bank.attrs[static_cast<std::size_t>(c)]) texts.push_back(a.text);
      job.attributes.push_back(std::move(texts));
      auto& ids = job.fewshot_ids.emplace_back();
      for (Index row : plan.seen_images)
        if (in.manifest.images[static_cast<std::size_t>(row)].label == c)
          ids.push_back(in.manifest.images[static_cast<std::size_t>(row)].id);
    }
    const auto texts = detail::all_texts(in.bank);
    FinetuneOutcome refreshed = svc.bridge->finetune(job, in.features.ids, texts);
    in.features.data = normalized_embeddings(
        refreshed.features ? std::move(*refreshed.features) : svc.bridge->embed_images(in.features.ids));
    detail::set_text_embeddings(in.bank, refreshed.text_embeddings ? *refreshed.text_embeddings
                                                                   : svc.bridge->embed(texts));
  }
  cfg.mode = Mode::kZeroShot;
  return run(restrict_to_unseen(in, plan), cfg, svc);
}

inline RunOutput run_mode(RunInputs in, const RunConfig& cfg, const Services& svc) {
  if (cfg.mode == Mode::kSeenClasses) return run_seen_classes(std::move(in), cfg, svc);
  return run(std::move(in), cfg, svc);
}

/// Loads inputs from cfg.paths, runs, and writes the result and final bank.
inline RunOutput run_from_files(const RunConfig& cfg, const Services& svc) {
  RunInputs in;
  in.manifest = load_manifest(cfg.paths.manifest);
  const auto ids = in.manifest.image_ids();
  in.features = load_features(cfg.paths.features, &ids);
  in.bank = load_bank(cfg.paths.bank);
  RunOutput out = run_mode(std::move(in), cfg, svc);
  if (!cfg.paths.output.empty()) {
    const std::string bank_path =
        cfg.paths.bank_output.empty() ? cfg.paths.output + ".bank.json" : cfg.paths.bank_output;
    save_bank(out.bank, bank_path);
    out.result.bank_snapshot = bank_path;
    save_result(out.result, cfg.paths.output);
  }
  return out;
}

}  // namespace gta
