// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "gta/attribute_generator.hpp"
#include "gta/confusion_miner.hpp"
#include "gta/dataset_io.hpp"
#include "gta/orchestrator.hpp"
#include "gta/transduct_solver.hpp"

#include "golden_cases.hpp"
#include "mock_services.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

namespace {

using namespace gta;
using testing::TempDir;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

Outcome monotone_descent() {
  const auto start = std::chrono::steady_clock::now();
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  for (int inst = 0; inst < 20; ++inst) {
    std::mt19937_64 rng(1000 + inst);
    const FeatureMatrix f = testing::positive_features(rng, 200, 16, 5);
    const TextPrior prior = testing::random_prior(rng, 200, 5, 2.0);
    // every pair plus self-loops: W = F F', which is PSD
    const AffinityGraph graph = build_graph(f, GraphOptions{199, true});
    const TransductResult r = transduct(f, prior, graph, std::nullopt, {}, SolverConfig{});
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k, ++steps)
      worst = std::max(worst, r.objective_trace[k] - r.objective_trace[k - 1]);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-7 && secs < 5.0,
          "20 instances, " + std::to_string(steps) + " block steps, max increase " + fmt(worst) + ", " +
              fmt(secs) + " s"};
}

Outcome z_update_oracle() {
  double worst = 0.0;
  int rows = 0;
  for (int inst = 0; inst < 10; ++inst) {
    std::mt19937_64 rng(2000 + inst);
    const Index n = 10, m = 3;
    const FeatureMatrix f = testing::random_features(rng, n, 4);
    GmmState g;
    g.mu = testing::random_features(rng, m, 4).data;
    g.sigma2 = Vector::Constant(4, 0.1 + 0.05 * inst);
    const TextPrior prior = testing::random_prior(rng, n, m, 1.5);
    const AffinityGraph graph = build_graph(f, 3);
    const Assignments z_old = make_assignments(testing::random_simplex(rng, n, m));
    SolverConfig cfg;
    cfg.lambda = 0.5 + 0.25 * inst;
    const Matrix z = z_update_pass(gaussian_log_density(f, g), log_prior(prior), graph, z_old, cfg);

    const Matrix logp = oracle::log_density(f.data, g.mu, g.sigma2);
    const Matrix logy = oracle::log_softmax(prior.s_bar);
    const Matrix w = graph.dense();
    for (Index i = 0; i < n; ++i, ++rows) {
      std::vector<double> a(static_cast<std::size_t>(m));
      for (Index j = 0; j < m; ++j) {
        double nbr = 0.0;
        for (Index k = 0; k < n; ++k) nbr += w(i, k) * z_old.z(k, j);
        a[static_cast<std::size_t>(j)] = logp(i, j) / static_cast<double>(n) + cfg.lambda * logy(i, j) + 2.0 * nbr;
      }
      const auto ref = oracle::minimize_row_surrogate(a);
      for (Index j = 0; j < m; ++j) worst = std::max(worst, std::abs(z(i, j) - ref[static_cast<std::size_t>(j)]));
    }
  }
  return {rows == 100 && worst <= 1e-4, std::to_string(rows) + " rows, max abs diff " + fmt(worst)};
}

Outcome em_reduction() {
  std::mt19937_64 rng(3000);
  const Index n = 100, m = 3, d = 4;
  const FeatureMatrix f = testing::random_features(rng, n, d);
  const TextPrior prior = testing::random_prior(rng, n, m, 1.0);
  SolverConfig cfg;
  cfg.lambda = 1e-8;
  cfg.max_outer_iters = 10;
  cfg.z_tol = std::numeric_limits<double>::min();
  cfg.record_snapshots = true;
  const TransductResult r = transduct(f, prior, AffinityGraph::empty(n), std::nullopt, {}, cfg);
  const auto ref = oracle::tempered_em(f.data, prior.y_hat, 10, 1.0 / static_cast<double>(n));
  if (r.snapshots.size() != 10) return {false, "solver stopped after " + std::to_string(r.snapshots.size()) + " iterations"};
  double dz = 0.0, dmu = 0.0, ds = 0.0;
  for (std::size_t k = 0; k < 10; ++k) {
    dz = std::max(dz, max_abs(r.snapshots[k].z, ref[k].resp));
    dmu = std::max(dmu, max_abs(r.snapshots[k].gmm.mu, ref[k].mu));
    ds = std::max(ds, (r.snapshots[k].gmm.sigma2 - ref[k].sigma2).cwiseAbs().maxCoeff());
  }
  return {dz <= 1e-6 && dmu <= 1e-6 && ds <= 1e-6,
          "10 iterates, max diff z " + fmt(dz) + ", mu " + fmt(dmu) + ", sigma2 " + fmt(ds)};
}

Outcome lambda_dominance() {
  int mismatched_rows = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::mt19937_64 rng(4000 + inst);
    const Index n = 60, m = 2 + inst % 5;
    const FeatureMatrix f = testing::random_features(rng, n, 8);
    const TextPrior prior = testing::random_prior(rng, n, m, 1.0);
    SolverConfig cfg;
    cfg.lambda = 1e6;
    const TransductResult r = transduct(f, prior, build_graph(f, 3), std::nullopt, {}, cfg);
    const auto a = argmax_rows(r.z.z), b = argmax_rows(prior.y_hat);
    for (std::size_t i = 0; i < a.size(); ++i) mismatched_rows += a[i] != b[i] ? 1 : 0;
  }
  return {mismatched_rows == 0, "50 instances, " + std::to_string(mismatched_rows) + " rows differ"};
}

Outcome synthetic_gain() {
  int better = 0;
  double sum = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const testing::TwoClusters data = testing::two_clusters(5000 + trial);
    const TransductResult r = transduct(data.features, data.prior, build_graph(data.features, 3),
                                        std::nullopt, {}, SolverConfig{});
    const double acc = testing::accuracy(argmax_rows(r.z.z), data.truth);
    better += acc > data.prior_accuracy ? 1 : 0;
    sum += acc;
  }
  const double mean = sum / 20.0;
  return {better >= 19 && mean >= 0.95,
          std::to_string(better) + "/20 trials beat the prior, mean accuracy " + fmt(mean)};
}

Outcome mining_oracle() {
  int exact = 0, bound = 0;
  for (int inst = 0; inst < 50; ++inst) {
    std::mt19937_64 rng(6000 + inst);
    const Index n = 50 + 10 * (inst % 5), m = 2 + inst % 7;
    Matrix z = testing::random_simplex(rng, n, m);
    if (inst % 10 == 0) z.row(0).setConstant(1.0 / static_cast<double>(m));  // full tie
    const double alpha = 0.05 + 0.05 * (inst % 4);
    const ConfusionReport r = mine(z, alpha);
    exact += r.entries == oracle::mine(z, alpha) ? 1 : 0;

    std::set<ClassPair> queried;
    for (const auto& [p, c] : r.pair_counts)
      if (rng() % 3 == 0) queried.insert(p);
    const double coverage = 0.05 * (1 + inst % 6);
    int covered = 0, available = 0;
    for (const auto& p : select_pairs(r, coverage, queried)) covered += r.pair_counts.at(p);
    for (const auto& [p, c] : r.pair_counts)
      if (!queried.contains(p)) available += c;
    bound += (covered >= coverage * static_cast<double>(r.entries.size()) || covered == available) ? 1 : 0;
  }
  return {exact == 50 && bound == 50,
          std::to_string(exact) + "/50 match the sort oracle, coverage bound on " + std::to_string(bound) + "/50"};
}

Outcome clamp_invariance() {
  auto t = testing::toy_data(7000, 30, 3, 16, 0.14, 1.6);
  for (std::size_t i = 0; i < t.inputs.manifest.images.size(); i += 10)
    t.inputs.manifest.fewshot_labels.push_back({t.inputs.manifest.images[i].id, *t.inputs.manifest.images[i].label});
  TempDir dir("accept_clamp");
  RunConfig cfg = testing::mock_config(30);
  cfg.mode = Mode::kFewShot;
  cfg.alpha = 0.9;
  cfg.coverage_fraction = 1.0;
  cfg.paths.checkpoint_dir = dir.file("ck");
  testing::SignatureLlm llm;
  run(t.inputs, cfg, Services{&llm, &t.embedder, nullptr});

  int violations = 0, checked = 0;
  for (int it = 1; it <= 30; ++it) {
    const Checkpoint ck = checkpoint_from_json(read_json(checkpoint_path(cfg.paths.checkpoint_dir, it)));
    for (const auto& l : t.inputs.manifest.fewshot_labels) {
      const Index row = std::stoi(l.id.substr(3));
      for (Index j = 0; j < ck.z.cols(); ++j) violations += ck.z(row, j) != (j == l.label ? 1.0 : 0.0) ? 1 : 0;
      ++checked;
    }
  }
  return {violations == 0 && checked == 30 * 9 && llm.calls.load() > 0,
          std::to_string(checked) + " clamped rows over 30 iterations, " + std::to_string(violations) +
              " entries changed, " + std::to_string(llm.calls.load()) + " LLM calls"};
}

Outcome prompt_goldens() {
  int ok = 0, total = 0;
  for (const auto& c : testing::static_cases()) {
    ++total;
    ok += static_prompt(c.class_name, c.domain) == testing::read_golden(c.golden) ? 1 : 0;
  }
  for (const auto& c : testing::pairwise_cases()) {
    ++total;
    ok += pairwise_prompt(c.class1, c.attrs1, c.class2, c.attrs2) == testing::read_golden(c.golden) ? 1 : 0;
  }
  return {ok == total && total == 6, std::to_string(ok) + "/" + std::to_string(total) + " prompts byte-equal"};
}

Outcome determinism() {
  auto t = testing::toy_data(8000, 40, 3, 16, 0.14, 1.4);
  for (std::size_t i = 0; i < t.inputs.manifest.images.size(); i += 15)
    t.inputs.manifest.fewshot_labels.push_back({t.inputs.manifest.images[i].id, *t.inputs.manifest.images[i].label});
  RunConfig cfg = testing::mock_config(5);
  cfg.mode = Mode::kFewShot;
  cfg.alpha = 0.5;
  cfg.adapt = true;
  cfg.store_z = true;
  cfg.seed = 42;
  auto once = [&] {
    testing::SignatureLlm llm;
    testing::FakeBridge bridge(t.inputs.features.data, t.inputs.features.ids, t.embedder);
    return run(t.inputs, cfg, Services{&llm, nullptr, &bridge}).result;
  };
  const RunResult a = once(), b = once();
  const bool same = a == b && to_json(a).dump() == to_json(b).dump();
  return {same, std::string(same ? "identical" : "different") + " results over " + std::to_string(a.objective.size()) +
                    " iterations"};
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"bird", "with", "red", "Gull's", "\"wing\"", "tail", "ñandú", "7", "\\"};
  std::string s = words[rng() % words.size()];
  for (int k = static_cast<int>(rng() % 5); k > 0; --k) s += " " + words[rng() % words.size()];
  return s;
}

double random_double(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return std::ldexp(g(rng), static_cast<int>(rng() % 61) - 30);
}

Matrix random_matrix(std::mt19937_64& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = random_double(rng);
  return m;
}

Outcome format_round_trips() {
  std::mt19937_64 rng(9000);
  int ok = 0, total = 0;
  auto check = [&](bool same) {
    ++total;
    ok += same ? 1 : 0;
  };
  for (int trial = 0; trial < 20; ++trial) {
    // EMB1 stores f32: draw f32 values so the round trip is exact
    Matrix e(1 + static_cast<Index>(rng() % 30), 1 + static_cast<Index>(rng() % 30));
    for (Index k = 0; k < e.size(); ++k) e.data()[k] = static_cast<double>(static_cast<float>(random_double(rng)));
    const std::string bytes = encode_emb1(e);
    check(decode_emb1(bytes) == e && encode_emb1(decode_emb1(bytes)) == bytes);

    DatasetManifest m;
    m.dataset_name = random_text(rng);
    m.domain_word = "birds";
    m.classes = {"a", "b", "c"};
    for (int i = 0; i < 8; ++i) {
      ImageRecord im{"im" + std::to_string(i), std::nullopt, std::nullopt};
      if (rng() % 2) im.label = static_cast<int>(rng() % 3);
      if (rng() % 2) im.split = "seen";
      m.images.push_back(im);
    }
    m.fewshot_labels = {{"im1", 2}};
    if (trial % 2) m.seen_classes = {0};
    check(manifest_from_json(json::parse(to_json(m).dump())) == m);

    AttributeBank bank;
    bank.classes = {"a", "b"};
    bank.attrs.resize(2);
    for (int k = 0; k < 6; ++k)
      bank.add(k % 2, {random_text(rng) + std::to_string(k), random_matrix(rng, 5, 1).col(0),
                       static_cast<Origin>(rng() % 3), static_cast<int>(rng() % 30)});
    check(bank_from_json(json::parse(to_json(bank).dump())) == bank);

    RunResult r;
    r.classes = {"a", "b"};
    r.image_ids = {"x", "y"};
    r.labels = {1, 0};
    r.z = random_matrix(rng, 2, 2);
    if (trial % 2) r.metrics = Metrics{random_double(rng), random_double(rng), 2};
    r.objective = {random_double(rng)};
    r.objective_traces = {{random_double(rng), random_double(rng)}};
    check(result_from_json(json::parse(to_json(r).dump())) == r);

    ConfusionReport rep = mine(testing::random_simplex(rng, 30, 4), 0.3);
    rep.coverage_fraction = random_double(rng);
    rep.selected_pairs = select_pairs(rep, 0.5);
    check(report_from_json(json::parse(to_json(rep).dump())) == rep);

    AdaptJob job = build_adapt_job(testing::random_simplex(rng, 6, 2), {"a", "b", "c", "d", "e", "f"}, bank, 3);
    job.seed = rng();
    job.iteration = trial;
    check(adapt_job_from_json(json::parse(to_json(job).dump())) == job);

    Checkpoint ck{trial, "abc", bank, random_matrix(rng, 3, 2), {ClassPair{0, 1}}, {random_double(rng)},
                  {{random_double(rng)}}, trial % 2 ? std::optional<Matrix>(random_matrix(rng, 3, 5)) : std::nullopt};
    check(checkpoint_from_json(json::parse(to_json(ck).dump())) == ck);

    RunConfig cfg;
    cfg.alpha = std::abs(random_double(rng));
    cfg.solver.lambda = std::abs(random_double(rng));
    cfg.seed = rng();
    RunConfig back;
    apply_json(json::parse(to_json(cfg).dump()), back);
    check(to_json(back) == to_json(cfg) && config_hash(back) == config_hash(cfg));
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) +
                           " round trips exact (EMB1, manifest, bank, result, report, adapt job, checkpoint, config)"};
}

}  // namespace

int main() {
  gta::log::set_level(gta::log::Level::kError);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"monotone descent", monotone_descent},
      {"z-update oracle", z_update_oracle},
      {"EM reduction", em_reduction},
      {"lambda dominance", lambda_dominance},
      {"synthetic transduction gain", synthetic_gain},
      {"confusion mining oracle", mining_oracle},
      {"clamp invariance", clamp_invariance},
      {"prompt goldens", prompt_goldens},
      {"determinism", determinism},
      {"format round-trips", format_round_trips},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
