#include "gta/dataset_io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace gta {
namespace {

using testing::TempDir;

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(Emb1, CanonicalBasisLoads) {
  TempDir dir("emb1");
  Matrix m(2, 3);
  m << 1, 0, 0, 0, 1, 0;
  write_emb1(dir.file("f.emb"), m);
  const FeatureMatrix f = load_features(dir.file("f.emb"));
  EXPECT_EQ(f.size(), 2);
  EXPECT_EQ(f.dim(), 3);
  EXPECT_EQ(f.data, m);

  const std::string bytes = detail::read_file(dir.file("f.emb"));
  ASSERT_EQ(bytes.size(), 16u + 24u);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  // little-endian N = 2
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  // 1.0f = 0x3f800000, low byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0x3f);
}

TEST(Emb1, ScaledRowRejected) {
  TempDir dir("emb1");
  write_emb1(dir.file("f.emb"), (Matrix(1, 3) << 2, 0, 0).finished());
  EXPECT_EQ(message_of([&] { load_features(dir.file("f.emb")); }),
            "row 0 norm 2.0 outside tolerance");
}

TEST(Emb1, TruncatedPayloadRejected) {
  std::string bytes = encode_emb1((Matrix(2, 3) << 1, 0, 0, 0, 1, 0).finished());
  bytes.resize(16 + 12);
  EXPECT_EQ(message_of([&] { decode_emb1(bytes); }), "expected 24 payload bytes, found 12");
}

TEST(Emb1, BadMagicAndDtypeRejected) {
  std::string bytes = encode_emb1(Matrix::Identity(2, 2));
  std::string wrong = bytes;
  wrong[3] = '2';
  EXPECT_EQ(message_of([&] { decode_emb1(wrong); }), "bad magic: expected EMB1");
  wrong = bytes;
  wrong[12] = 2;
  EXPECT_NE(message_of([&] { decode_emb1(wrong); }).find("dtype"), std::string::npos);
  EXPECT_NE(message_of([&] { decode_emb1(bytes.substr(0, 10)); }).find("header"),
            std::string::npos);
}

TEST(Emb1, RowCountMustMatchManifest) {
  TempDir dir("emb1");
  write_emb1(dir.file("f.emb"), Matrix::Identity(2, 2));
  const std::vector<std::string> ids{"a", "b", "c"};
  EXPECT_THROW(load_features(dir.file("f.emb"), &ids), IoError);
}

TEST(Emb1, NonFiniteRejected) {
  Matrix m = Matrix::Identity(2, 2);
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(normalized_embeddings(decode_emb1(encode_emb1(m))), IoError);
}

TEST(Emb1, RandomRoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(1, 40);
  std::normal_distribution<float> g(0.0f, 3.0f);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix m(size(rng), size(rng));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(g(rng));
    const std::string bytes = encode_emb1(m);
    const Matrix back = decode_emb1(bytes);
    ASSERT_EQ(back, m);
    EXPECT_EQ(encode_emb1(back), bytes);
  }
}

RunResult sample_result() {
  RunResult r;
  r.classes = {"a", "b"};
  r.image_ids = {"x", "y", "z"};
  r.labels = {0, 1, 1};
  return r;
}

TEST(ResultJson, LabelsSurviveReload) {
  TempDir dir("res");
  save_result(sample_result(), dir.file("r.json"));
  const RunResult back = load_result(dir.file("r.json"));
  EXPECT_EQ(back.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_FALSE(back.metrics.has_value());
  EXPECT_FALSE(read_json(dir.file("r.json")).contains("metrics"));
  EXPECT_EQ(read_json(dir.file("r.json")).at("schema_version"), 1);
}

TEST(ResultJson, IdentityZIsBitIdentical) {
  RunResult r = sample_result();
  r.z = Matrix::Identity(2, 2);
  const RunResult back = result_from_json(json::parse(to_json(r).dump()));
  ASSERT_TRUE(back.z.has_value());
  EXPECT_EQ(*back.z, *r.z);
}

TEST(ResultJson, WrongSchemaVersionRejected) {
  json j = to_json(sample_result());
  j["schema_version"] = 2;
  EXPECT_THROW(result_from_json(j), IoError);
}

TEST(Metrics, Examples) {
  using T = std::vector<std::optional<int>>;
  Metrics m = compute_metrics({0, 1}, T{0, 1}, 2);
  EXPECT_EQ(m.top1, 1.0);
  EXPECT_EQ(m.mean_per_class, 1.0);

  m = compute_metrics({0, 0, 1}, T{0, 1, 1}, 2);
  EXPECT_DOUBLE_EQ(m.top1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mean_per_class, 0.75);

  m = compute_metrics({1, 0}, T{0, 1}, 2);
  EXPECT_EQ(m.top1, 0.0);
  EXPECT_EQ(m.mean_per_class, 0.0);
}

TEST(Metrics, UnlabeledAndExcludedRowsSkipped) {
  using T = std::vector<std::optional<int>>;
  const Metrics m = compute_metrics({0, 1, 0}, T{0, std::nullopt, 1}, 2, {false, false, true});
  EXPECT_EQ(m.evaluated, 1);
  EXPECT_EQ(m.top1, 1.0);
  EXPECT_THROW(compute_metrics({0}, T{std::nullopt}, 2), Error);
}

// --- randomized round-trips of every JSON schema -------------------------------

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"bird", "with", "red", "Gull's", "wing", "\"quoted\"",
                                              "tail", "ñandú", "bill", "spots", "7"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(1, 6);
  std::string s = words[pick(rng)];
  for (int k = len(rng); k > 0; --k) s += " " + words[pick(rng)];
  return s;
}

double random_double(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> e(-30, 30);
  return std::ldexp(g(rng), e(rng));
}

TEST(JsonRoundTrip, Manifest) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    DatasetManifest m;
    m.dataset_name = random_text(rng);
    m.domain_word = "birds";
    const int nc = 2 + trial % 5;
    for (int c = 0; c < nc; ++c) m.classes.push_back(random_text(rng) + std::to_string(c));
    for (int i = 0; i < 10; ++i) {
      ImageRecord im{"im" + std::to_string(i), std::nullopt, std::nullopt};
      if (rng() % 3 != 0) im.label = static_cast<int>(rng() % nc);
      if (rng() % 2 == 0) im.split = (rng() % 2) ? "seen" : "test";
      m.images.push_back(im);
    }
    m.fewshot_labels.push_back({"im0", 0});
    if (trial % 2 == 0) {
      m.seen_classes = {0};
      m.unseen_classes = {1};
    }
    const json j = to_json(m);
    EXPECT_EQ(j.at("schema_version"), 1);
    EXPECT_EQ(manifest_from_json(json::parse(j.dump())), m);
  }
}

TEST(JsonRoundTrip, Bank) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    AttributeBank bank;
    for (int c = 0; c < 3; ++c) {
      bank.classes.push_back("class " + std::to_string(c));
      bank.attrs.emplace_back();
      for (int k = 0; k < 4; ++k) {
        Vector e = testing::random_unit(rng, 7);
        e[0] = random_double(rng);
        bank.add(c, {random_text(rng), e, static_cast<Origin>(rng() % 3), static_cast<int>(rng() % 30)});
      }
    }
    EXPECT_EQ(bank_from_json(json::parse(to_json(bank).dump())), bank);
  }
}

TEST(JsonRoundTrip, RunResult) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    RunResult r = sample_result();
    Matrix z(3, 2);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = random_double(rng);
    r.z = z;
    if (trial % 2) r.metrics = Metrics{random_double(rng), random_double(rng), 3};
    r.objective = {random_double(rng), random_double(rng)};
    r.objective_traces = {{random_double(rng)}, {random_double(rng), random_double(rng)}};
    r.bank_snapshot = trial % 3 ? "out.bank.json" : "";
    EXPECT_EQ(result_from_json(json::parse(to_json(r).dump())), r);
  }
}

TEST(JsonRoundTrip, ConfusionReport) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionReport r;
    r.alpha = random_double(rng);
    r.coverage_fraction = random_double(rng);
    for (int k = 0; k < 8; ++k) {
      const ClassPair p = ClassPair::of(static_cast<int>(rng() % 4), 4 + static_cast<int>(rng() % 3));
      r.entries.push_back({static_cast<Index>(k), p, random_double(rng)});
      ++r.pair_counts[p];
    }
    r.selected_pairs = {r.entries[0].pair};
    EXPECT_EQ(report_from_json(json::parse(to_json(r).dump())), r);
  }
}

TEST(JsonRoundTrip, AdaptJob) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    AdaptJob job;
    job.classes = {"a", "b"};
    job.images = {{{"x", random_double(rng)}}, {{"y", random_double(rng)}, {"z", 0.5}}};
    job.attributes = {{random_text(rng)}, {random_text(rng), random_text(rng)}};
    job.fewshot_ids = {{}, {"q"}};
    job.kind = trial % 2 ? "seen-classes" : "pseudo-label";
    job.iteration = trial;
    job.steps = 3;
    job.seed = rng();
    EXPECT_EQ(adapt_job_from_json(json::parse(to_json(job).dump())), job);
  }
}

TEST(Manifest, ValidationCatchesBadInput) {
  DatasetManifest m;
  m.classes = {"a", "b"};
  m.domain_word = "things";
  m.images = {{"x", 0, std::nullopt}, {"x", 1, std::nullopt}};
  EXPECT_THROW(validate_manifest(m), IoError);
  m.images[1].id = "y";
  m.images[1].label = 5;
  EXPECT_THROW(validate_manifest(m), IoError);
  m.images[1].label = 1;
  EXPECT_NO_THROW(validate_manifest(m));
}

}  // namespace
}  // namespace gta
