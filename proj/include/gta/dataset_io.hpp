#pragma once

// On-disk formats.
//
//   EMB1 embeddings: 16-byte header {"EMB1", u32 N, u32 D, u32 dtype = 1}
//                    followed by N*D little-endian f32, row-major.
//   Everything else: UTF-8 JSON carrying "schema_version": 1.

#include "gta/adapt_job.hpp"
#include "gta/confusion_miner.hpp"
#include "gta/model_state.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace gta {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr double kLoadNormTolerance = 1e-3;

class IoError : public Error {
 public:
  using Error::Error;
};

// --- EMB1 -------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

/// "2" -> "2.0", keeps other renderings as streamed.
inline std::string decimal(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  std::string s = os.str();
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

inline std::string encode_emb1(const Matrix& m) {
  std::string buf;
  buf.reserve(16 + static_cast<std::size_t>(m.size()) * 4);
  buf.append("EMB1", 4);
  detail::put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  detail::put_u32(buf, 1);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      detail::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
  return buf;
}

/// Raw decode: f32 widened to f64, no normalization.
inline Matrix decode_emb1(std::string_view bytes) {
  if (bytes.size() < 16)
    throw IoError("EMB1 header needs 16 bytes, found " + std::to_string(bytes.size()));
  if (bytes.substr(0, 4) != "EMB1") throw IoError("bad magic: expected EMB1");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t n = detail::get_u32(p + 4);
  const std::uint64_t d = detail::get_u32(p + 8);
  const std::uint32_t dtype = detail::get_u32(p + 12);
  if (dtype != 1) throw IoError("unsupported EMB1 dtype " + std::to_string(dtype));
  const std::uint64_t expected = n * d * 4;
  const std::uint64_t found = bytes.size() - 16;
  if (found != expected)
    throw IoError("expected " + std::to_string(expected) + " payload bytes, found " +
                  std::to_string(found));
  Matrix m(static_cast<Index>(n), static_cast<Index>(d));
  const unsigned char* q = p + 16;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j, q += 4)
      m(i, j) = static_cast<double>(std::bit_cast<float>(detail::get_u32(q)));
  return m;
}

inline Matrix read_emb1(const std::string& path) { return decode_emb1(detail::read_file(path)); }

inline void write_emb1(const std::string& path, const Matrix& m) {
  detail::write_file(path, encode_emb1(m));
}

/// Checks finiteness and norms, then renormalizes every row to unit length.
inline Matrix normalized_embeddings(Matrix m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j)))
        throw IoError("row " + std::to_string(i) + " has a non-finite value");
    const double n = m.row(i).norm();
    if (!(std::abs(n - 1.0) <= kLoadNormTolerance))
      throw IoError("row " + std::to_string(i) + " norm " + detail::decimal(n) +
                    " outside tolerance");
    m.row(i) /= n;
  }
  return m;
}

/// Loads an EMB1 feature file. With `ids`, the row count must match.
inline FeatureMatrix load_features(const std::string& path,
                                   const std::vector<std::string>* ids = nullptr) {
  FeatureMatrix f;
  f.data = normalized_embeddings(read_emb1(path));
  if (f.data.rows() < 1 || f.data.cols() < 1) throw IoError("empty feature file '" + path + "'");
  if (ids != nullptr) {
    if (static_cast<Index>(ids->size()) != f.data.rows())
      throw IoError("feature file has " + std::to_string(f.data.rows()) +
                    " rows but manifest lists " + std::to_string(ids->size()) + " images");
    f.ids = *ids;
  } else {
    for (Index i = 0; i < f.data.rows(); ++i) f.ids.push_back(std::to_string(i));
  }
  return f;
}

// --- JSON helpers -----------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const json& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows * cols)
    throw IoError("matrix data has " + std::to_string(data.size()) + " values, expected " +
                  std::to_string(rows * cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<std::size_t>(i * cols + c)].get<double>();
  return m;
}

inline json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Index d = 0; d < v.size(); ++d) out.push_back(v[d]);
  return out;
}

inline Vector vector_from_json(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t d = 0; d < j.size(); ++d) v[static_cast<Index>(d)] = j[d].get<double>();
  return v;
}

inline void check_schema(const json& j, std::string_view what) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw IoError(std::string(what) + ": missing schema_version");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw IoError(std::string(what) + ": unsupported schema_version " +
                  j.at("schema_version").dump());
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  detail::write_file(path, j.dump(1) + "\n");
}

// --- dataset manifest -------------------------------------------------------

struct ImageRecord {
  std::string id;
  std::optional<int> label;          // ground-truth class index
  std::optional<std::string> split;  // e.g. "test", "seen"

  bool operator==(const ImageRecord&) const = default;
};

struct FewShotLabel {
  std::string id;
  int label = 0;

  bool operator==(const FewShotLabel&) const = default;
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<std::string> classes;
  std::string domain_word;
  std::vector<ImageRecord> images;
  std::vector<FewShotLabel> fewshot_labels;
  std::vector<int> seen_classes;    // seen-class mode only
  std::vector<int> unseen_classes;  // defaults to the complement of seen_classes

  Index num_classes() const { return static_cast<Index>(classes.size()); }

  std::vector<std::string> image_ids() const {
    std::vector<std::string> ids;
    ids.reserve(images.size());
    for (const auto& im : images) ids.push_back(im.id);
    return ids;
  }

  std::vector<std::optional<int>> truth() const {
    std::vector<std::optional<int>> t;
    t.reserve(images.size());
    for (const auto& im : images) t.push_back(im.label);
    return t;
  }

  bool operator==(const DatasetManifest&) const = default;
};

inline void validate_manifest(const DatasetManifest& m) {
  const int nc = static_cast<int>(m.classes.size());
  auto in_range = [&](int c) { return c >= 0 && c < nc; };
  std::set<std::string> ids;
  for (const auto& im : m.images) {
    if (!ids.insert(im.id).second) throw IoError("duplicate image id '" + im.id + "'");
    if (im.label && !in_range(*im.label))
      throw IoError("image '" + im.id + "' label " + std::to_string(*im.label) + " out of range");
  }
  for (const auto& l : m.fewshot_labels) {
    if (!in_range(l.label))
      throw IoError("few-shot label " + std::to_string(l.label) + " out of range");
  }
  for (int c : m.seen_classes)
    if (!in_range(c)) throw IoError("seen class " + std::to_string(c) + " out of range");
  for (int c : m.unseen_classes)
    if (!in_range(c)) throw IoError("unseen class " + std::to_string(c) + " out of range");
}

inline json to_json(const DatasetManifest& m) {
  json images = json::array();
  for (const auto& im : m.images) {
    json r{{"id", im.id}};
    if (im.label) r["label"] = *im.label;
    if (im.split) r["split"] = *im.split;
    images.push_back(std::move(r));
  }
  json j{{"schema_version", kSchemaVersion}, {"dataset_name", m.dataset_name},
         {"classes", m.classes},            {"domain_word", m.domain_word},
         {"images", std::move(images)}};
  if (!m.fewshot_labels.empty()) {
    json fs = json::array();
    for (const auto& l : m.fewshot_labels) fs.push_back({{"id", l.id}, {"label", l.label}});
    j["fewshot_labels"] = std::move(fs);
  }
  if (!m.seen_classes.empty()) j["seen_classes"] = m.seen_classes;
  if (!m.unseen_classes.empty()) j["unseen_classes"] = m.unseen_classes;
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  check_schema(j, "manifest");
  DatasetManifest m;
  m.dataset_name = j.value("dataset_name", std::string());
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.domain_word = j.value("domain_word", std::string());
  for (const json& r : j.at("images")) {
    ImageRecord im;
    im.id = r.at("id").get<std::string>();
    if (r.contains("label") && !r["label"].is_null()) im.label = r["label"].get<int>();
    if (r.contains("split") && !r["split"].is_null()) im.split = r["split"].get<std::string>();
    m.images.push_back(std::move(im));
  }
  if (j.contains("fewshot_labels"))
    for (const json& r : j["fewshot_labels"])
      m.fewshot_labels.push_back({r.at("id").get<std::string>(), r.at("label").get<int>()});
  if (j.contains("seen_classes")) m.seen_classes = j["seen_classes"].get<std::vector<int>>();
  if (j.contains("unseen_classes")) m.unseen_classes = j["unseen_classes"].get<std::vector<int>>();
  validate_manifest(m);
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  return manifest_from_json(read_json(path));
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  write_json(path, to_json(m));
}

// --- attribute bank ---------------------------------------------------------

inline json to_json(const AttributeBank& bank) {
  json classes = json::array();
  for (std::size_t j = 0; j < bank.classes.size(); ++j) {
    json attrs = json::array();
    for (const Attribute& a : bank.attrs[j]) {
      json r{{"text", a.text},
             {"origin", std::string(to_string(a.origin))},
             {"iteration_added", a.iteration_added}};
      if (a.embedding.size() > 0) r["embedding"] = vector_to_json(a.embedding);
      attrs.push_back(std::move(r));
    }
    classes.push_back({{"name", bank.classes[j]}, {"attributes", std::move(attrs)}});
  }
  return json{{"schema_version", kSchemaVersion}, {"classes", std::move(classes)}};
}

inline AttributeBank bank_from_json(const json& j) {
  check_schema(j, "attribute bank");
  AttributeBank bank;
  for (const json& c : j.at("classes")) {
    bank.classes.push_back(c.at("name").get<std::string>());
    auto& list = bank.attrs.emplace_back();
    for (const json& r : c.at("attributes")) {
      Attribute a;
      a.text = r.at("text").get<std::string>();
      a.origin = origin_from_string(r.value("origin", std::string("static")));
      a.iteration_added = r.value("iteration_added", 0);
      if (r.contains("embedding")) a.embedding = vector_from_json(r["embedding"]);
      list.push_back(std::move(a));
    }
  }
  return bank;
}

inline AttributeBank load_bank(const std::string& path) { return bank_from_json(read_json(path)); }

inline void save_bank(const AttributeBank& bank, const std::string& path) {
  write_json(path, to_json(bank));
}

// --- metrics and run results ------------------------------------------------

struct Metrics {
  double top1 = 0.0;
  double mean_per_class = 0.0;
  Index evaluated = 0;

  bool operator==(const Metrics&) const = default;
};

/// Scores images that have ground truth and are not excluded. Classes with no
/// evaluated image are left out of the per-class mean.
inline Metrics compute_metrics(const std::vector<int>& labels,
                               const std::vector<std::optional<int>>& truth, Index num_classes,
                               const std::vector<bool>& exclude = {}) {
  if (labels.size() != truth.size()) throw Error("labels and ground truth differ in length");
  std::vector<Index> total(static_cast<std::size_t>(num_classes), 0);
  std::vector<Index> correct(static_cast<std::size_t>(num_classes), 0);
  Metrics m;
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!truth[i] || (!exclude.empty() && exclude[i])) continue;
    const int t = *truth[i];
    if (t < 0 || t >= num_classes) throw Error("ground-truth class out of range");
    ++m.evaluated;
    ++total[static_cast<std::size_t>(t)];
    if (labels[i] == t) {
      ++hits;
      ++correct[static_cast<std::size_t>(t)];
    }
  }
  if (m.evaluated == 0) throw Error("no ground truth available");
  m.top1 = static_cast<double>(hits) / static_cast<double>(m.evaluated);
  double acc_sum = 0.0;
  Index classes = 0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] == 0) continue;
    acc_sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++classes;
  }
  m.mean_per_class = acc_sum / static_cast<double>(classes);
  return m;
}

inline Metrics compute_metrics(const std::vector<int>& labels, const DatasetManifest& manifest) {
  return compute_metrics(labels, manifest.truth(), manifest.num_classes());
}

struct RunResult {
  std::vector<std::string> classes;
  std::vector<std::string> image_ids;
  std::vector<int> labels;                            // argmax_j z_ij
  std::optional<Matrix> z;                            // only when requested
  std::optional<Metrics> metrics;                     // only with ground truth
  std::vector<double> objective;                      // final objective of every outer iteration
  std::vector<std::vector<double>> objective_traces;  // block-level trace of every solver call
  std::string bank_snapshot;                          // path of the saved final bank, if any

  bool operator==(const RunResult& o) const {
    const bool z_eq = z.has_value() == o.z.has_value() &&
                      (!z || (z->rows() == o.z->rows() && z->cols() == o.z->cols() && *z == *o.z));
    return z_eq && classes == o.classes && image_ids == o.image_ids && labels == o.labels &&
           metrics == o.metrics && objective == o.objective &&
           objective_traces == o.objective_traces && bank_snapshot == o.bank_snapshot;
  }
};

inline json to_json(const RunResult& r) {
  json j{{"schema_version", kSchemaVersion},
         {"classes", r.classes},
         {"image_ids", r.image_ids},
         {"labels", r.labels},
         {"objective", r.objective},
         {"objective_traces", r.objective_traces}};
  if (r.z) j["z"] = matrix_to_json(*r.z);
  if (r.metrics)
    j["metrics"] = {{"top1_accuracy", r.metrics->top1},
                    {"mean_per_class_accuracy", r.metrics->mean_per_class},
                    {"evaluated", r.metrics->evaluated}};
  if (!r.bank_snapshot.empty()) j["bank_snapshot"] = r.bank_snapshot;
  return j;
}

inline RunResult result_from_json(const json& j) {
  check_schema(j, "run result");
  RunResult r;
  r.classes = j.value("classes", std::vector<std::string>{});
  r.image_ids = j.value("image_ids", std::vector<std::string>{});
  r.labels = j.at("labels").get<std::vector<int>>();
  r.objective = j.value("objective", std::vector<double>{});
  r.objective_traces = j.value("objective_traces", std::vector<std::vector<double>>{});
  if (j.contains("z")) r.z = matrix_from_json(j["z"]);
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    r.metrics = Metrics{m.at("top1_accuracy").get<double>(),
                        m.at("mean_per_class_accuracy").get<double>(),
                        m.value("evaluated", Index{0})};
  }
  r.bank_snapshot = j.value("bank_snapshot", std::string());
  return r;
}

inline void save_result(const RunResult& r, const std::string& path) {
  write_json(path, to_json(r));
}

inline RunResult load_result(const std::string& path) { return result_from_json(read_json(path)); }

// --- confusion report -------------------------------------------------------

inline json to_json(const ConfusionReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"image", e.image}, {"pair", {e.pair.lo, e.pair.hi}}, {"margin", e.margin}});
  json counts = json::array();
  for (const auto& [p, c] : r.pair_counts) counts.push_back({{"pair", {p.lo, p.hi}}, {"count", c}});
  json selected = json::array();
  for (const auto& p : r.selected_pairs) selected.push_back({p.lo, p.hi});
  return json{{"schema_version", kSchemaVersion}, {"alpha", r.alpha},
              {"coverage_fraction", r.coverage_fraction}, {"entries", std::move(entries)},
              {"pair_counts", std::move(counts)}, {"selected_pairs", std::move(selected)}};
}

inline ClassPair pair_from_json(const json& j) {
  return ClassPair{j.at(0).get<int>(), j.at(1).get<int>()};
}

inline ConfusionReport report_from_json(const json& j) {
  check_schema(j, "confusion report");
  ConfusionReport r;
  r.alpha = j.at("alpha").get<double>();
  r.coverage_fraction = j.at("coverage_fraction").get<double>();
  for (const json& e : j.at("entries"))
    r.entries.push_back({e.at("image").get<Index>(), pair_from_json(e.at("pair")),
                         e.at("margin").get<double>()});
  for (const json& c : j.at("pair_counts"))
    r.pair_counts[pair_from_json(c.at("pair"))] = c.at("count").get<int>();
  for (const json& p : j.at("selected_pairs")) r.selected_pairs.push_back(pair_from_json(p));
  return r;
}

// --- adapt job --------------------------------------------------------------

inline json to_json(const AdaptJob& job) {
  json classes = json::array();
  for (std::size_t c = 0; c < job.classes.size(); ++c) {
    json images = json::array();
    for (const auto& s : job.images[c]) images.push_back({{"id", s.id}, {"score", s.score}});
    classes.push_back({{"name", job.classes[c]},
                       {"images", std::move(images)},
                       {"attributes", job.attributes[c]},
                       {"fewshot_ids", job.fewshot_ids[c]}});
  }
  return json{{"schema_version", kSchemaVersion}, {"kind", job.kind},
              {"iteration", job.iteration},     {"steps", job.steps},
              {"seed", job.seed},               {"classes", std::move(classes)}};
}

inline AdaptJob adapt_job_from_json(const json& j) {
  check_schema(j, "adapt job");
  AdaptJob job;
  job.kind = j.value("kind", std::string("pseudo-label"));
  job.iteration = j.value("iteration", 0);
  job.steps = j.value("steps", 1);
  job.seed = j.value("seed", std::uint64_t{0});
  for (const json& c : j.at("classes")) {
    job.classes.push_back(c.at("name").get<std::string>());
    auto& imgs = job.images.emplace_back();
    for (const json& s : c.at("images"))
      imgs.push_back({s.at("id").get<std::string>(), s.at("score").get<double>()});
    job.attributes.push_back(c.value("attributes", std::vector<std::string>{}));
    job.fewshot_ids.push_back(c.value("fewshot_ids", std::vector<std::string>{}));
  }
  return job;
}

}  // namespace gta
