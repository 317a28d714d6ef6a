#pragma once

// Prompt construction, LLM querying and response parsing for growing the
// attribute bank from confused class pairs.

#include "gta/confusion_miner.hpp"
#include "gta/embedder.hpp"
#include "gta/log.hpp"
#include "gta/model_state.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gta {

struct LlmConfig {
  std::string endpoint_url;  // chat-completions URL; empty disables generation
  std::string model_name = "llama-3.1-8b-instruct";
  int max_tokens = 500;
  double request_timeout_s = 60.0;
  int max_retries = 3;
  double temperature = 0.0;
  int max_in_flight = 4;
  std::string api_key_env = "GTA_LLM_API_KEY";

  void check() const {
    if (max_tokens <= 0) throw Error("max_tokens must be > 0");
    if (max_in_flight < 1) throw Error("max_in_flight must be >= 1");
  }
};

/// Endpoint could not be reached after all retries.
class EndpointUnavailable : public Error {
 public:
  using Error::Error;
};

/// Endpoint answered but the body could not be interpreted.
class MalformedResponse : public Error {
 public:
  using Error::Error;
};

/// A single-message chat completion.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

inline std::string static_prompt(std::string_view class_name, std::string_view domain_word) {
  if (class_name.empty() || domain_word.empty())
    throw Error("class name and domain word must be nonempty");
  std::string out;
  out += "What characteristics can be used to differentiate ";
  out += class_name;
  out += " from other ";
  out += domain_word;
  out += " based on just a photo? Provide an exhaustive list of all attributes that can be used "
         "to identify the ";
  out += domain_word;
  out += " uniquely. Texts should be of the form \"";
  out += domain_word;
  out += " with [attribute]\".";
  return out;
}

inline std::string render_attribute_list(const std::vector<std::string>& attrs) {
  std::string out;
  for (std::size_t k = 0; k < attrs.size(); ++k) {
    if (k > 0) out += "; ";
    out += attrs[k];
  }
  return out;
}

inline std::string pairwise_prompt(std::string_view class1, const std::vector<std::string>& attrs1,
                                   std::string_view class2,
                                   const std::vector<std::string>& attrs2) {
  if (class1 == class2) throw Error("pairwise prompt needs two distinct classes");
  if (attrs1.empty() || attrs2.empty()) throw Error("pairwise prompt needs nonempty attribute lists");
  std::string out;
  out += "I have a set of attributes for ";
  out += class1;
  out += " as: " + render_attribute_list(attrs1) + ".\n";
  out += "I have a set of attributes for ";
  out += class2;
  out += " as: " + render_attribute_list(attrs2) + ".\n\n";
  out += "Provide a few additional attributes for ";
  out += class1;
  out += " which can help to distinguish it from ";
  out += class2;
  out += ".\n\n";
  out += "Make sure none of the attributes already given above are repeated. The texts in the "
         "attributes texts should only talk about ";
  out += class1;
  out += " and should not compare it to ";
  out += class2;
  out += ".";
  return out;
}

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline std::string domain_stem(std::string_view domain) {
  std::string d = lower(domain);
  if (d.size() > 3 && d.back() == 's') d.pop_back();
  return d;
}

}  // namespace detail

/// Splits an LLM answer into attribute texts: list markers stripped, lines
/// with fewer than 3 words, headers ending in ':' and lines that mention
/// neither the class nor the domain are dropped. Duplicates within the answer
/// collapse to the first occurrence.
inline std::vector<std::string> parse_attribute_lines(std::string_view response,
                                                      std::string_view class_name,
                                                      std::string_view domain_word) {
  static const std::regex kMarker(R"(^\s*(?:•|[-*+]+|\(?\d+[.):])\s*)");
  const std::string cls = detail::lower(class_name);
  const std::string stem = detail::domain_stem(domain_word);

  std::vector<std::string> out;
  std::set<std::string> keys;
  std::size_t start = 0;
  while (start <= response.size()) {
    std::size_t end = response.find('\n', start);
    if (end == std::string_view::npos) end = response.size();
    std::string line(response.substr(start, end - start));
    start = end + 1;

    for (std::string prev; prev != line;) {
      prev = line;
      line = std::regex_replace(line, kMarker, "", std::regex_constants::format_first_only);
    }
    line = normalize_whitespace(line);
    while (line.size() >= 2 && line.starts_with("**")) line.erase(0, 2);
    while (line.size() >= 2 && line.ends_with("**")) line.erase(line.size() - 2);
    if (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') &&
        line.back() == line.front())
      line = line.substr(1, line.size() - 2);
    line = normalize_whitespace(line);

    if (line.empty() || line.back() == ':') continue;
    if (detail::word_count(line) < 3) continue;
    const std::string low = detail::lower(line);
    const bool mentions = (!cls.empty() && low.find(cls) != std::string::npos) ||
                          (!stem.empty() && low.find(stem) != std::string::npos);
    if (!mentions) continue;
    if (!keys.insert(dedup_key(line)).second) continue;
    out.push_back(std::move(line));
  }
  return out;
}

struct GeneratedAttributes {
  int class_index = 0;
  std::vector<std::string> texts;
  ClassPair source;
  std::string raw_response;

  bool operator==(const GeneratedAttributes&) const = default;
};

inline std::vector<std::string> attribute_texts(const AttributeBank& bank, int cls) {
  std::vector<std::string> out;
  for (const Attribute& a : bank.attrs.at(static_cast<std::size_t>(cls)))
    if (a.origin != Origin::kPrompt) out.push_back(a.text);
  if (out.empty())  // only the class prompt exists
    for (const Attribute& a : bank.attrs.at(static_cast<std::size_t>(cls))) out.push_back(a.text);
  return out;
}

/// Queries both directions of every pair. Unreachable endpoints skip the
/// request with a warning and malformed answers yield nothing; new texts are
/// deduplicated against the bank and against each other, in pair order.
inline std::vector<GeneratedAttributes> generate_for_pairs(const std::vector<ClassPair>& pairs,
                                                           const AttributeBank& bank,
                                                           std::string_view domain_word,
                                                           ChatClient& client,
                                                           const LlmConfig& cfg) {
  cfg.check();
  struct Request {
    int target;
    int other;
    ClassPair pair;
    std::string prompt;
  };
  std::vector<Request> requests;
  for (const ClassPair& p : pairs) {
    if (p.lo == p.hi || p.lo < 0 || p.hi >= bank.num_classes())
      throw Error("invalid class pair {" + std::to_string(p.lo) + ", " + std::to_string(p.hi) + "}");
    for (auto [a, b] : {std::pair{p.lo, p.hi}, std::pair{p.hi, p.lo}}) {
      const auto& ca = bank.classes[static_cast<std::size_t>(a)];
      const auto& cb = bank.classes[static_cast<std::size_t>(b)];
      requests.push_back(
          {a, b, p, pairwise_prompt(ca, attribute_texts(bank, a), cb, attribute_texts(bank, b))});
    }
  }

  std::vector<std::optional<std::string>> answers(requests.size());
  for (std::size_t begin = 0; begin < requests.size();
       begin += static_cast<std::size_t>(cfg.max_in_flight)) {
    const std::size_t end =
        std::min(requests.size(), begin + static_cast<std::size_t>(cfg.max_in_flight));
    std::vector<std::future<std::optional<std::string>>> inflight;
    for (std::size_t r = begin; r < end; ++r)
      inflight.push_back(std::async(std::launch::async, [&client, &requests, r]() -> std::optional<std::string> {
        const Request& req = requests[r];
        try {
          return client.complete(req.prompt);
        } catch (const EndpointUnavailable& e) {
          log::warn() << "skipping pair {" << req.pair.lo << ", " << req.pair.hi
                      << "}: " << e.what();
        } catch (const MalformedResponse& e) {
          log::warn() << "malformed response for class " << req.target << " vs " << req.other
                      << ": " << e.what();
          return std::string();
        }
        return std::nullopt;
      }));
    for (std::size_t r = begin; r < end; ++r) answers[r] = inflight[r - begin].get();
  }

  std::vector<std::set<std::string>> accepted(static_cast<std::size_t>(bank.num_classes()));
  std::vector<GeneratedAttributes> out;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    if (!answers[r]) continue;
    const Request& req = requests[r];
    GeneratedAttributes g;
    g.class_index = req.target;
    g.source = req.pair;
    g.raw_response = *answers[r];
    for (std::string& text : parse_attribute_lines(
             g.raw_response, bank.classes[static_cast<std::size_t>(req.target)], domain_word)) {
      if (bank.contains(req.target, text)) continue;
      if (!accepted[static_cast<std::size_t>(req.target)].insert(dedup_key(text)).second) continue;
      g.texts.push_back(std::move(text));
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Embeds generated texts and appends them as dynamic attributes. Returns the
/// (class, embedding) pairs actually added, in insertion order.
inline std::vector<std::pair<int, Vector>> append_generated(
    AttributeBank& bank, const std::vector<GeneratedAttributes>& generated,
    TextEmbedder& embedder, int iteration) {
  std::vector<std::string> texts;
  std::vector<int> classes;
  for (const auto& g : generated)
    for (const auto& t : g.texts) {
      texts.push_back(t);
      classes.push_back(g.class_index);
    }
  std::vector<std::pair<int, Vector>> added;
  if (texts.empty()) return added;
  const Matrix emb = embedder.embed(texts);
  if (emb.rows() != static_cast<Index>(texts.size()))
    throw Error("embedder returned " + std::to_string(emb.rows()) + " rows for " +
                std::to_string(texts.size()) + " texts");
  for (std::size_t k = 0; k < texts.size(); ++k) {
    Vector v = emb.row(static_cast<Index>(k)).transpose();
    if (bank.add(classes[k], Attribute{texts[k], v, Origin::kDynamic, iteration}))
      added.emplace_back(classes[k], std::move(v));
  }
  return added;
}

inline std::string class_prompt_text(std::string_view class_name) {
  return "a photo of a " + std::string(class_name) + ".";
}

/// Builds a bank from the class prompts plus one static-template query per
/// class. Unreachable endpoints leave that class with its prompt only.
inline AttributeBank bootstrap_static_bank(const std::vector<std::string>& classes,
                                           std::string_view domain_word, ChatClient* client,
                                           TextEmbedder& embedder) {
  AttributeBank bank;
  bank.classes = classes;
  bank.attrs.resize(classes.size());
  for (std::size_t j = 0; j < classes.size(); ++j) {
    std::vector<std::string> texts{class_prompt_text(classes[j])};
    if (client != nullptr) {
      try {
        for (auto& t : parse_attribute_lines(client->complete(static_prompt(classes[j], domain_word)),
                                             classes[j], domain_word))
          texts.push_back(std::move(t));
      } catch (const Error& e) {
        log::warn() << "static attributes for '" << classes[j] << "' unavailable: " << e.what();
      }
    }
    const Matrix emb = embedder.embed(texts);
    for (std::size_t k = 0; k < texts.size(); ++k)
      bank.add(static_cast<Index>(j),
               Attribute{texts[k], emb.row(static_cast<Index>(k)).transpose(),
                         k == 0 ? Origin::kPrompt : Origin::kStatic, 0});
  }
  return bank;
}

}  // namespace gta
