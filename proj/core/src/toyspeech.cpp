#include "simulstream/toyspeech.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "simulstream/lineio.hpp"
#include "simulstream/rng.hpp"

namespace simulstream::toyspeech {

using nlohmann::json;

void ToyLanguageSpec::validate() const {
  if (source_vocab_size < 4 || target_vocab_size < 4) {
    throw std::invalid_argument("toy spec: vocab sizes must be >= 4");
  }
  if (unit_vocab_size < 2) throw std::invalid_argument("toy spec: unit vocab too small");
  if (token_duration_range[0] < 1 || token_duration_range[1] < token_duration_range[0]) {
    throw std::invalid_argument("toy spec: bad token_duration_range");
  }
  if (sentence_length_range[0] < 1 || sentence_length_range[1] < sentence_length_range[0]) {
    throw std::invalid_argument("toy spec: bad sentence_length_range");
  }
  if (frame_dim < 1) throw std::invalid_argument("toy spec: frame_dim must be >= 1");
  if (noise_std < 0.0) throw std::invalid_argument("toy spec: negative noise_std");
  if (reorder_window < 0) throw std::invalid_argument("toy spec: negative reorder_window");
  if (!unit_expansion.empty()) {
    if (static_cast<int>(unit_expansion.size()) != target_vocab_size) {
      throw std::invalid_argument("toy spec: unit_expansion must cover every target token");
    }
    for (const auto& e : unit_expansion) {
      if (e.empty()) throw std::invalid_argument("toy spec: empty unit expansion");
      for (int u : e) {
        if (u < 3 || u >= 3 + unit_vocab_size) {
          throw std::invalid_argument("toy spec: unit id outside vocabulary");
        }
      }
    }
  }
}

std::vector<std::vector<int>> ToyLanguageSpec::build_default_expansion() const {
  Rng rng = Rng::substream(seed, "unit_expansion");
  std::vector<std::vector<int>> exp(target_vocab_size);
  for (int t = 0; t < target_vocab_size; ++t) {
    int len = rng.next_int(2, 6);
    exp[t].resize(len);
    for (int i = 0; i < len; ++i) exp[t][i] = unit_id(rng.next_int(0, unit_vocab_size - 1));
  }
  return exp;
}

std::vector<int> ToyLanguageSpec::build_substitution() const {
  // Bijection between content indices; vocab sizes may differ, in which case
  // the map wraps modulo the target vocabulary.
  std::vector<int> perm(std::max(source_vocab_size, target_vocab_size));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::substream(seed, "substitution");
  rng.shuffle(perm.data(), perm.size());
  std::vector<int> sub(source_vocab_size);
  for (int s = 0; s < source_vocab_size; ++s) sub[s] = perm[s] % target_vocab_size;
  return sub;
}

std::vector<double> ToyLanguageSpec::canonical_frame(int source_token_id) const {
  Rng rng = Rng::substream(seed, "canonical_frame", static_cast<uint64_t>(source_token_id));
  std::vector<double> v(frame_dim);
  for (double& x : v) x = rng.next_normal();
  return v;
}

void Sample::validate(const ToyLanguageSpec& spec) const {
  if (frames.empty() || source_tokens.empty() || target_tokens.empty() || units.empty()) {
    throw std::invalid_argument("sample: empty sequence");
  }
  if (source_tokens.size() != source_spans.size()) {
    throw std::invalid_argument("sample: span count does not match source tokens");
  }
  int total = 0;
  for (int s : source_spans) {
    if (s < 1) throw std::invalid_argument("sample: non-positive span");
    total += s;
  }
  if (total != static_cast<int>(frames.size())) {
    throw std::invalid_argument("sample: spans sum to " + std::to_string(total) + " but |X| = " +
                                std::to_string(frames.size()));
  }
  if (target_tokens.back() != 1) throw std::invalid_argument("sample: Y must end with <eos>");
  const auto& exp =
      spec.unit_expansion.empty() ? spec.build_default_expansion() : spec.unit_expansion;
  std::vector<int> want;
  for (size_t i = 0; i + 1 < target_tokens.size(); ++i) {
    int idx = target_tokens[i] - 3;
    if (idx < 0 || idx >= static_cast<int>(exp.size())) {
      throw std::invalid_argument("sample: target token outside vocabulary");
    }
    want.insert(want.end(), exp[idx].begin(), exp[idx].end());
  }
  if (want != units) throw std::invalid_argument("sample: units do not match unit_expansion of Y");
}

int Sample::tokens_within(int frame_count) const {
  int covered = 0, acc = 0;
  for (int s : source_spans) {
    acc += s;
    if (acc <= frame_count) ++covered;
    else break;
  }
  return covered;
}

std::vector<std::vector<double>> featurize(const ToyLanguageSpec& spec,
                                           const std::vector<int>& tokens,
                                           const std::vector<int>& durations, uint64_t noise_seed) {
  if (tokens.size() != durations.size()) {
    throw std::invalid_argument("featurize: token/duration count mismatch");
  }
  Rng noise = Rng::substream(noise_seed, "frame_noise");
  std::vector<std::vector<double>> frames;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (durations[i] < spec.token_duration_range[0] || durations[i] > spec.token_duration_range[1]) {
      throw std::invalid_argument("featurize: duration outside spec range");
    }
    std::vector<double> canon = spec.canonical_frame(tokens[i]);
    for (int d = 0; d < durations[i]; ++d) {
      std::vector<double> f = canon;
      if (spec.noise_std > 0.0) {
        for (double& x : f) x += spec.noise_std * noise.next_normal();
      }
      frames.push_back(std::move(f));
    }
  }
  return frames;
}

Sample synthesize_sample(const ToyLanguageSpec& spec, const std::string& split, uint64_t index) {
  uint64_t salt = Rng::hash_label(split);
  Rng rng = Rng::substream(spec.seed ^ salt, "sample", index);

  int len = rng.next_int(spec.sentence_length_range[0], spec.sentence_length_range[1]);
  Sample s;
  s.source_tokens.resize(len);
  s.source_spans.resize(len);
  for (int i = 0; i < len; ++i) {
    s.source_tokens[i] = spec.source_token_id(rng.next_int(0, spec.source_vocab_size - 1));
    s.source_spans[i] = rng.next_int(spec.token_duration_range[0], spec.token_duration_range[1]);
  }

  // Codebook substitution, then a fixed content-keyed rotation inside
  // windows of (reorder_window + 1) consecutive positions. The rule is a
  // deterministic function of the source, so the task stays learnable while
  // still requiring bounded reordering.
  std::vector<int> sub = spec.build_substitution();
  std::vector<int> target(len);
  for (int i = 0; i < len; ++i) {
    target[i] = spec.target_token_id(sub[s.source_tokens[i] - 3]);
  }
  if (spec.reorder_window > 0) {
    int w = spec.reorder_window + 1;
    std::vector<int> rotated(target);
    for (int start = 0; start < len; start += w) {
      int count = std::min(w, len - start);
      int key = 0;
      for (int i = start; i < start + count; ++i) key += s.source_tokens[i] - 3;
      int rot = key % count;
      for (int i = 0; i < count; ++i) rotated[start + i] = target[start + (i + rot) % count];
    }
    target = std::move(rotated);
  }
  s.target_tokens = std::move(target);
  s.target_tokens.push_back(1);  // <eos>

  const auto& exp =
      spec.unit_expansion.empty() ? spec.build_default_expansion() : spec.unit_expansion;
  for (size_t i = 0; i + 1 < s.target_tokens.size(); ++i) {
    const auto& e = exp[s.target_tokens[i] - 3];
    s.units.insert(s.units.end(), e.begin(), e.end());
  }

  uint64_t noise_seed = rng.next_u64();
  s.frames = featurize(spec, s.source_tokens, s.source_spans, noise_seed);
  return s;
}

Corpus synthesize_corpus(const ToyLanguageSpec& spec, int n, const std::string& split) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("synthesize_corpus: n must be >= 1");
  Corpus corpus;
  corpus.spec = spec;
  if (corpus.spec.unit_expansion.empty()) {
    corpus.spec.unit_expansion = spec.build_default_expansion();
  }
  corpus.split = split;
  corpus.samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    corpus.samples.push_back(synthesize_sample(corpus.spec, split, static_cast<uint64_t>(i)));
  }
  return corpus;
}

std::string spec_to_json(const ToyLanguageSpec& spec) {
  json j;
  j["source_vocab_size"] = spec.source_vocab_size;
  j["target_vocab_size"] = spec.target_vocab_size;
  j["unit_vocab_size"] = spec.unit_vocab_size;
  j["token_duration_range"] = spec.token_duration_range;
  j["sentence_length_range"] = spec.sentence_length_range;
  j["frame_dim"] = spec.frame_dim;
  j["noise_std"] = spec.noise_std;
  j["reorder_window"] = spec.reorder_window;
  j["seed"] = spec.seed;
  j["unit_expansion"] = spec.unit_expansion;
  return j.dump();
}

ToyLanguageSpec spec_from_json(const std::string& text) {
  json j = json::parse(text);
  ToyLanguageSpec spec;
  spec.source_vocab_size = j.at("source_vocab_size").get<int>();
  spec.target_vocab_size = j.at("target_vocab_size").get<int>();
  spec.unit_vocab_size = j.at("unit_vocab_size").get<int>();
  spec.token_duration_range = j.at("token_duration_range").get<std::array<int, 2>>();
  spec.sentence_length_range = j.at("sentence_length_range").get<std::array<int, 2>>();
  spec.frame_dim = j.at("frame_dim").get<int>();
  spec.noise_std = j.at("noise_std").get<double>();
  spec.reorder_window = j.at("reorder_window").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  spec.unit_expansion = j.value("unit_expansion", std::vector<std::vector<int>>{});
  return spec;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  LineWriter out(path);
  json header;
  header["format"] = kCorpusFormat;
  header["split"] = corpus.split;
  header["spec"] = json::parse(spec_to_json(corpus.spec));
  header["n"] = corpus.samples.size();
  out.write_line(header.dump());
  for (const auto& s : corpus.samples) {
    json j;
    j["x"] = s.frames;
    j["a"] = s.source_tokens;
    j["a_spans"] = s.source_spans;
    j["y"] = s.target_tokens;
    j["u"] = s.units;
    out.write_line(j.dump());
  }
  out.close();
}

Corpus read_corpus(const std::string& path) {
  LineReader in(path);
  std::string line;
  auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ": line " + std::to_string(in.line_number()) +
                               ": invalid JSON: " + e.what());
    }
  };
  if (!in.read_line(line)) throw std::runtime_error(path + ": empty corpus file");
  json header = parse_line(line);
  if (!header.contains("format") || header["format"] != kCorpusFormat) {
    throw std::runtime_error(path + ": line 1: format tag mismatch, expected " +
                             std::string(kCorpusFormat));
  }
  Corpus corpus;
  try {
    corpus.spec = spec_from_json(header.at("spec").dump());
    corpus.spec.validate();
    corpus.split = header.value("split", "train");
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": line 1: bad header: " + e.what());
  }
  while (in.read_line(line)) {
    if (line.empty()) continue;
    json j = parse_line(line);
    Sample s;
    try {
      s.frames = j.at("x").get<std::vector<std::vector<double>>>();
      s.source_tokens = j.at("a").get<std::vector<int>>();
      s.source_spans = j.at("a_spans").get<std::vector<int>>();
      s.target_tokens = j.at("y").get<std::vector<int>>();
      s.units = j.at("u").get<std::vector<int>>();
      s.validate(corpus.spec);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(in.line_number()) + ": " +
                               e.what());
    }
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace simulstream::toyspeech
