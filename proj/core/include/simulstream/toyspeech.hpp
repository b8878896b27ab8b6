#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace simulstream::toyspeech {

inline constexpr const char* kCorpusFormat = "simulstream-corpus-v1";

// Parameters of a synthetic parallel language. Token ids follow the shared
// reserved-id convention (pad 0, <eos> 1, blank 2); content tokens occupy
// ids 3 .. 3+vocab-1 in their respective vocabularies.
struct ToyLanguageSpec {
  int source_vocab_size = 10;
  int target_vocab_size = 10;
  int unit_vocab_size = 20;
  std::array<int, 2> token_duration_range{2, 6};  // frames per source token
  std::array<int, 2> sentence_length_range{4, 10};
  int frame_dim = 16;
  double noise_std = 0.1;
  int reorder_window = 1;  // local permutation span of the source->target mapping
  uint64_t seed = 1;

  // Target token (0-based content index) -> fixed unit subsequence, lengths
  // in 2..6. Built deterministically from the seed unless provided.
  std::vector<std::vector<int>> unit_expansion;

  void validate() const;

  // Derived tables, all pure functions of the fields above.
  std::vector<std::vector<int>> build_default_expansion() const;
  std::vector<int> build_substitution() const;          // source idx -> target idx, bijective
  std::vector<double> canonical_frame(int source_token_id) const;

  int source_token_id(int idx) const { return 3 + idx; }
  int target_token_id(int idx) const { return 3 + idx; }
  int unit_id(int idx) const { return 3 + idx; }
};

struct Sample {
  std::vector<std::vector<double>> frames;  // X, |X| x frame_dim
  std::vector<int> source_tokens;           // A (content ids)
  std::vector<int> source_spans;            // frames per source token, sums to |X|
  std::vector<int> target_tokens;           // Y, ends with <eos>
  std::vector<int> units;                   // U

  void validate(const ToyLanguageSpec& spec) const;

  // Number of complete source tokens covered by the first `frames` frames;
  // the ground-truth alignment oracle for policy tests.
  int tokens_within(int frame_count) const;
};

struct Corpus {
  ToyLanguageSpec spec;
  std::string split = "train";
  std::vector<Sample> samples;
};

// Deterministic in (spec.seed, split, n); each sample draws from its own
// counter-based substream, so generation order never matters.
Corpus synthesize_corpus(const ToyLanguageSpec& spec, int n, const std::string& split = "train");

Sample synthesize_sample(const ToyLanguageSpec& spec, const std::string& split, uint64_t index);

// Canonical frames plus Gaussian noise for a token/duration sequence.
std::vector<std::vector<double>> featurize(const ToyLanguageSpec& spec,
                                           const std::vector<int>& tokens,
                                           const std::vector<int>& durations, uint64_t noise_seed);

void write_corpus(const Corpus& corpus, const std::string& path);
Corpus read_corpus(const std::string& path);

std::string spec_to_json(const ToyLanguageSpec& spec);
ToyLanguageSpec spec_from_json(const std::string& text);

}  // namespace simulstream::toyspeech
