#pragma once

#include <string>
#include <vector>

#include "aligncap/codebook.hpp"

namespace aligncap {

enum class ClueCategory { Tone, Intonation, Pitch, Rhythm, Volume, Adjective };

ClueCategory clue_category_from_string(const std::string& s);
std::string to_string(ClueCategory c);

struct ClueEntry {
  std::string phrase;  // lowercase, 1..4 words
  ClueCategory category = ClueCategory::Adjective;
};

// Lexicon of emotional clue phrases used by the grammar-free phrase matcher.
class ClueVocabulary {
 public:
  explicit ClueVocabulary(std::vector<ClueEntry> entries);

  const std::vector<ClueEntry>& entries() const { return entries_; }
  bool contains(const std::string& phrase) const;
  size_t size() const { return entries_.size(); }
  int max_phrase_words() const { return max_words_; }

  void save(const std::string& path) const;  // "phrase<TAB>category" per line
  static ClueVocabulary load(const std::string& path);

 private:
  std::vector<ClueEntry> entries_;
  int max_words_ = 1;
};

// Longest-match clue extraction: every vocabulary phrase occurring in the
// lowercased caption as a contiguous word run, in order of first occurrence,
// deduplicated.
std::vector<std::string> extract_clues(const ClueVocabulary& vocab, const std::string& caption);

struct AcousticPrompt {
  std::vector<std::string> clues;
  std::string rendered;
};

// "Feeling e1, e2, ..., and en"; single clue drops the comma list; no clue
// yields the empty prompt.
AcousticPrompt render_acoustic_prompt(const std::vector<std::string>& clues);

struct PrefixPrompt {
  AcousticPrompt acoustic;
  std::string semantic;
  std::string instruct;
};

// BOS + tokens(acoustic) + SEP + tokens(semantic) + SEP + tokens(instruct);
// empty segments contribute neither tokens nor a separator.
TokenSeq assemble_prefix(const PrefixPrompt& p, const JointCodebook& cb);

}  // namespace aligncap
