#include "aligncap/emoparse.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace aligncap {

ClueCategory clue_category_from_string(const std::string& s) {
  if (s == "tone") return ClueCategory::Tone;
  if (s == "intonation") return ClueCategory::Intonation;
  if (s == "pitch") return ClueCategory::Pitch;
  if (s == "rhythm") return ClueCategory::Rhythm;
  if (s == "volume") return ClueCategory::Volume;
  if (s == "adjective") return ClueCategory::Adjective;
  throw std::invalid_argument("unknown clue category '" + s + "'");
}

std::string to_string(ClueCategory c) {
  switch (c) {
    case ClueCategory::Tone: return "tone";
    case ClueCategory::Intonation: return "intonation";
    case ClueCategory::Pitch: return "pitch";
    case ClueCategory::Rhythm: return "rhythm";
    case ClueCategory::Volume: return "volume";
    case ClueCategory::Adjective: return "adjective";
  }
  return "adjective";
}

static int word_count(const std::string& phrase) {
  return static_cast<int>(normalize_words(phrase).size());
}

ClueVocabulary::ClueVocabulary(std::vector<ClueEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("clue vocabulary must be non-empty");
  std::unordered_set<std::string> seen;
  for (auto& e : entries_) {
    std::string norm = normalize_text(e.phrase);
    if (norm.empty()) throw std::invalid_argument("empty clue phrase");
    if (norm != e.phrase)
      throw std::invalid_argument("clue phrase must be lowercase words: '" + e.phrase + "'");
    const int wc = word_count(e.phrase);
    if (wc < 1 || wc > 4)
      throw std::invalid_argument("clue phrase must have 1-4 words: '" + e.phrase + "'");
    if (!seen.insert(e.phrase).second)
      throw std::invalid_argument("duplicate clue phrase '" + e.phrase + "'");
    max_words_ = std::max(max_words_, wc);
  }
}

bool ClueVocabulary::contains(const std::string& phrase) const {
  for (const auto& e : entries_)
    if (e.phrase == phrase) return true;
  return false;
}

void ClueVocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("clue vocabulary: cannot write " + path);
  for (const auto& e : entries_) out << e.phrase << '\t' << to_string(e.category) << '\n';
}

ClueVocabulary ClueVocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("clue vocabulary: cannot read " + path);
  std::vector<ClueEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("clue vocabulary: missing tab on line " + std::to_string(lineno));
    entries.push_back({line.substr(0, tab), clue_category_from_string(line.substr(tab + 1))});
  }
  return ClueVocabulary(std::move(entries));
}

std::vector<std::string> extract_clues(const ClueVocabulary& vocab, const std::string& caption) {
  const std::vector<std::string> words = normalize_words(caption);
  std::unordered_set<std::string> phrases;
  for (const auto& e : vocab.entries()) phrases.insert(e.phrase);

  std::vector<std::string> found;
  std::unordered_set<std::string> seen;
  size_t i = 0;
  while (i < words.size()) {
    int matched = 0;
    std::string matched_phrase;
    const int max_len = std::min<int>(vocab.max_phrase_words(), static_cast<int>(words.size() - i));
    for (int len = max_len; len >= 1; --len) {
      std::string cand = words[i];
      for (int k = 1; k < len; ++k) cand += ' ' + words[i + k];
      if (phrases.count(cand)) {
        matched = len;
        matched_phrase = cand;
        break;  // longest match wins
      }
    }
    if (matched) {
      if (seen.insert(matched_phrase).second) found.push_back(matched_phrase);
      i += matched;
    } else {
      ++i;
    }
  }
  return found;
}

AcousticPrompt render_acoustic_prompt(const std::vector<std::string>& clues) {
  AcousticPrompt out;
  out.clues = clues;
  if (clues.empty()) return out;
  if (clues.size() == 1) {
    out.rendered = "Feeling " + clues[0];
    return out;
  }
  std::string s = "Feeling ";
  for (size_t i = 0; i + 1 < clues.size(); ++i) s += clues[i] + ", ";
  s += "and " + clues.back();
  out.rendered = s;
  return out;
}

TokenSeq assemble_prefix(const PrefixPrompt& p, const JointCodebook& cb) {
  TokenSeq out;
  out.push(cb.special().bos);
  bool have_prev = false;
  for (const std::string* seg : {&p.acoustic.rendered, &p.semantic, &p.instruct}) {
    TokenSeq toks = cb.encode_text(*seg);
    if (toks.empty()) continue;
    if (have_prev) out.push(cb.special().sep);
    for (int id : toks.ids) out.push(id);
    have_prev = true;
  }
  return out;
}

}  // namespace aligncap
