#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace aligncap {

// Token sequence over the joint codebook. mask[i] == false marks padding;
// the invariant is that padded positions hold the PAD id.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<bool> mask;

  TokenSeq() = default;
  explicit TokenSeq(std::vector<int> tokens)
      : ids(std::move(tokens)), mask(ids.size(), true) {}
  TokenSeq(std::vector<int> tokens, std::vector<bool> m)
      : ids(std::move(tokens)), mask(std::move(m)) {}

  size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  int valid_count() const;
  void push(int id, bool valid = true) {
    ids.push_back(id);
    mask.push_back(valid);
  }
  bool operator==(const TokenSeq& o) const { return ids == o.ids && mask == o.mask; }
};

TokenSeq concat(const TokenSeq& a, const TokenSeq& b);

struct SpecialTokens {
  int pad = -1;
  int bos = -1;
  int eos = -1;
  int sep = -1;
  int unk = -1;
};

// Joint text/speech token space. Layout: text ids [0, text_size), special ids
// [text_size, text_size+5), speech ids [text_size+5, text_size+5+speech_size).
class JointCodebook {
 public:
  static constexpr int kNumSpecial = 5;

  JointCodebook(std::vector<std::string> text_vocab, int speech_size);

  int text_size() const { return static_cast<int>(text_vocab_.size()); }
  int speech_size() const { return speech_size_; }
  int speech_base() const { return text_size() + kNumSpecial; }
  int vocab_size() const { return text_size() + kNumSpecial + speech_size_; }
  const SpecialTokens& special() const { return special_; }
  const std::vector<std::string>& text_vocab() const { return text_vocab_; }

  bool is_text(int id) const { return id >= 0 && id < text_size(); }
  bool is_special(int id) const { return id >= text_size() && id < speech_base(); }
  bool is_speech(int id) const { return id >= speech_base() && id < vocab_size(); }

  int speech_token(int centroid) const;
  int centroid_index(int speech_id) const;
  std::optional<int> text_id(const std::string& word) const;
  const std::string& word(int text_id) const;
  bool token_contains_period(int id) const;

  TokenSeq encode_text(const std::string& text) const;
  std::string decode_text(const TokenSeq& seq) const;

  std::string to_json() const;
  static JointCodebook from_json(const std::string& json_text);
  void save(const std::string& path) const;
  static JointCodebook load(const std::string& path);

 private:
  std::vector<std::string> text_vocab_;
  std::unordered_map<std::string, int> index_;
  int speech_size_ = 0;
  SpecialTokens special_;
};

// Pads the shorter sequence with PAD/mask=false to the longer one's length.
std::pair<TokenSeq, TokenSeq> pad_pair(const TokenSeq& a, const TokenSeq& b, int pad_id);

// Nearest-centroid quantizer standing in for the first RVQ layer.
class ToyQuantizer {
 public:
  explicit ToyQuantizer(std::vector<std::vector<double>> centroids);

  int speech_size() const { return static_cast<int>(centroids_.size()); }
  int dim() const { return dim_; }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

  // Maps each frame to the speech token of its nearest centroid; ties break
  // toward the smallest centroid index.
  TokenSeq quantize(const std::vector<std::vector<double>>& frames,
                    const JointCodebook& cb) const;

  void save(const std::string& path) const;
  static ToyQuantizer load(const std::string& path);

 private:
  std::vector<std::vector<double>> centroids_;
  int dim_ = 0;
};

// Shared word normalization: lowercase, punctuation mapped to spaces.
std::vector<std::string> normalize_words(const std::string& text);
std::string normalize_text(const std::string& text);

}  // namespace aligncap
