#include "aligncap/codebook.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace aligncap {

int TokenSeq::valid_count() const {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.mask.insert(out.mask.end(), b.mask.begin(), b.mask.end());
  return out;
}

JointCodebook::JointCodebook(std::vector<std::string> text_vocab, int speech_size)
    : text_vocab_(std::move(text_vocab)), speech_size_(speech_size) {
  if (speech_size_ < 2) throw std::invalid_argument("codebook: speech_size must be >= 2");
  for (int i = 0; i < static_cast<int>(text_vocab_.size()); ++i) {
    if (!index_.emplace(text_vocab_[i], i).second)
      throw std::invalid_argument("codebook: duplicate text token '" + text_vocab_[i] + "'");
  }
  const int base = text_size();
  special_.pad = base + 0;
  special_.bos = base + 1;
  special_.eos = base + 2;
  special_.sep = base + 3;
  special_.unk = base + 4;
}

int JointCodebook::speech_token(int centroid) const {
  if (centroid < 0 || centroid >= speech_size_)
    throw std::out_of_range("codebook: centroid index out of range");
  return speech_base() + centroid;
}

int JointCodebook::centroid_index(int speech_id) const {
  if (!is_speech(speech_id)) throw std::out_of_range("codebook: not a speech token id");
  return speech_id - speech_base();
}

std::optional<int> JointCodebook::text_id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& JointCodebook::word(int id) const {
  if (!is_text(id)) throw std::out_of_range("codebook: not a text token id");
  return text_vocab_[id];
}

bool JointCodebook::token_contains_period(int id) const {
  if (!is_text(id)) return false;
  return text_vocab_[id].find('.') != std::string::npos;
}

TokenSeq JointCodebook::encode_text(const std::string& text) const {
  TokenSeq out;
  std::istringstream in(text);
  std::string unit;
  while (in >> unit) {
    auto it = index_.find(unit);
    out.push(it != index_.end() ? it->second : special_.unk);
  }
  return out;
}

std::string JointCodebook::decode_text(const TokenSeq& seq) const {
  std::string out;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (is_speech(id))
      throw std::invalid_argument("decode_text: speech-range id " + std::to_string(id));
    if (id < 0 || id >= vocab_size())
      throw std::invalid_argument("decode_text: id out of range " + std::to_string(id));
    if (is_special(id)) {
      if (id == special_.unk) {
        if (!out.empty()) out += ' ';
        out += "<unk>";
      }
      continue;  // PAD/BOS/EOS/SEP render as empty
    }
    if (!out.empty()) out += ' ';
    out += text_vocab_[id];
  }
  return out;
}

std::string JointCodebook::to_json() const {
  nlohmann::json j;
  j["text_vocab"] = text_vocab_;
  j["speech_size"] = speech_size_;
  j["special"] = {{"pad", special_.pad},
                  {"bos", special_.bos},
                  {"eos", special_.eos},
                  {"sep", special_.sep},
                  {"unk", special_.unk}};
  return j.dump(2);
}

JointCodebook JointCodebook::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  JointCodebook cb(j.at("text_vocab").get<std::vector<std::string>>(),
                   j.at("speech_size").get<int>());
  const auto& sp = j.at("special");
  if (sp.at("pad").get<int>() != cb.special_.pad || sp.at("bos").get<int>() != cb.special_.bos ||
      sp.at("eos").get<int>() != cb.special_.eos || sp.at("sep").get<int>() != cb.special_.sep ||
      sp.at("unk").get<int>() != cb.special_.unk)
    throw std::invalid_argument("codebook: special ids violate the contiguous layout");
  return cb;
}

void JointCodebook::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("codebook: cannot write " + path);
  out << to_json() << '\n';
}

JointCodebook JointCodebook::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("codebook: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::pair<TokenSeq, TokenSeq> pad_pair(const TokenSeq& a, const TokenSeq& b, int pad_id) {
  const size_t n = std::max(a.size(), b.size());
  auto padded = [&](const TokenSeq& s) {
    TokenSeq out = s;
    while (out.size() < n) out.push(pad_id, false);
    return out;
  };
  return {padded(a), padded(b)};
}

ToyQuantizer::ToyQuantizer(std::vector<std::vector<double>> centroids)
    : centroids_(std::move(centroids)) {
  if (centroids_.size() < 2) throw std::invalid_argument("quantizer: need >= 2 centroids");
  dim_ = static_cast<int>(centroids_[0].size());
  for (const auto& c : centroids_) {
    if (static_cast<int>(c.size()) != dim_)
      throw std::invalid_argument("quantizer: ragged centroid dimensions");
    for (double x : c)
      if (!std::isfinite(x)) throw std::invalid_argument("quantizer: non-finite centroid");
  }
}

TokenSeq ToyQuantizer::quantize(const std::vector<std::vector<double>>& frames,
                                const JointCodebook& cb) const {
  if (cb.speech_size() != speech_size())
    throw std::invalid_argument("quantizer: codebook speech_size mismatch");
  TokenSeq out;
  for (const auto& f : frames) {
    if (static_cast<int>(f.size()) != dim_)
      throw std::invalid_argument("quantizer: frame dimension mismatch");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < speech_size(); ++c) {
      double d = 0.0;
      for (int k = 0; k < dim_; ++k) {
        const double diff = f[k] - centroids_[c][k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.push(cb.speech_token(best));
  }
  return out;
}

void ToyQuantizer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("quantizer: cannot write " + path);
  out << "TOYVQ1 " << speech_size() << ' ' << dim_ << '\n';
  for (const auto& c : centroids_) {
    for (double x : c) {
      const float f = static_cast<float>(x);
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  }
}

ToyQuantizer ToyQuantizer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("quantizer: cannot read " + path);
  std::string magic;
  int n = 0, d = 0;
  in >> magic >> n >> d;
  if (magic != "TOYVQ1" || n < 2 || d < 1)
    throw std::runtime_error("quantizer: bad header in " + path);
  in.ignore(1);  // newline after the header
  std::vector<std::vector<double>> cents(n, std::vector<double>(d));
  for (auto& c : cents) {
    for (double& x : c) {
      float f = 0.0f;
      in.read(reinterpret_cast<char*>(&f), sizeof(f));
      if (!in) throw std::runtime_error("quantizer: truncated file " + path);
      x = f;
    }
  }
  return ToyQuantizer(std::move(cents));
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch == '\'') {
      cur += static_cast<char>(std::tolower(ch));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace aligncap
