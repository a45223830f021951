#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aligncap/codebook.hpp"
#include "aligncap/decode.hpp"
#include "aligncap/emoparse.hpp"
#include "aligncap/kdalign.hpp"
#include "aligncap/model.hpp"
#include "aligncap/prefopt.hpp"

namespace aligncap {

struct SpeechCaptionPair {
  std::string id;
  std::vector<int> speech_tokens;  // speech-range ids, non-empty
  std::string caption;             // non-empty
  std::optional<std::string> transcript;
};

std::vector<SpeechCaptionPair> load_pairs(const std::string& path, const JointCodebook& cb);
void save_pairs(const std::vector<SpeechCaptionPair>& pairs, const std::string& path);

struct SynthSpec {
  int n_items = 200;
  int speech_size = 16;
  int n_archetypes = 8;
  int speech_len = 6;
  double noise_rate = 0.05;
  uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  JointCodebook codebook;
  ClueVocabulary clues;
  std::vector<SpeechCaptionPair> pairs;
  std::vector<size_t> train, val, test;  // 8:1:1 deterministic split
};

ClueVocabulary builtin_clue_vocabulary();

SynthData synth_dataset(const SynthSpec& spec);

// Corpus directory layout: pairs.jsonl, codebook.json, clues.tsv, splits.json.
void save_synth_dir(const SynthData& data, const std::string& dir);
SynthData load_synth_dir(const std::string& dir);

// Binary container: "ALIGNCAP-CKPT v1" header, JSON manifest of named arrays,
// then raw little-endian 64-bit floats.
void save_checkpoint(const ModelParams* params, const LoraAdapter* adapter,
                     const std::string& path);

struct Checkpoint {
  ModelConfig cfg;
  std::optional<ModelParams> params;
  std::optional<LoraAdapter> adapter;
};

Checkpoint load_checkpoint(const std::string& path);

// Shape compatibility of an adapter against a base configuration; throws
// naming the first mismatching array.
void check_adapter_compatible(const LoraAdapter& adapter, const ModelConfig& cfg);

// Config files: JSON mirroring the config struct field names.
TrainConfig train_config_from_json(const std::string& json_text);
PoConfig po_config_from_json(const std::string& json_text);
DecodeConfig decode_config_from_json(const std::string& json_text);
SynthSpec synth_spec_from_json(const std::string& json_text);
std::string read_text_file(const std::string& path);

// prefs.jsonl: {"x":[int],"chosen":str,"rejected":str,"chosen_score":n,
// "rejected_score":n}
void save_pref_pairs(const std::vector<PreferencePair>& pairs, const JointCodebook& cb,
                     const std::string& path);
std::vector<PreferencePair> load_pref_pairs(const std::string& path, const JointCodebook& cb);

}  // namespace aligncap
