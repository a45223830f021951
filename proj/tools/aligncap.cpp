#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "aligncap/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aligncap;

namespace {

PipelineOptions options_from_config(const std::string& config_path) {
  PipelineOptions opts;
  if (config_path.empty()) return opts;
  json j = json::parse(read_text_file(config_path));
  if (j.contains("d_model")) opts.d_model = j["d_model"].get<int>();
  if (j.contains("n_layers")) opts.n_layers = j["n_layers"].get<int>();
  if (j.contains("n_heads")) opts.n_heads = j["n_heads"].get<int>();
  if (j.contains("d_ff")) opts.d_ff = j["d_ff"].get<int>();
  if (j.contains("max_seq")) opts.max_seq = j["max_seq"].get<int>();
  if (j.contains("lora_rank")) opts.lora_rank = j["lora_rank"].get<int>();
  if (j.contains("lora_scale")) opts.lora_scale = j["lora_scale"].get<double>();
  if (j.contains("use_acoustic_prompt"))
    opts.use_acoustic_prompt = j["use_acoustic_prompt"].get<bool>();
  if (j.contains("include_instruct")) opts.include_instruct = j["include_instruct"].get<bool>();
  if (j.contains("instruct")) opts.instruct = j["instruct"].get<std::string>();
  if (j.contains("mle")) opts.mle = train_config_from_json(j["mle"].dump());
  if (j.contains("kd")) opts.kd = train_config_from_json(j["kd"].dump());
  if (j.contains("po")) opts.po = po_config_from_json(j["po"].dump());
  if (j.contains("decode")) opts.decode = decode_config_from_json(j["decode"].dump());
  return opts;
}

std::vector<int> parse_sizes(const std::string& csv) {
  std::vector<int> sizes;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) sizes.push_back(std::stoi(tok));
  if (sizes.empty()) throw CLI::ValidationError("--sizes", "needs at least one size");
  return sizes;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"AlignCap speech-emotion-captioning pipeline"};
  app.require_subcommand(1);

  std::string config, data_dir, out_path, vocab_path, caption, judge = "mock";
  std::string ckpt_path, prefs_path, candidates_path, references_path, report_path, sizes_csv;
  uint64_t seed = 0;
  int beam_k = 4;

  auto* synth = app.add_subcommand("synth", "generate a synthetic speech-caption corpus");
  synth->add_option("--config", config, "SynthSpec JSON file");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--seed", seed, "random seed");

  auto* parse_clues_cmd = app.add_subcommand("parse-clues", "extract clues and print the prompt");
  parse_clues_cmd->add_option("--vocab", vocab_path, "clue vocabulary file")->required();
  parse_clues_cmd->add_option("--caption", caption, "caption text")->required();

  auto* train_kd_cmd = app.add_subcommand("train-kd", "teacher preparation + KD fine-tuning");
  train_kd_cmd->add_option("--config", config, "pipeline config JSON");
  train_kd_cmd->add_option("--data", data_dir, "corpus directory")->required();
  train_kd_cmd->add_option("--out", out_path, "output checkpoint")->required();
  train_kd_cmd->add_option("--seed", seed, "random seed");

  auto* gen_prefs = app.add_subcommand("gen-prefs", "beam candidates + judge scoring -> pairs");
  gen_prefs->add_option("--config", config, "pipeline config JSON");
  gen_prefs->add_option("--ckpt", ckpt_path, "input checkpoint")->required();
  gen_prefs->add_option("--data", data_dir, "corpus directory")->required();
  gen_prefs->add_option("--out", out_path, "output prefs.jsonl")->required();
  gen_prefs->add_option("--judge", judge, "mock or host:port[/path]");
  gen_prefs->add_option("--k", beam_k, "beam width for candidates");
  gen_prefs->add_option("--seed", seed, "random seed");

  auto* train_po_cmd = app.add_subcommand("train-po", "preference optimization from a checkpoint");
  train_po_cmd->add_option("--config", config, "pipeline config JSON");
  train_po_cmd->add_option("--data", data_dir, "corpus directory")->required();
  train_po_cmd->add_option("--prefs", prefs_path, "prefs.jsonl")->required();
  train_po_cmd->add_option("--ckpt", ckpt_path, "input checkpoint")->required();
  train_po_cmd->add_option("--out", out_path, "output checkpoint")->required();
  train_po_cmd->add_option("--seed", seed, "random seed");

  auto* generate = app.add_subcommand("generate", "decode captions for the test split");
  generate->add_option("--config", config, "pipeline config JSON");
  generate->add_option("--ckpt", ckpt_path, "input checkpoint")->required();
  generate->add_option("--data", data_dir, "corpus directory")->required();
  generate->add_option("--out", out_path, "output captions jsonl")->required();

  auto* evaluate = app.add_subcommand("evaluate", "caption metrics report");
  evaluate->add_option("--candidates", candidates_path, "jsonl {id, text}")->required();
  evaluate->add_option("--references", references_path, "jsonl {id, texts}")->required();
  evaluate->add_option("--report", report_path, "output report JSON")->required();

  auto* sweep = app.add_subcommand("sweep-prefs", "metrics vs preference-pair count");
  sweep->add_option("--config", config, "pipeline config JSON");
  sweep->add_option("--data", data_dir, "corpus directory")->required();
  sweep->add_option("--sizes", sizes_csv, "comma-separated pair counts")->required();
  sweep->add_option("--out", out_path, "output curve JSON")->required();
  sweep->add_option("--seed", seed, "random seed");

  auto* ablate = app.add_subcommand("ablate", "component ablation delta table");
  ablate->add_option("--config", config, "pipeline config JSON");
  ablate->add_option("--data", data_dir, "corpus directory")->required();
  ablate->add_option("--out", out_path, "output table JSON")->required();
  ablate->add_option("--seed", seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage / diagnostic
    return code == 0 ? 0 : 2;      // --help exits 0; any parse failure exits 2
  }

  if (synth->parsed()) {
    SynthSpec spec;
    if (!config.empty()) spec = synth_spec_from_json(read_text_file(config));
    spec.seed = seed ? seed : spec.seed;
    fs::create_directories(out_path);
    save_synth_dir(synth_dataset(spec), out_path);
    std::cout << "wrote corpus to " << out_path << "\n";
    return 0;
  }

  if (parse_clues_cmd->parsed()) {
    ClueVocabulary vocab = ClueVocabulary::load(vocab_path);
    std::cout << render_acoustic_prompt(extract_clues(vocab, caption)).rendered << "\n";
    return 0;
  }

  if (train_kd_cmd->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    ModelParams teacher = prepare_teacher(data, opts, seed);
    LoraAdapter adapter =
        init_adapter(opts.model_config(data.codebook), opts.lora_rank, opts.lora_scale, seed + 5);
    TrainConfig kd_cfg = opts.kd;
    kd_cfg.seed = seed + 29;
    auto log = train_kd(teacher, teacher, adapter, build_kd_items(data, data.train, opts),
                        build_kd_items(data, data.val, opts), kd_cfg);
    save_checkpoint(&teacher, &adapter, out_path);
    write_metrics_jsonl(log, out_path + ".metrics.jsonl");
    std::cout << "wrote checkpoint to " << out_path << "\n";
    return 0;
  }

  if (gen_prefs->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (!ck.params || !ck.adapter) throw std::runtime_error("gen-prefs: checkpoint lacks model");
    check_adapter_compatible(*ck.adapter, ck.cfg);
    auto j = make_judge(judge, data.clues);
    std::vector<PreferencePair> all_pairs;
    DecodeConfig dc = opts.decode;
    for (size_t i : data.train) {
      const auto& pair = data.pairs[i];
      TokenSeq x = student_context(pair, data, opts);
      std::vector<TokenSeq> cands =
          generate_candidates(*ck.params, &*ck.adapter, x, beam_k, dc, data.codebook);
      if (cands.size() < 2) continue;
      std::vector<std::string> texts;
      for (const auto& c : cands) texts.push_back(data.codebook.decode_text(c));
      std::vector<double> scores = score_candidates(*j, pair.caption, texts);
      try {
        auto pairs = build_pairs(x, cands, scores);
        all_pairs.insert(all_pairs.end(), pairs.begin(), pairs.end());
      } catch (const std::runtime_error&) {
        continue;  // all scores equal: skip the item
      }
    }
    save_pref_pairs(all_pairs, data.codebook, out_path);
    std::cout << "wrote " << all_pairs.size() << " pairs to " << out_path << "\n";
    return 0;
  }

  if (train_po_cmd->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (!ck.params || !ck.adapter) throw std::runtime_error("train-po: checkpoint lacks model");
    check_adapter_compatible(*ck.adapter, ck.cfg);
    std::vector<PreferencePair> pairs = load_pref_pairs(prefs_path, data.codebook);
    PoConfig po_cfg = opts.po;
    po_cfg.seed = seed + 53;
    const LoraAdapter ref_adapter = *ck.adapter;
    auto log = train_po(*ck.params, *ck.adapter, *ck.params, ref_adapter, pairs, po_cfg);
    save_checkpoint(&*ck.params, &*ck.adapter, out_path);
    write_po_metrics_jsonl(log, out_path + ".metrics.jsonl");
    std::cout << "wrote checkpoint to " << out_path << "\n";
    return 0;
  }

  if (generate->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (!ck.params) throw std::runtime_error("generate: checkpoint lacks base model");
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    for (size_t i : data.test) {
      const auto& pair = data.pairs[i];
      std::string text = generate_caption(*ck.params, ck.adapter ? &*ck.adapter : nullptr, pair,
                                          data, opts);
      out << json{{"id", pair.id}, {"text", text}}.dump() << '\n';
    }
    std::cout << "wrote captions to " << out_path << "\n";
    return 0;
  }

  if (evaluate->parsed()) {
    std::map<std::string, std::string> cands;
    std::map<std::string, std::vector<std::string>> refs;
    std::string line;
    {
      std::ifstream in(candidates_path);
      if (!in) throw std::runtime_error("cannot read " + candidates_path);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        cands[j.at("id").get<std::string>()] = j.at("text").get<std::string>();
      }
    }
    {
      std::ifstream in(references_path);
      if (!in) throw std::runtime_error("cannot read " + references_path);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        refs[j.at("id").get<std::string>()] = j.at("texts").get<std::vector<std::string>>();
      }
    }
    EvalCorpus corpus;
    for (const auto& [id, text] : cands) {
      auto it = refs.find(id);
      if (it == refs.end()) throw std::runtime_error("evaluate: no references for id " + id);
      corpus.items.push_back({text, it->second});
    }
    write_file(report_path, report_to_json(evaluate_corpus(corpus)));
    std::cout << "wrote report to " << report_path << "\n";
    return 0;
  }

  if (sweep->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    write_file(out_path, run_pref_sweep_json(data, opts, parse_sizes(sizes_csv), seed));
    std::cout << "wrote curve to " << out_path << "\n";
    return 0;
  }

  if (ablate->parsed()) {
    PipelineOptions opts = options_from_config(config);
    SynthData data = load_synth_dir(data_dir);
    write_file(out_path, run_ablation_json(data, opts, seed));
    std::cout << "wrote table to " << out_path << "\n";
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
