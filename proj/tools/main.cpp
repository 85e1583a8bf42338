#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "seqrisk/metrics/metrics.hpp"

using namespace seqrisk;
using experiment::ExperimentConfig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config field, e.g. --set mle.max_steps=200");
    cmd->add_option("--seed", seed, "Global seed");
    cmd->add_option("-o,--output-dir", output_dir, "Output directory");
  }

  // Flags take precedence over the file.
  ExperimentConfig load() const {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    json j;
    try {
      std::ifstream in(path);
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set " + o + ": expected field.path=value");
      const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
      json value = json::parse(text, nullptr, false);
      if (value.is_discarded()) value = text;
      std::string pointer = "/" + key;
      for (auto& c : pointer) c = c == '.' ? '/' : c;
      j[json::json_pointer(pointer)] = value;
    }
    if (seed) j["seed"] = *seed;
    if (output_dir) j["output_dir"] = *output_dir;
    const fs::path p(path);
    return experiment::config_from_json(j, p.parent_path().empty() ? fs::path(".") : p.parent_path());
  }
};

fs::path vocab_next_to(const std::string& explicit_path, const fs::path& checkpoint) {
  if (!explicit_path.empty()) return explicit_path;
  for (const fs::path& candidate : {checkpoint.parent_path() / "vocab.txt", checkpoint.parent_path() / "data" / "vocab.txt"}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw std::runtime_error("no vocab.txt next to " + checkpoint.string() + "; pass --vocab");
}

seqmodel::ParameterStore load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return seqmodel::ParameterStore::load(path);
}

void print_summary(const experiment::SystemReport& r) {
  std::cout << r.tag << ": in-domain BLEU " << r.in_domain_bleu << ", hallucinations " << r.in_domain.rate
            << " | OOD BLEU " << r.ood_bleu << ", hallucinations " << r.ood.rate << " | curve gap " << r.curve_gap
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-level minimum risk training experiments on synthetic domain-shift tasks"};
  app.require_subcommand(1);

  ConfigOptions gen_opts, mle_opts, mrt_opts, sweep_opts, repro_opts;
  auto* gen = app.add_subcommand("gen-data", "Generate corpora for every domain and split");
  gen_opts.attach(gen);

  auto* mle = app.add_subcommand("train-mle", "Train from scratch with label-smoothed MLE");
  mle_opts.attach(mle);

  auto* mrt = app.add_subcommand("finetune-mrt", "Fine-tune a checkpoint with minimum risk training");
  mrt_opts.attach(mrt);
  std::string mrt_init;
  mrt->add_option("--init", mrt_init, "MLE checkpoint to start from")->required();

  auto* translate = app.add_subcommand("translate", "Decode a file of source sentences");
  std::string tr_ckpt, tr_vocab, tr_input, tr_output;
  decoding::DecodeConfig tr_cfg;
  bool tr_greedy = false;
  translate->add_option("--checkpoint", tr_ckpt)->required();
  translate->add_option("--vocab", tr_vocab, "Vocabulary file (default: next to the checkpoint)");
  translate->add_option("-i,--input", tr_input)->required()->check(CLI::ExistingFile);
  translate->add_option("-o,--output", tr_output)->required();
  translate->add_option("-k,--beam-size", tr_cfg.beam_size)->capture_default_str();
  translate->add_flag("--greedy", tr_greedy, "Greedy decoding (same as --beam-size 1)");
  translate->add_option("--max-len", tr_cfg.max_len)->capture_default_str();
  translate->add_option("--length-norm-alpha", tr_cfg.length_norm_alpha)->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Corpus BLEU of hypotheses against references");
  std::string ev_hyps, ev_refs, ev_output;
  evaluate->add_option("--hyps", ev_hyps)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--refs", ev_refs)->required()->check(CLI::ExistingFile);
  evaluate->add_option("-o,--output", ev_output, "Metrics JSON (default: stdout)");

  auto* uncertainty = app.add_subcommand("analyze-uncertainty", "Per-token probability curves with distractors");
  std::vector<std::string> un_ckpts, un_tags;
  std::string un_vocab, un_test, un_pool, un_output;
  int un_max_t = 20, un_per_ref = 1;
  std::uint64_t un_seed = 1;
  uncertainty->add_option("--checkpoint", un_ckpts)->required();
  uncertainty->add_option("--tag", un_tags, "Model tag per checkpoint (default: file stem)");
  uncertainty->add_option("--vocab", un_vocab);
  uncertainty->add_option("--testset", un_test, "References (corpus TSV)")->required()->check(CLI::ExistingFile);
  uncertainty->add_option("--pool", un_pool, "Distractor pool (corpus TSV)")->required()->check(CLI::ExistingFile);
  uncertainty->add_option("--max-t", un_max_t)->capture_default_str();
  uncertainty->add_option("--distractors", un_per_ref, "Distractors per reference")->capture_default_str();
  uncertainty->add_option("--seed", un_seed)->capture_default_str();
  uncertainty->add_option("-o,--output", un_output)->required();

  auto* sweep = app.add_subcommand("sweep-beam", "BLEU and hallucination rate over beam sizes");
  sweep_opts.attach(sweep);
  std::string sw_ckpt, sw_test, sw_output, sw_judgments;
  std::vector<int> sw_ks;
  sweep->add_option("--checkpoint", sw_ckpt)->required();
  sweep->add_option("--testset", sw_test, "Corpus TSV (default: the config's OOD test sets)");
  sweep->add_option("--ks", sw_ks, "Beam sizes (default: analysis.ks)")->delimiter(',');
  sweep->add_option("--output", sw_output, "Sweep CSV (default: <output_dir>/beam_sweep.csv)");

  auto* repro = app.add_subcommand("reproduce", "Data, MLE, MRT and all analyses");
  repro_opts.attach(repro);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) {
      const auto cfg = gen_opts.load();
      const experiment::OutputLock lock(cfg.output_dir);
      const auto ws = experiment::prepare_data(cfg);
      experiment::write_data(ws, fs::path(cfg.output_dir) / "data");
      std::cout << "wrote corpora to " << (fs::path(cfg.output_dir) / "data").string() << '\n';
    } else if (*mle) {
      const auto cfg = mle_opts.load();
      const experiment::OutputLock lock(cfg.output_dir);
      const auto ws = experiment::prepare_data(cfg);
      ws.vocab.save(fs::path(cfg.output_dir) / "vocab.txt");
      experiment::run_mle(cfg, ws, cfg.output_dir);
      std::cout << "wrote " << (fs::path(cfg.output_dir) / "mle.ckpt").string() << '\n';
    } else if (*mrt) {
      const auto cfg = mrt_opts.load();
      const auto init = load_checkpoint(mrt_init);
      const experiment::OutputLock lock(cfg.output_dir);
      const auto ws = experiment::prepare_data(cfg);
      ws.vocab.save(fs::path(cfg.output_dir) / "vocab.txt");
      experiment::run_mrt(cfg, ws, init, cfg.output_dir);
      std::cout << "wrote " << (fs::path(cfg.output_dir) / "mrt.ckpt").string() << '\n';
    } else if (*translate) {
      const auto params = load_checkpoint(tr_ckpt);
      const auto vocab = seqmodel::Vocabulary::load(vocab_next_to(tr_vocab, tr_ckpt));
      if (tr_greedy) tr_cfg.beam_size = 1;
      tr_cfg.validate(params.config().max_seq_len);
      std::vector<seqmodel::TokenSeq> out;
      for (const auto& src : experiment::read_sentences(tr_input, vocab)) {
        out.push_back(decoding::translate(params, src, tr_cfg).content());
      }
      experiment::write_sentences(tr_output, out, vocab);
    } else if (*evaluate) {
      // Token strings are interned locally; no model vocabulary is needed.
      std::map<std::string, int> ids;
      auto read = [&](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        std::vector<std::vector<int>> out;
        for (std::string line; std::getline(in, line);) {
          std::istringstream words(line);
          std::vector<int> s;
          for (std::string w; words >> w;) s.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
          out.push_back(std::move(s));
        }
        return out;
      };
      const auto hyps = read(ev_hyps), refs = read(ev_refs);
      if (hyps.size() != refs.size()) {
        throw ContractError("evaluate: " + std::to_string(hyps.size()) + " hypotheses vs " +
                            std::to_string(refs.size()) + " references");
      }
      double sentence_total = 0.0;
      for (std::size_t i = 0; i < hyps.size(); ++i) sentence_total += metrics::smoothed_sentence_bleu(hyps[i], refs[i]);
      const json result{{"sentences", hyps.size()},
                        {"corpus_bleu", metrics::corpus_bleu(hyps, refs)},
                        {"mean_sentence_bleu", hyps.empty() ? 0.0 : sentence_total / static_cast<double>(hyps.size())}};
      if (ev_output.empty()) {
        std::cout << result.dump(2) << '\n';
      } else {
        experiment::write_json(ev_output, result);
      }
    } else if (*uncertainty) {
      if (!un_tags.empty() && un_tags.size() != un_ckpts.size()) throw ContractError("--tag: one tag per --checkpoint");
      const auto vocab = seqmodel::Vocabulary::load(vocab_next_to(un_vocab, un_ckpts.front()));
      const auto tests = datagen::read_corpus(un_test, vocab);
      const auto pool = datagen::read_corpus(un_pool, vocab);
      std::vector<analysis::UncertaintyCurve> curves;
      for (std::size_t i = 0; i < un_ckpts.size(); ++i) {
        const auto params = load_checkpoint(un_ckpts[i]);
        const std::string tag = un_tags.empty() ? fs::path(un_ckpts[i]).stem().string() : un_tags[i];
        const auto r = analysis::uncertainty_curves(params, tests, pool, un_max_t, un_seed, tag, un_per_ref);
        if (r.assignment.any_fallback()) std::cerr << "note: some distractors are not exactly length-matched\n";
        curves.push_back(r.references);
        curves.push_back(r.distractors);
      }
      analysis::write_curves_csv(un_output, curves);
    } else if (*sweep) {
      auto cfg = sweep_opts.load();
      if (!sw_ks.empty()) cfg.analysis.ks = sw_ks;
      const auto params = load_checkpoint(sw_ckpt);
      const auto ws = experiment::prepare_data(cfg);
      const auto tests = sw_test.empty() ? ws.ood_test() : datagen::read_corpus(sw_test, ws.vocab);
      const datagen::TargetGrammar grammar(ws.specs, ws.vocab);
      const auto rows = analysis::beam_sweep(params, tests, cfg.analysis.ks, cfg.decode, grammar, cfg.analysis.tau);
      const fs::path out = sw_output.empty() ? fs::path(cfg.output_dir) / "beam_sweep.csv" : fs::path(sw_output);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      analysis::write_sweep_csv(out, rows);
    } else if (*repro) {
      const auto cfg = repro_opts.load();
      const auto r = experiment::reproduce(cfg);
      print_summary(r.mle);
      print_summary(r.mrt);
      std::cout << "OOD hallucination Fisher p = " << r.ood_p_value << "\nartifacts in " << r.output_dir.string() << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
