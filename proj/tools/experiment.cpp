#include "experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "seqrisk/json_fields.hpp"
#include "seqrisk/metrics/metrics.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace experiment {

using datagen::Corpus;
using seqmodel::TokenSeq;
using seqmodel::Vocabulary;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void check_split(const char* field, int value, int minimum) {
  if (value < minimum) {
    throw ConfigError(std::string("data.") + field + ": must be at least " + std::to_string(minimum));
  }
}

}  // namespace

void from_json(const json& j, DataConfig& c) {
  JsonFields f(j, "data");
  f.get("in_domain", c.in_domain);
  f.get("out_of_domain", c.out_of_domain);
  f.get("train_size", c.train_size);
  f.get("dev_size", c.dev_size);
  f.get("test_size", c.test_size);
  f.get("ood_test_size", c.ood_test_size);
  if (f.take("seed")) {
    std::uint64_t seed = 0;
    f.get("seed", seed);
    c.seed = seed;
  }
  f.reject_unknown();
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"in_domain", c.in_domain},        {"out_of_domain", c.out_of_domain}, {"train_size", c.train_size},
           {"dev_size", c.dev_size},          {"test_size", c.test_size},         {"ood_test_size", c.ood_test_size}};
  if (c.seed) j["seed"] = *c.seed;
}

void from_json(const json& j, AnalysisConfig& c) {
  JsonFields f(j, "analysis");
  f.get("tau", c.tau);
  f.get("ks", c.ks);
  f.get("max_t", c.max_t);
  f.get("distractors_per_reference", c.distractors_per_reference);
  f.get("gap_from_t", c.gap_from_t);
  f.reject_unknown();
}

void to_json(json& j, const AnalysisConfig& c) {
  j = json{{"tau", c.tau},
           {"ks", c.ks},
           {"max_t", c.max_t},
           {"distractors_per_reference", c.distractors_per_reference},
           {"gap_from_t", c.gap_from_t}};
}

void ExperimentConfig::validate() const {
  if (data.in_domain.empty()) throw ConfigError("data.in_domain: a domain spec path is required");
  if (data.out_of_domain.empty()) throw ConfigError("data.out_of_domain: at least one domain spec path is required");
  for (const auto& p : data.out_of_domain) {
    if (p.empty()) throw ConfigError("data.out_of_domain: empty path");
  }
  check_split("train_size", data.train_size, 1);
  check_split("dev_size", data.dev_size, 0);
  check_split("test_size", data.test_size, 1);
  check_split("ood_test_size", data.ood_test_size, 1);
  seqmodel::ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = Vocabulary::kNumSpecials + 1;  // filled in from the data later
  m.validate();
  mle.validate();
  mrt.validate();
  decode.validate(model.max_seq_len);
  if (!(analysis.tau > 0.0 && analysis.tau < 1.0)) throw ConfigError("analysis.tau: must be in (0, 1)");
  if (analysis.ks.empty()) throw ConfigError("analysis.ks: at least one beam size is required");
  for (int k : analysis.ks) {
    if (k < 1) throw ConfigError("analysis.ks: beam sizes must be at least 1");
  }
  if (analysis.max_t < 1) throw ConfigError("analysis.max_t: must be positive");
  if (analysis.distractors_per_reference < 1) {
    throw ConfigError("analysis.distractors_per_reference: must be at least 1");
  }
  if (analysis.gap_from_t < 0 || analysis.gap_from_t >= analysis.max_t) {
    throw ConfigError("analysis.gap_from_t: must be in [0, max_t)");
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must be non-empty");
}

fs::path ExperimentConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::uint64_t ExperimentConfig::data_seed() const { return data.seed ? *data.seed : derive_seed(seed, "data"); }

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"data", c.data},         {"model", c.model}, {"mle", c.mle},   {"mrt", c.mrt},
           {"decode", c.decode},     {"analysis", c.analysis},            {"seed", c.seed},
           {"output_dir", c.output_dir}};
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  JsonFields f(j, "");
  f.get("data", c.data);
  f.get("model", c.model);
  f.get("mle", c.mle);
  f.get("mrt", c.mrt);
  f.get("decode", c.decode);
  f.get("analysis", c.analysis);
  f.get("seed", c.seed);
  f.get("output_dir", c.output_dir);
  f.reject_unknown();
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string config_hash(const ExperimentConfig& cfg) { return hex(fnv1a(json(cfg).dump())); }

Corpus Workspace::ood_test() const {
  Corpus all;
  for (const auto& c : ood_tests) all.insert(all.end(), c.begin(), c.end());
  return all;
}

Workspace prepare_data(const ExperimentConfig& cfg) {
  Workspace ws;
  std::vector<std::string> paths{cfg.data.in_domain};
  paths.insert(paths.end(), cfg.data.out_of_domain.begin(), cfg.data.out_of_domain.end());
  for (const auto& p : paths) {
    const fs::path resolved = cfg.resolve(p);
    if (!fs::exists(resolved)) throw ConfigError("data: domain spec not found: " + resolved.string());
    ws.specs.push_back(datagen::load_domain_spec(resolved));
  }
  datagen::check_domain_set(ws.specs);
  ws.vocab = datagen::build_vocabulary(ws.specs);

  const std::uint64_t seed = cfg.data_seed();
  ws.in_domain = datagen::generate_splits(ws.specs.front(), ws.vocab,
                                          {cfg.data.train_size, cfg.data.dev_size, cfg.data.test_size}, seed);
  for (std::size_t i = 1; i < ws.specs.size(); ++i) {
    ws.ood_tests.push_back(datagen::generate_splits(ws.specs[i], ws.vocab, {0, 0, cfg.data.ood_test_size}, seed).test);
  }

  // Framed targets (BOS ... EOS) must fit the model.
  auto check = [&](const Corpus& corpus) {
    for (const auto& p : corpus) {
      const auto longest = std::max(p.source.size(), p.target.size() + 2);
      if (longest > static_cast<std::size_t>(cfg.model.max_seq_len)) {
        throw ConfigError("model.max_seq_len: " + std::to_string(cfg.model.max_seq_len) + " is shorter than a " +
                          p.domain + " sentence of " + std::to_string(longest) + " tokens");
      }
    }
  };
  check(ws.in_domain.train);
  check(ws.in_domain.dev);
  check(ws.in_domain.test);
  for (const auto& c : ws.ood_tests) check(c);
  return ws;
}

seqmodel::ModelConfig model_config(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  seqmodel::ModelConfig m = cfg.model;
  if (m.vocab_size != 0 && m.vocab_size != vocab.size()) {
    throw ConfigError("model.vocab_size: " + std::to_string(m.vocab_size) + " does not match the data vocabulary (" +
                      std::to_string(vocab.size()) + ")");
  }
  m.vocab_size = vocab.size();
  m.validate();
  return m;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.string().c_str(), "wx");
  if (f == nullptr) {
    throw std::runtime_error("output directory " + dir.string() + " is in use (remove " + path_.string() +
                             " if no other run is active)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_data(const Workspace& ws, const fs::path& out) {
  fs::create_directories(out);
  ws.vocab.save(out / "vocab.txt");
  const auto& name = ws.specs.front().name;
  datagen::write_corpus(out / (name + ".train.tsv"), ws.in_domain.train, ws.vocab);
  datagen::write_corpus(out / (name + ".dev.tsv"), ws.in_domain.dev, ws.vocab);
  datagen::write_corpus(out / (name + ".test.tsv"), ws.in_domain.test, ws.vocab);
  for (std::size_t i = 0; i < ws.ood_tests.size(); ++i) {
    datagen::write_corpus(out / (ws.specs[i + 1].name + ".test.tsv"), ws.ood_tests[i], ws.vocab);
  }
}

seqmodel::ParameterStore run_mle(const ExperimentConfig& cfg, const Workspace& ws, const fs::path& out) {
  auto params = seqmodel::ParameterStore::initialize(model_config(cfg, ws.vocab), derive_seed(cfg.seed, "model.init"));
  const auto result = objectives::train_mle(params, ws.in_domain.train, cfg.mle, derive_seed(cfg.seed, "mle"));
  fs::create_directories(out);
  params.save(out / "mle.ckpt");
  objectives::write_trace_csv(out / "mle_loss.csv", result.trace);
  return params;
}

seqmodel::ParameterStore run_mrt(const ExperimentConfig& cfg, const Workspace& ws, const seqmodel::ParameterStore& init,
                                 const fs::path& out) {
  if (init.config().vocab_size != ws.vocab.size()) {
    throw ConfigError("init checkpoint vocabulary (" + std::to_string(init.config().vocab_size) +
                      ") does not match the data vocabulary (" + std::to_string(ws.vocab.size()) + ")");
  }
  auto params = init.clone();
  const auto result = objectives::finetune_mrt(params, ws.in_domain.train, cfg.mrt, derive_seed(cfg.seed, "mrt"),
                                               &ws.in_domain.dev);
  fs::create_directories(out);
  params.save(out / "mrt.ckpt");
  objectives::write_trace_csv(out / "mrt_risk.csv", result.trace);
  auto heldout = open_output(out / "mrt_heldout.csv");
  heldout << "step,mean_cost,selected\n";
  for (const auto& [step, cost] : result.heldout) {
    heldout << step << ',' << analysis::format_number(cost) << ',' << (step == result.best_step ? 1 : 0) << '\n';
  }
  return params;
}

SystemReport evaluate_system(const ExperimentConfig& cfg, const Workspace& ws, const seqmodel::ParameterStore& params,
                             const std::string& tag) {
  const datagen::TargetGrammar grammar(ws.specs, ws.vocab);
  const Corpus ood = ws.ood_test();
  auto refs_of = [](const Corpus& c) {
    std::vector<TokenSeq> refs;
    for (const auto& p : c) refs.push_back(p.target);
    return refs;
  };

  SystemReport r;
  r.tag = tag;
  const auto in_hyps = analysis::translate_all(params, ws.in_domain.test, cfg.decode);
  r.in_domain_bleu = metrics::corpus_bleu(in_hyps, refs_of(ws.in_domain.test));
  r.in_domain = analysis::judge_translations(in_hyps, ws.in_domain.test, grammar, cfg.analysis.tau);
  const auto ood_hyps = analysis::translate_all(params, ood, cfg.decode);
  r.ood_bleu = metrics::corpus_bleu(ood_hyps, refs_of(ood));
  r.ood = analysis::judge_translations(ood_hyps, ood, grammar, cfg.analysis.tau);

  r.curves = analysis::uncertainty_curves(params, ood, ws.in_domain.test, cfg.analysis.max_t,
                                          derive_seed(cfg.seed, "analysis.distractors"), tag,
                                          cfg.analysis.distractors_per_reference);
  r.curve_gap = analysis::curve_gap(r.curves, cfg.analysis.gap_from_t);
  r.sweep = analysis::beam_sweep(params, ood, cfg.analysis.ks, cfg.decode, grammar, cfg.analysis.tau);
  return r;
}

namespace {

long count_hallucinations(const analysis::HallucinationReport& r) {
  long n = 0;
  for (const auto& j : r.judgments) n += j.is_hallucination ? 1 : 0;
  return n;
}

json system_summary(const SystemReport& r) {
  json sweep = json::array();
  for (const auto& row : r.sweep) sweep.push_back({{"k", row.k}, {"bleu", row.bleu}, {"hallucination_rate", row.hallucination_rate}});
  return json{{"in_domain_bleu", r.in_domain_bleu},
              {"in_domain_hallucination_rate", r.in_domain.rate},
              {"ood_bleu", r.ood_bleu},
              {"ood_hallucination_rate", r.ood.rate},
              {"curve_gap", r.curve_gap},
              {"beam_sweep", sweep}};
}

}  // namespace

void write_json(const fs::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

ReproduceResult reproduce(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = cfg.output_dir;
  const OutputLock lock(out);

  const Workspace ws = prepare_data(cfg);
  write_data(ws, out / "data");
  const auto mle = run_mle(cfg, ws, out);
  const auto mrt = run_mrt(cfg, ws, mle, out);

  ReproduceResult r;
  r.output_dir = out;
  r.mle = evaluate_system(cfg, ws, mle, "mle");
  r.mrt = evaluate_system(cfg, ws, mrt, "mrt");
  r.ood_p_value = analysis::compare_hallucination_significance(r.mle.ood.judgments, r.mrt.ood.judgments);

  {
    auto t3 = open_output(out / "table3_analogue.csv");
    t3 << "system,test_set,sentences,bleu,hallucinations,hallucination_rate\n";
    for (const SystemReport* s : {&r.mle, &r.mrt}) {
      t3 << s->tag << ",in_domain," << s->in_domain.judgments.size() << ',' << analysis::format_number(s->in_domain_bleu)
         << ',' << count_hallucinations(s->in_domain) << ',' << analysis::format_number(s->in_domain.rate) << '\n';
      t3 << s->tag << ",out_of_domain," << s->ood.judgments.size() << ',' << analysis::format_number(s->ood_bleu) << ','
         << count_hallucinations(s->ood) << ',' << analysis::format_number(s->ood.rate) << '\n';
    }
  }
  {
    auto t5 = open_output(out / "table5_analogue.csv");
    t5 << "system,k,bleu,hallucination_rate\n";
    for (const SystemReport* s : {&r.mle, &r.mrt}) {
      for (const auto& row : s->sweep) {
        t5 << s->tag << ',' << row.k << ',' << analysis::format_number(row.bleu) << ','
           << analysis::format_number(row.hallucination_rate) << '\n';
      }
    }
  }
  const std::vector<analysis::UncertaintyCurve> curves{r.mle.curves.references, r.mle.curves.distractors,
                                                       r.mrt.curves.references, r.mrt.curves.distractors};
  analysis::write_curves_csv(out / "figure1_analogue.csv", curves);
  analysis::write_curves_csv(out / "figure1_analogue_logprob.csv", curves, analysis::CurveValue::log_probability);
  analysis::write_assignment_csv(out / "distractors.csv", r.mle.curves.assignment);
  for (const SystemReport* s : {&r.mle, &r.mrt}) {
    analysis::write_judgments_jsonl(out / ("judgments_" + s->tag + "_in_domain.jsonl"), s->in_domain.judgments, ws.vocab);
    analysis::write_judgments_jsonl(out / ("judgments_" + s->tag + "_out_of_domain.jsonl"), s->ood.judgments, ws.vocab);
  }

  write_json(out / "summary.json", json{{"mle", system_summary(r.mle)},
                                        {"mrt", system_summary(r.mrt)},
                                        {"ood_hallucination_fisher_p", r.ood_p_value},
                                        {"distractor_length_fallback", r.mle.curves.assignment.any_fallback()}});

  json artifacts = json::array();
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (entry.is_regular_file() && entry.path().filename() != ".lock") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    artifacts.push_back({{"path", fs::relative(f, out).generic_string()},
                         {"bytes", fs::file_size(f)},
                         {"fnv1a", hex(fnv1a(read_file(f)))}});
  }
  write_json(out / "manifest.json", json{{"config_hash", config_hash(cfg)},
                                         {"seed", cfg.seed},
                                         {"build", build_identifier()},
                                         {"config", cfg},
                                         {"artifacts", artifacts}});
  return r;
}

std::vector<TokenSeq> read_sentences(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TokenSeq> out;
  std::string line;
  long number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') throw FormatError(path.string() + ":" + std::to_string(number) + ": CRLF line ending");
    std::istringstream words(line);
    TokenSeq ids;
    for (std::string w; words >> w;) {
      const auto id = vocab.find(w);
      if (!id) throw FormatError(path.string() + ":" + std::to_string(number) + ": unknown token '" + w + "'");
      ids.push_back(*id);
    }
    out.push_back(std::move(ids));
  }
  return out;
}

void write_sentences(const fs::path& path, const std::vector<TokenSeq>& sentences, const Vocabulary& vocab) {
  auto out = open_output(path);
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << vocab.token(s[i]);
    out << '\n';
  }
}

}  // namespace experiment
SEQRISK_END_NAMESPACE
