#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/analysis/analysis.hpp"
#include "seqrisk/datagen/datagen.hpp"
#include "seqrisk/decoding/decoding.hpp"
#include "seqrisk/objectives/objectives.hpp"
#include "seqrisk/seqmodel/config.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace experiment {

namespace fs = std::filesystem;

struct DataConfig {
  // DomainSpec files; relative paths resolve against the config file.
  std::string in_domain;
  std::vector<std::string> out_of_domain;
  int train_size = 20000;
  int dev_size = 1000;
  int test_size = 1000;
  int ood_test_size = 1000;
  // Defaults to a stream derived from the global seed.
  std::optional<std::uint64_t> seed;
};

struct AnalysisConfig {
  double tau = 0.2;
  std::vector<int> ks{1, 4, 50};
  int max_t = 20;
  int distractors_per_reference = 1;
  // First time step included in the reported curve gap.
  int gap_from_t = 3;
};

struct ExperimentConfig {
  DataConfig data;
  seqmodel::ModelConfig model;
  objectives::MLEConfig mle;
  objectives::MRTConfig mrt;
  decoding::DecodeConfig decode;
  AnalysisConfig analysis;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  // Directory that relative paths are resolved against.
  fs::path base_dir = ".";

  // Checks every section; model.vocab_size may be 0 (filled from the data).
  void validate() const;
  fs::path resolve(const std::string& path) const;
  std::uint64_t data_seed() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const AnalysisConfig& c);
void from_json(const nlohmann::json& j, AnalysisConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Strict: unknown fields and type errors raise ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);

/// Hex FNV-1a digest of the canonical config JSON.
std::string config_hash(const ExperimentConfig& cfg);

/// Domain specs, shared vocabulary and generated splits.
struct Workspace {
  std::vector<datagen::DomainSpec> specs;  // in-domain first
  seqmodel::Vocabulary vocab;
  datagen::Splits in_domain;
  std::vector<datagen::Corpus> ood_tests;

  datagen::Corpus ood_test() const;  // all OOD domains, concatenated
};

Workspace prepare_data(const ExperimentConfig& cfg);
seqmodel::ModelConfig model_config(const ExperimentConfig& cfg, const seqmodel::Vocabulary& vocab);

/// Exclusive claim on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

// Pipeline stages; each writes under `out` and returns the main artifact.
void write_data(const Workspace& ws, const fs::path& out);
seqmodel::ParameterStore run_mle(const ExperimentConfig& cfg, const Workspace& ws, const fs::path& out);
seqmodel::ParameterStore run_mrt(const ExperimentConfig& cfg, const Workspace& ws, const seqmodel::ParameterStore& init,
                                 const fs::path& out);

struct SystemReport {
  std::string tag;
  double in_domain_bleu = 0.0;
  double ood_bleu = 0.0;
  analysis::HallucinationReport in_domain;
  analysis::HallucinationReport ood;
  analysis::UncertaintyResult curves;
  double curve_gap = 0.0;
  std::vector<analysis::SweepRow> sweep;
};

SystemReport evaluate_system(const ExperimentConfig& cfg, const Workspace& ws, const seqmodel::ParameterStore& params,
                             const std::string& tag);

struct ReproduceResult {
  SystemReport mle;
  SystemReport mrt;
  // Two-tailed Fisher p-value of the OOD hallucination counts.
  double ood_p_value = 1.0;
  fs::path output_dir;
};

/// Data, MLE, MRT, then the three analyses. Writes mle.ckpt, mrt.ckpt,
/// table3_analogue.csv, table5_analogue.csv, figure1_analogue.csv, training
/// traces, judgments, summary.json and manifest.json.
ReproduceResult reproduce(const ExperimentConfig& cfg);

// Line-oriented IO for the standalone commands: one space-separated sentence per line.
std::vector<seqmodel::TokenSeq> read_sentences(const fs::path& path, const seqmodel::Vocabulary& vocab);
void write_sentences(const fs::path& path, const std::vector<seqmodel::TokenSeq>& sentences,
                     const seqmodel::Vocabulary& vocab);

void write_json(const fs::path& path, const nlohmann::json& j);

}  // namespace experiment
SEQRISK_END_NAMESPACE
