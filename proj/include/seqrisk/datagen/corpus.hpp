#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seqrisk/seqmodel/transformer.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace datagen {

using seqmodel::TokenSeq;

/// A translation pair of content ids (no BOS/EOS framing) with its domain.
struct SentencePair {
  TokenSeq source;
  TokenSeq target;
  std::string domain;

  bool operator==(const SentencePair&) const = default;
};

using Corpus = std::vector<SentencePair>;

/// BOS + ids + EOS.
TokenSeq framed(std::span<const int> ids);

/// TSV: source tokens, TAB, target tokens, TAB, domain; LF line endings.
void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const seqmodel::Vocabulary& vocab);
// Tokens missing from the vocabulary are a FormatError (not mapped to UNK).
Corpus read_corpus(const std::filesystem::path& path, const seqmodel::Vocabulary& vocab);

}  // namespace datagen
SEQRISK_END_NAMESPACE
