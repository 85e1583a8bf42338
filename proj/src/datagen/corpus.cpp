#include "seqrisk/datagen/corpus.hpp"

#include <fstream>
#include <sstream>

SEQRISK_BEGIN_NAMESPACE
namespace datagen {

using seqmodel::Vocabulary;

namespace {

std::string join(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

TokenSeq parse_tokens(const std::string& field, const Vocabulary& vocab, const std::string& where) {
  if (field.empty()) throw FormatError(where + ": empty token sequence");
  TokenSeq ids;
  for (const auto& tok : split(field, ' ')) {
    if (tok.empty()) throw FormatError(where + ": empty token (repeated or edge space)");
    const auto id = vocab.find(tok);
    if (!id) throw FormatError(where + ": unknown token '" + tok + "'");
    if (Vocabulary::is_special(*id)) throw FormatError(where + ": reserved token '" + tok + "' in corpus text");
    ids.push_back(*id);
  }
  return ids;
}

}  // namespace

TokenSeq framed(std::span<const int> ids) {
  TokenSeq out{Vocabulary::kBos};
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  for (const auto& p : corpus) {
    if (p.domain.empty() || p.domain.find_first_of("\t\r\n") != std::string::npos) {
      throw ContractError("write_corpus: domain tag must be non-empty and free of TAB/newlines");
    }
    out << join(p.source, vocab) << '\t' << join(p.target, vocab) << '\t' << p.domain << '\n';
  }
  if (!out) throw std::runtime_error("failed writing corpus " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus " + path.string());
  Corpus corpus;
  std::string line;
  long number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = path.string() + ":" + std::to_string(number);
    if (!line.empty() && line.back() == '\r') {
      throw FormatError(where + ": CRLF line ending; corpus files must use LF");
    }
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw FormatError(where + ": expected 3 TAB-separated fields (source, target, domain), found " +
                        std::to_string(fields.size()));
    }
    if (fields[2].empty()) throw FormatError(where + ": empty domain tag");
    corpus.push_back({parse_tokens(fields[0], vocab, where + " (source)"),
                      parse_tokens(fields[1], vocab, where + " (target)"), fields[2]});
  }
  return corpus;
}

}  // namespace datagen
SEQRISK_END_NAMESPACE
