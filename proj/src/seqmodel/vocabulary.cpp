#include "seqrisk/seqmodel/vocabulary.hpp"

#include <fstream>

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
}

int Vocabulary::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw ContractError("vocabulary tokens must be non-empty and contain no whitespace: '" + token + "'");
  }
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  return std::nullopt;
}

int Vocabulary::id(const std::string& token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids, bool strip) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (strip && (id == kPad || id == kBos || id == kEos)) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno <= kNumSpecials) {
      if (line != v.tokens_[static_cast<std::size_t>(lineno - 1)]) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected special token " +
                          v.tokens_[static_cast<std::size_t>(lineno - 1)]);
      }
      continue;
    }
    if (v.find(line)) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": duplicate token " + line);
    v.add(line);
  }
  return v;
}

std::vector<int> strip_specials(std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    out.push_back(id);
  }
  return out;
}

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
