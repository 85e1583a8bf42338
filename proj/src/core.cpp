#include "seqrisk/core.hpp"

#ifndef SEQRISK_VERSION
#define SEQRISK_VERSION "0.0.0"
#endif

SEQRISK_BEGIN_NAMESPACE

std::uint64_t derive_seed(std::uint64_t parent, const std::string& label) {
  // FNV-1a over the label, mixed into the parent with splitmix64.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = parent + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string build_identifier() {
  std::string id = std::string("seqrisk-") + SEQRISK_VERSION;
#if defined(SEQRISK_DOUBLE_PRECISION)
  id += "-f64";
#else
  id += "-f32";
#endif
#if defined(__VERSION__)
  id += " (" __VERSION__ ")";
#endif
  return id;
}

SEQRISK_END_NAMESPACE
