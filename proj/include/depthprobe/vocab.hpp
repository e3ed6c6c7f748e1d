#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "depthprobe/errors.hpp"

// Token ids 0..4 are specials; the 20 standard amino acids follow in
// alphabetical order, giving the minimum vocabulary of 25.

namespace depthprobe {

enum SpecialToken : int {
  kPadToken = 0,
  kMaskToken = 1,
  kBosToken = 2,
  kEosToken = 3,
  kUnkToken = 4,
};

inline constexpr int kNumSpecialTokens = 5;
inline constexpr const char* kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kNumAminoAcids = 20;
inline constexpr int kMinVocab = kNumSpecialTokens + kNumAminoAcids;

// Token id for an amino-acid letter, or -1 if outside the 20-letter alphabet.
inline int aa_to_token(char aa) {
  for (int i = 0; i < kNumAminoAcids; ++i)
    if (kAminoAcids[i] == aa) return kNumSpecialTokens + i;
  return -1;
}

inline char token_to_aa(int token) {
  const int idx = token - kNumSpecialTokens;
  if (idx < 0 || idx >= kNumAminoAcids) return '?';
  return kAminoAcids[idx];
}

inline bool is_amino_acid(char aa) { return aa_to_token(aa) >= 0; }

struct EncodeResult {
  std::vector<int> tokens;
  int unknown_count = 0;  // letters that mapped to UNK
};

inline EncodeResult encode_sequence(const std::string& seq, bool add_bos = false) {
  EncodeResult out;
  out.tokens.reserve(seq.size() + (add_bos ? 1 : 0));
  if (add_bos) out.tokens.push_back(kBosToken);
  for (char c : seq) {
    const int tok = aa_to_token(c);
    if (tok < 0) {
      out.tokens.push_back(kUnkToken);
      ++out.unknown_count;
    } else {
      out.tokens.push_back(tok);
    }
  }
  return out;
}

struct Prompt {
  std::vector<int> tokens;
  std::string origin;  // FASTA record id or synthetic seed label
};

// FNV-1a 64 over the token ids. Used to derive per-prompt seed streams from
// content, so a prompt gets the same treatment in any prompt-set it appears
// in (set-level metrics then aggregate exactly).
inline std::uint64_t token_fingerprint(std::span<const int> tokens) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (int t : tokens) {
    for (int shift = 0; shift < 32; shift += 8) {
      h ^= static_cast<std::uint8_t>((static_cast<std::uint32_t>(t) >> shift) & 0xFF);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

struct FastaRecord {
  std::string id;
  std::string sequence;
};

inline std::vector<FastaRecord> parse_fasta(std::istream& in) {
  std::vector<FastaRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      FastaRecord rec;
      const auto space = line.find_first_of(" \t");
      rec.id = line.substr(1, space == std::string::npos ? std::string::npos : space - 1);
      records.push_back(std::move(rec));
    } else {
      if (records.empty()) throw FormatError("FASTA: sequence data before first '>' header");
      records.back().sequence += line;
    }
  }
  return records;
}

inline std::vector<FastaRecord> read_fasta_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open FASTA file: " + path);
  auto records = parse_fasta(in);
  if (records.empty()) throw FormatError("FASTA file has no records: " + path);
  return records;
}

inline void write_fasta_file(const std::string& path, const std::vector<FastaRecord>& records) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write FASTA file: " + path);
  for (const auto& rec : records) out << '>' << rec.id << '\n' << rec.sequence << '\n';
}

struct PromptSet {
  std::vector<Prompt> prompts;
  int unknown_count = 0;
};

// Reads prompts from FASTA (">id" records) or plain text (one sequence per
// line; any line starting with '>' switches to FASTA parsing). Letters
// outside the amino-acid alphabet map to UNK and are counted.
inline PromptSet load_prompts(const std::string& path, bool add_bos) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open prompt file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  PromptSet out;
  const bool fasta = text.find('>') != std::string::npos;
  if (fasta) {
    std::istringstream stream(text);
    for (auto& rec : parse_fasta(stream)) {
      auto enc = encode_sequence(rec.sequence, add_bos);
      out.unknown_count += enc.unknown_count;
      out.prompts.push_back({std::move(enc.tokens), std::move(rec.id)});
    }
  } else {
    std::istringstream stream(text);
    std::string line;
    int line_no = 0;
    while (std::getline(stream, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto enc = encode_sequence(line, add_bos);
      out.unknown_count += enc.unknown_count;
      out.prompts.push_back({std::move(enc.tokens), "line" + std::to_string(line_no)});
    }
  }
  if (out.prompts.empty()) throw FormatError("no sequences found in: " + path);
  return out;
}

}  // namespace depthprobe
