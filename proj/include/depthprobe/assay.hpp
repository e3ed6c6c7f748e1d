#pragma once

#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "depthprobe/errors.hpp"
#include "depthprobe/vocab.hpp"

// Mutation codes and DMS-style assays, ProteinGym CSV schema compatible
// (columns `mutant` with colon-separated codes and `DMS_score`).

namespace depthprobe {

struct Mutation {
  char wildtype_aa = 'A';
  int position = 1;  // 1-based
  char mutant_aa = 'A';

  friend bool operator==(const Mutation&, const Mutation&) = default;
};

inline std::string format_mutation(const Mutation& m) {
  return std::string(1, m.wildtype_aa) + std::to_string(m.position) + std::string(1, m.mutant_aa);
}

// Parses "W24K": wildtype letter, 1-based position, mutant letter.
inline Mutation parse_mutation(const std::string& code) {
  if (code.size() < 3) throw FormatError("mutation code too short: '" + code + "'");
  Mutation m;
  m.wildtype_aa = code.front();
  m.mutant_aa = code.back();
  if (!is_amino_acid(m.wildtype_aa) || !is_amino_acid(m.mutant_aa))
    throw FormatError("mutation code has non amino-acid letter: '" + code + "'");
  const std::string digits = code.substr(1, code.size() - 2);
  for (char c : digits)
    if (c < '0' || c > '9') throw FormatError("malformed mutation code: '" + code + "'");
  m.position = std::atoi(digits.c_str());
  if (m.position < 1) throw FormatError("mutation position must be >= 1: '" + code + "'");
  return m;
}

inline std::vector<Mutation> parse_mutation_set(const std::string& codes) {
  std::vector<Mutation> out;
  std::stringstream ss(codes);
  std::string part;
  while (std::getline(ss, part, ':')) {
    if (part.empty()) throw FormatError("empty mutation code in '" + codes + "'");
    out.push_back(parse_mutation(part));
  }
  if (out.empty()) throw FormatError("no mutation codes in '" + codes + "'");
  return out;
}

inline std::string format_mutation_set(const std::vector<Mutation>& set) {
  std::string out;
  for (size_t i = 0; i < set.size(); ++i) {
    if (i) out += ':';
    out += format_mutation(set[i]);
  }
  return out;
}

struct Variant {
  std::vector<Mutation> mutations;
  double measurement = 0.0;
};

struct Assay {
  std::string id;
  std::string wildtype;
  std::vector<Variant> variants;
};

// Applies substitutions to the wildtype. Positions must be distinct, in
// range, and carry the wildtype letter they claim.
inline std::string apply_mutations(const std::string& wildtype,
                                   const std::vector<Mutation>& mutations) {
  std::string out = wildtype;
  std::set<int> seen;
  for (const Mutation& m : mutations) {
    if (m.position < 1 || m.position > static_cast<int>(wildtype.size()))
      throw ValueError("mutation " + format_mutation(m) + " position out of range for wildtype of length " +
                       std::to_string(wildtype.size()));
    if (!seen.insert(m.position).second)
      throw ValueError("duplicate mutation position " + std::to_string(m.position));
    if (wildtype[static_cast<size_t>(m.position - 1)] != m.wildtype_aa)
      throw ValueError("mutation " + format_mutation(m) + " does not match wildtype letter '" +
                       std::string(1, wildtype[static_cast<size_t>(m.position - 1)]) + "'");
    if (!is_amino_acid(m.mutant_aa))
      throw ValueError("mutation " + format_mutation(m) + " has invalid mutant letter");
    out[static_cast<size_t>(m.position - 1)] = m.mutant_aa;
  }
  return out;
}

namespace detail {

// Minimal CSV field splitter with double-quote support.
inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

}  // namespace detail

// Parses a ProteinGym-style assay CSV against a supplied wildtype. Requires
// `mutant` and `DMS_score` columns; anything else (e.g. mutated_sequence)
// is ignored. Throws with the 1-based data row number on any bad row.
inline Assay parse_assay(std::istream& in, const std::string& wildtype, const std::string& id) {
  if (wildtype.empty()) throw ValueError("parse_assay: empty wildtype");
  for (char c : wildtype)
    if (!is_amino_acid(c))
      throw ValueError("parse_assay: wildtype has non amino-acid letter '" + std::string(1, c) + "'");

  std::string line;
  if (!std::getline(in, line)) throw FormatError("assay CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_row(line);
  int mutant_col = -1;
  int score_col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "mutant") mutant_col = static_cast<int>(i);
    if (header[i] == "DMS_score") score_col = static_cast<int>(i);
  }
  if (mutant_col < 0) throw FormatError("assay CSV missing required column 'mutant'");
  if (score_col < 0) throw FormatError("assay CSV missing required column 'DMS_score'");

  Assay assay;
  assay.id = id;
  assay.wildtype = wildtype;
  int row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row_no;
    const auto fields = detail::split_csv_row(line);
    const auto row_err = [&](const std::string& msg) {
      return FormatError("assay CSV row " + std::to_string(row_no) + ": " + msg);
    };
    if (static_cast<int>(fields.size()) <= std::max(mutant_col, score_col))
      throw row_err("too few fields");
    Variant v;
    try {
      v.mutations = parse_mutation_set(fields[static_cast<size_t>(mutant_col)]);
    } catch (const Error& e) {
      throw row_err(e.what());
    }
    for (const Mutation& m : v.mutations) {
      if (m.position > static_cast<int>(wildtype.size()))
        throw row_err("mutation " + format_mutation(m) + " position out of range");
      if (wildtype[static_cast<size_t>(m.position - 1)] != m.wildtype_aa)
        throw row_err("wildtype mismatch for " + format_mutation(m) + ": sequence has '" +
                      std::string(1, wildtype[static_cast<size_t>(m.position - 1)]) + "'");
    }
    char* end = nullptr;
    const std::string& score_text = fields[static_cast<size_t>(score_col)];
    v.measurement = std::strtod(score_text.c_str(), &end);
    if (end == score_text.c_str() || *end != '\0' || !std::isfinite(v.measurement))
      throw row_err("bad DMS_score '" + score_text + "'");
    assay.variants.push_back(std::move(v));
  }
  if (assay.variants.size() < 2)
    throw FormatError("assay CSV needs at least 2 variants, got " +
                      std::to_string(assay.variants.size()));
  return assay;
}

}  // namespace depthprobe
