#pragma once

// Ambiguous-word annotation records and their TSV form:
//   sentence_id <TAB> ambiguous_word <TAB> correct,candidates <TAB> incorrect,candidates

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacmt {

struct MltRecord {
  std::size_t sentence_id = 0;
  std::string word;
  std::vector<std::string> correct;
  std::vector<std::string> incorrect;
};

inline void validate(const MltRecord& r) {
  if (r.correct.empty())
    throw std::invalid_argument("record for sentence " + std::to_string(r.sentence_id) + " has no correct candidate");
  for (const auto& c : r.correct)
    if (std::find(r.incorrect.begin(), r.incorrect.end(), c) != r.incorrect.end())
      throw std::invalid_argument("candidate '" + c + "' is both correct and incorrect in sentence " +
                                  std::to_string(r.sentence_id));
}

namespace detail {
inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}
inline std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}
}  // namespace detail

inline std::vector<MltRecord> parse_mlt(std::istream& is) {
  std::vector<MltRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 4)
      throw std::runtime_error("MLT line " + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                               std::to_string(cols.size()));
    MltRecord r;
    try {
      std::size_t used = 0;
      r.sentence_id = std::stoul(cols[0], &used);
      if (used != cols[0].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error("MLT line " + std::to_string(lineno) + ": bad sentence id '" + cols[0] + "'");
    }
    r.word = cols[1];
    for (auto& c : detail::split(cols[2], ','))
      if (!c.empty()) r.correct.push_back(c);
    for (auto& c : detail::split(cols[3], ','))
      if (!c.empty()) r.incorrect.push_back(c);
    try {
      validate(r);
    } catch (const std::exception& e) {
      throw std::runtime_error("MLT line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MltRecord> load_mlt(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open MLT file " + path);
  return parse_mlt(is);
}

inline void write_mlt(std::ostream& os, const std::vector<MltRecord>& records) {
  for (const auto& r : records)
    os << r.sentence_id << '\t' << r.word << '\t' << detail::join(r.correct, ",") << '\t'
       << detail::join(r.incorrect, ",") << '\n';
}

inline void save_mlt(const std::string& path, const std::vector<MltRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write MLT file " + path);
  write_mlt(os, records);
}

}  // namespace sacmt
