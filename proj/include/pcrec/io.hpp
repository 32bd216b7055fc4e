#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcrec/binary_io.hpp"
#include "pcrec/error.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/synth.hpp"

namespace pcrec {

// ---------------------------------------------------------------------------
// Review logs

enum class ReviewFormat { Csv, JsonLines };

inline ReviewFormat parse_review_format(const std::string& s) {
  if (s == "csv") return ReviewFormat::Csv;
  if (s == "jsonl" || s == "json-lines") return ReviewFormat::JsonLines;
  throw ConfigError("unknown review format: " + s + " (csv|jsonl)");
}

struct ParsedReviews {
  std::vector<std::pair<std::string, std::string>> pairs;  // (user, item)
  std::size_t skipped = 0;                                 // malformed lines
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// `item,user,rating,timestamp`: exactly four fields, nonempty IDs.
inline bool parse_csv_line(std::string_view line, std::pair<std::string, std::string>& out) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (fields.size() != 4 || fields[0].empty() || fields[1].empty()) return false;
  out = {std::string(fields[1]), std::string(fields[0])};
  return true;
}

inline bool parse_json_line(std::string_view line, std::pair<std::string, std::string>& out) {
  const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return false;
  const auto user = j.find("reviewerID");
  const auto item = j.find("asin");
  if (user == j.end() || item == j.end() || !user->is_string() || !item->is_string()) return false;
  auto u = user->get<std::string>();
  auto i = item->get<std::string>();
  if (u.empty() || i.empty()) return false;
  out = {std::move(u), std::move(i)};
  return true;
}

}  // namespace detail

// Streams (user, item) pairs out of a review log. Blank lines are ignored;
// any other line that does not parse is counted in `skipped`.
inline ParsedReviews parse_reviews(std::istream& in, ReviewFormat format) {
  ParsedReviews out;
  std::string line;
  std::pair<std::string, std::string> pair;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const bool ok = format == ReviewFormat::Csv ? detail::parse_csv_line(line, pair) : detail::parse_json_line(line, pair);
    if (ok) {
      out.pairs.push_back(std::move(pair));
    } else {
      ++out.skipped;
    }
  }
  if (out.pairs.empty()) throw FormatError("reviews: no valid lines");
  return out;
}

inline ParsedReviews parse_reviews(const std::string& path, ReviewFormat format) {
  auto in = open_for_read(path, false);
  return parse_reviews(in, format);
}

// ---------------------------------------------------------------------------
// Edge lists: one `user<TAB>item` per line.

inline void write_edge_list(std::ostream& out, const BipartiteGraph& g) {
  for (const auto& [u, i] : g.edges()) out << u << '\t' << i << '\n';
}

inline void write_edge_list(std::ostream& out, const LabeledGraph& lg) {
  for (const auto& [u, i] : lg.graph.edges()) out << lg.users.external(u) << '\t' << lg.items.external(i) << '\n';
}

inline std::vector<std::pair<std::string, std::string>> read_edge_pairs(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError("edge list line " + std::to_string(line_no) + ": expected user<TAB>item");
    }
    const auto user = detail::trim(std::string_view(line).substr(0, tab));
    const auto item = detail::trim(std::string_view(line).substr(tab + 1));
    if (user.empty() || item.empty()) throw FormatError("edge list line " + std::to_string(line_no) + ": empty id");
    pairs.emplace_back(user, item);
  }
  return pairs;
}

inline std::uint32_t parse_index(std::string_view s) {
  std::uint32_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("expected a dense integer id, got '" + std::string(s) + "'");
  return v;
}

// Dense-integer edge list; counts are max index + 1 unless given larger.
inline BipartiteGraph read_dense_edge_list(std::istream& in, std::uint32_t min_users = 0, std::uint32_t min_items = 0) {
  std::vector<Edge> edges;
  for (const auto& [u, i] : read_edge_pairs(in)) edges.emplace_back(parse_index(u), parse_index(i));
  if (edges.empty()) throw EmptyGraph("edge list: no edges");
  std::uint32_t users = min_users, items = min_items;
  for (const auto& [u, i] : edges) {
    users = std::max(users, u + 1);
    items = std::max(items, i + 1);
  }
  return BipartiteGraph::from_edges(users, items, std::move(edges));
}

inline LabeledGraph read_labeled_edge_list(std::istream& in) { return build_graph(read_edge_pairs(in)); }

// ---------------------------------------------------------------------------
// Common users

inline CommonUserAlignment align_common_users(const IdMap& source_users, const IdMap& target_users) {
  CommonUserAlignment out;
  for (std::uint32_t t = 0; t < target_users.size(); ++t) {
    if (auto s = source_users.find(target_users.external(t))) out.emplace_back(*s, t);
  }
  return out;
}

// `source_index<TAB>target_index` per line.
inline void write_alignment(std::ostream& out, const CommonUserAlignment& a) {
  for (const auto& [s, t] : a) out << s << '\t' << t << '\n';
}

inline CommonUserAlignment read_alignment(std::istream& in) {
  CommonUserAlignment a;
  for (const auto& [s, t] : read_edge_pairs(in)) a.emplace_back(parse_index(s), parse_index(t));
  return a;
}

// ---------------------------------------------------------------------------
// Embedding tables
//   "PCRECEMB" | u32 version | u64 users | u64 items | u32 d | f64 user rows | f64 item rows

inline constexpr std::string_view kTableMagic = "PCRECEMB";
inline constexpr std::uint32_t kTableVersion = 1;

inline void write_table(std::ostream& out, const EmbeddingTable& t) {
  BinaryWriter w(out);
  w.bytes(kTableMagic);
  w.u32(kTableVersion);
  w.u64(t.users.rows());
  w.u64(t.items.rows());
  w.u32(static_cast<std::uint32_t>(t.dim()));
  w.f64s(as_span(t.users));
  w.f64s(as_span(t.items));
}

inline EmbeddingTable read_table(std::istream& in) {
  BinaryReader r(in);
  r.expect(kTableMagic);
  if (const auto v = r.u32(); v != kTableVersion) {
    throw FormatError("embedding table version " + std::to_string(v) + " unsupported");
  }
  const std::uint64_t users = r.u64();
  const std::uint64_t items = r.u64();
  const std::uint32_t d = r.u32();
  if (users > (1ull << 31) || items > (1ull << 31) || d > (1u << 16)) throw FormatError("embedding table: implausible shape");
  EmbeddingTable t{DenseMatrix(static_cast<Eigen::Index>(users), d), DenseMatrix(static_cast<Eigen::Index>(items), d)};
  r.f64s(as_span(t.users));
  r.f64s(as_span(t.items));
  return t;
}

inline void save_table(const std::string& path, const EmbeddingTable& t) {
  auto out = open_for_write(path);
  write_table(out, t);
  if (!out) throw IoError("write failed: " + path);
}

inline EmbeddingTable load_table(const std::string& path) {
  auto in = open_for_read(path);
  return read_table(in);
}

// Inspection export: `u<index>` / `i<index>` then TAB then comma-separated values.
inline void write_table_text(std::ostream& out, const EmbeddingTable& t) {
  char buf[32];
  auto rows = [&](const DenseMatrix& m, char prefix) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << prefix << r << '\t';
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
        out << (c ? "," : "") << buf;
      }
      out << '\n';
    }
  };
  rows(t.users, 'u');
  rows(t.items, 'i');
}

// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  auto in = open_for_read(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  auto out = open_for_write(path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace pcrec
