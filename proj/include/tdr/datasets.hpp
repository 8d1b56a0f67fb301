#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"

namespace tdr {

enum class RatingFileFormat { AsciiMatrix, DelimitedTriples };

struct RatingFileSpec {
  RatingFileFormat format = RatingFileFormat::DelimitedTriples;
  char delimiter = ' ';  // triples only; ' ' means any whitespace
  double scale_min = 1.0;
  double scale_max = 5.0;
  bool zero_means_missing = true;  // matrix format: a zero cell is unobserved
};

struct Triples {
  std::vector<std::size_t> user;
  std::vector<std::size_t> item;
  std::vector<double> rating;

  std::size_t size() const { return user.size(); }
  bool empty() const { return user.empty(); }
  void push_back(std::size_t u, std::size_t i, double r) {
    user.push_back(u);
    item.push_back(i);
    rating.push_back(r);
  }
};

// A parsed rating file: dense-indexed triples plus the id maps that translate
// dense indices back to the ids found in the file.
struct TripleLoad {
  Triples triples;
  PairSpace space{1, 1};
  std::vector<std::uint64_t> user_ids;  // dense index -> file id
  std::vector<std::uint64_t> item_ids;
  std::size_t duplicates_dropped = 0;
};

namespace detail {

inline ParseError parse_fail(std::string_view what, std::size_t line_no,
                             std::string_view detail_msg) {
  std::ostringstream os;
  os << what << ": line " << line_no << ": " << detail_msg;
  return ParseError(os.str());
}

inline bool parse_u64(const std::string& tok, std::uint64_t& out) {
  if (tok.empty()) return false;
  std::uint64_t v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  out = v;
  return true;
}

inline bool parse_f64(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  std::size_t consumed = 0;
  try {
    out = std::stod(tok, &consumed);
  } catch (...) {
    return false;
  }
  return consumed == tok.size();
}

}  // namespace detail

// Whitespace-separated integer matrix, one row per line; a cell of 0 means
// missing when the spec says so. Dimensions come from the file itself.
inline TripleLoad load_matrix(std::istream& is, const RatingFileSpec& spec) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t n_cols = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      std::uint64_t cell = 0;
      if (!detail::parse_u64(tok, cell)) {
        throw detail::parse_fail("matrix file", line_no, "non-integer token '" + tok + "'");
      }
      row.push_back(static_cast<double>(cell));
    }
    if (row.empty()) continue;  // blank line
    if (n_cols == 0) {
      n_cols = row.size();
    } else if (row.size() != n_cols) {
      std::ostringstream os;
      os << "expected " << n_cols << " columns, got " << row.size();
      throw detail::parse_fail("matrix file", line_no, os.str());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("matrix file: no rows");

  TripleLoad out;
  out.space = PairSpace(rows.size(), n_cols);
  out.user_ids.resize(rows.size());
  out.item_ids.resize(n_cols);
  for (std::size_t u = 0; u < rows.size(); ++u) out.user_ids[u] = u;
  for (std::size_t i = 0; i < n_cols; ++i) out.item_ids[i] = i;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    for (std::size_t i = 0; i < n_cols; ++i) {
      const double r = rows[u][i];
      if (spec.zero_means_missing && r == 0.0) continue;
      if (r < spec.scale_min || r > spec.scale_max) {
        std::ostringstream os;
        os << "rating " << r << " outside scale [" << spec.scale_min << ", " << spec.scale_max
           << "]";
        throw detail::parse_fail("matrix file", u + 1, os.str());
      }
      out.triples.push_back(u, i, r);
    }
  }
  return out;
}

// Lines of "user item rating". Ids are remapped to dense indices in order of
// first appearance; a repeated (user, item) keeps the last rating seen.
inline TripleLoad load_triples(std::istream& is, const RatingFileSpec& spec) {
  TripleLoad out;
  std::unordered_map<std::uint64_t, std::size_t> user_map, item_map;
  std::unordered_map<std::uint64_t, std::size_t> seen;  // packed (u,i) -> triple slot
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::vector<std::string> toks;
    if (spec.delimiter == ' ') {
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) toks.push_back(tok);
    } else {
      std::string tok;
      std::istringstream ls(line);
      while (std::getline(ls, tok, spec.delimiter)) toks.push_back(tok);
    }
    if (toks.empty()) continue;
    if (toks.size() != 3) {
      std::ostringstream os;
      os << "expected 3 fields, got " << toks.size();
      throw detail::parse_fail("triple file", line_no, os.str());
    }
    std::uint64_t uid = 0, iid = 0;
    double r = 0.0;
    if (!detail::parse_u64(toks[0], uid) || !detail::parse_u64(toks[1], iid)) {
      throw detail::parse_fail("triple file", line_no, "non-integer id");
    }
    if (!detail::parse_f64(toks[2], r)) {
      throw detail::parse_fail("triple file", line_no, "unreadable rating '" + toks[2] + "'");
    }
    if (r < spec.scale_min || r > spec.scale_max) {
      std::ostringstream os;
      os << "rating " << r << " outside scale [" << spec.scale_min << ", " << spec.scale_max
         << "]";
      throw detail::parse_fail("triple file", line_no, os.str());
    }
    auto uit = user_map.find(uid);
    if (uit == user_map.end()) {
      uit = user_map.emplace(uid, out.user_ids.size()).first;
      out.user_ids.push_back(uid);
    }
    auto iit = item_map.find(iid);
    if (iit == item_map.end()) {
      iit = item_map.emplace(iid, out.item_ids.size()).first;
      out.item_ids.push_back(iid);
    }
    const std::size_t du = uit->second, di = iit->second;
    const std::uint64_t key = (static_cast<std::uint64_t>(du) << 32) | di;
    auto sit = seen.find(key);
    if (sit != seen.end()) {
      out.triples.rating[sit->second] = r;
      ++out.duplicates_dropped;
    } else {
      seen.emplace(key, out.triples.size());
      out.triples.push_back(du, di, r);
    }
  }
  if (out.triples.empty()) throw DataError("triple file: no triples");
  out.space = PairSpace(out.user_ids.size(), out.item_ids.size());
  return out;
}

inline TripleLoad load_rating_file(const std::string& path, const RatingFileSpec& spec) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open rating file: " + path);
  return spec.format == RatingFileFormat::AsciiMatrix ? load_matrix(f, spec)
                                                      : load_triples(f, spec);
}

// ---------------------------------------------------------------------------
// Train/validation/test split. Validation is carved out of the biased
// (self-selected) triples; the randomized-exposure triples stay whole as the
// test set.

struct SplitDataset {
  PairSpace space{1, 1};
  Triples train;
  Triples val;
  Triples test;
};

namespace detail {

inline void check_disjoint_pairs(const Triples& a, const Triples& b, const PairSpace& space,
                                 const char* what) {
  std::vector<std::uint8_t> seen(space.total(), 0);
  for (std::size_t k = 0; k < a.size(); ++k) seen[space.index(a.user[k], a.item[k])] = 1;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (seen[space.index(b.user[k], b.item[k])]) {
      throw DataError(std::string("make_split: ") + what + " overlap by (user, item)");
    }
  }
}

}  // namespace detail

inline SplitDataset make_split(const Triples& mnar, const Triples& mar, const PairSpace& space,
                               double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw ConfigError("make_split: val_fraction outside (0, 0.5)");
  }
  if (mnar.empty() || mar.empty()) throw DataError("make_split: empty partition");

  std::vector<std::size_t> order(mnar.size());
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng(seed);
  RngStream carve = rng.stream("val-carve");
  carve.shuffle(order);
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(mnar.size())));
  if (n_val == 0 || n_val == mnar.size()) throw DataError("make_split: empty partition");

  std::vector<std::uint8_t> is_val(mnar.size(), 0);
  for (std::size_t j = 0; j < n_val; ++j) is_val[order[j]] = 1;

  SplitDataset out;
  out.space = space;
  for (std::size_t k = 0; k < mnar.size(); ++k) {
    (is_val[k] ? out.val : out.train).push_back(mnar.user[k], mnar.item[k], mnar.rating[k]);
  }
  out.test = mar;
  detail::check_disjoint_pairs(out.train, out.test, space, "train/test");
  detail::check_disjoint_pairs(out.val, out.test, space, "val/test");
  return out;
}

// ---------------------------------------------------------------------------
// Binary archive: id maps, triple arrays, and the split, round-tripping
// bit-identically.

inline constexpr std::uint64_t kSplitMagic = 0x5244545330314646ULL;

namespace detail {

inline void write_sizes(std::ostream& os, const std::vector<std::size_t>& xs) {
  write_u64(os, xs.size());
  for (std::size_t v : xs) write_u64(os, v);
}

inline std::vector<std::size_t> read_sizes(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::vector<std::size_t> xs(n);
  for (std::uint64_t k = 0; k < n; ++k) xs[k] = read_u64(is);
  return xs;
}

inline void write_triples(std::ostream& os, const Triples& t) {
  write_sizes(os, t.user);
  write_sizes(os, t.item);
  write_doubles(os, t.rating);
}

inline Triples read_triples(std::istream& is) {
  Triples t;
  t.user = read_sizes(is);
  t.item = read_sizes(is);
  t.rating = read_doubles(is);
  if (t.user.size() != t.item.size() || t.user.size() != t.rating.size()) {
    throw ParseError("split archive: triple arrays disagree");
  }
  return t;
}

}  // namespace detail

inline void save_split(std::ostream& os, const SplitDataset& s) {
  detail::write_u64(os, kSplitMagic);
  detail::write_u64(os, s.space.n_users);
  detail::write_u64(os, s.space.n_items);
  detail::write_triples(os, s.train);
  detail::write_triples(os, s.val);
  detail::write_triples(os, s.test);
}

inline SplitDataset load_split(std::istream& is) {
  if (detail::read_u64(is) != kSplitMagic) throw ParseError("split archive: bad magic");
  SplitDataset s;
  const std::size_t nu = detail::read_u64(is);
  const std::size_t ni = detail::read_u64(is);
  s.space = PairSpace(nu, ni);
  s.train = detail::read_triples(is);
  s.val = detail::read_triples(is);
  s.test = detail::read_triples(is);
  return s;
}

}  // namespace tdr
