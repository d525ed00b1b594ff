#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clipgeom/error.hpp"

namespace clipgeom {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Modality : std::uint8_t { image = 0, text = 1, other = 2 };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::text: return "text";
    case Modality::other: return "other";
  }
  return "other";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "image") return Modality::image;
  if (s == "text") return Modality::text;
  if (s == "other") return Modality::other;
  throw InvalidArgument("unknown modality '" + std::string(s) + "'");
}

/// A modality-tagged M x n matrix of raw embedding vectors, one row per
/// instance. Values are held in double precision; the on-disk form is float32.
///
/// Construction validates the invariants (finite data, ids unique and one per
/// row), after which the set is treated as immutable.
class EmbeddingSet {
 public:
  EmbeddingSet(Modality modality, RowMatrix data,
               std::optional<std::vector<std::string>> ids = std::nullopt)
      : modality_(modality), data_(std::move(data)), ids_(std::move(ids)) {
    validate();
  }

  Modality modality() const noexcept { return modality_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  std::size_t count() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  const RowMatrix& data() const noexcept { return data_; }
  const std::optional<std::vector<std::string>>& ids() const noexcept { return ids_; }
  bool has_ids() const noexcept { return ids_.has_value(); }

  auto row(std::size_t j) const { return data_.row(static_cast<Eigen::Index>(j)); }

  EmbeddingSet with_modality(Modality m) const { return EmbeddingSet(m, data_, ids_); }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.modality_ == b.modality_ && a.data_.rows() == b.data_.rows() &&
           a.data_.cols() == b.data_.cols() && a.data_ == b.data_ && a.ids_ == b.ids_;
  }

 private:
  void validate() const {
    detail::require(data_.rows() > 0, "embedding set must contain at least one row");
    detail::require(data_.cols() > 0, "embedding set must have positive dimension");
    detail::require(data_.allFinite(), "embedding set contains NaN or Inf entries");
    if (ids_) {
      detail::require(ids_->size() == count(), "id list length does not match row count");
      std::unordered_set<std::string_view> seen;
      for (const auto& id : *ids_) {
        detail::require(seen.insert(id).second, "duplicate id '" + id + "'");
      }
    }
  }

  Modality modality_;
  RowMatrix data_;
  std::optional<std::vector<std::string>> ids_;
};

/// Index-aligned image/text sets; row j of each forms positive pair j.
struct PairedEmbeddings {
  EmbeddingSet images;
  EmbeddingSet texts;

  std::size_t count() const noexcept { return images.count(); }
  std::size_t dim() const noexcept { return images.dim(); }
};

// ---------------------------------------------------------------------------
// EMB1 binary container
//
//   [0,4)   magic "EMB1"
//   4       modality (0 image, 1 text, 2 other)
//   [5,9)   dim, u32 LE
//   [9,17)  count, u64 LE
//   17      flags (bit0: ids present)
//   ...     count*dim float32 LE, row-major
//   ...     if ids: count x (u16 LE byte length, UTF-8 bytes)
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kEmbMagic{'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbHeaderSize = 18;
inline constexpr std::uint8_t kEmbFlagIds = 0x01;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    u = static_cast<std::make_unsigned_t<T>>((u << 8) | p[i]);
  }
  return static_cast<T>(u);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

// Writes to a sibling temporary file and renames it over the target so that
// readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const void* data,
                              std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failure on '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move temporary file onto '" + path.string() + "'");
  }
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_emb(const EmbeddingSet& set) {
  std::vector<std::uint8_t> out;
  const auto count = set.count();
  const auto dim = set.dim();
  if (dim > UINT32_MAX) throw InvalidArgument("dimension exceeds EMB1 limit");
  out.reserve(kEmbHeaderSize + count * dim * 4);
  out.insert(out.end(), kEmbMagic.begin(), kEmbMagic.end());
  out.push_back(static_cast<std::uint8_t>(set.modality()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(count));
  out.push_back(set.has_ids() ? kEmbFlagIds : 0);

  const auto& data = set.data();
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      const auto f = static_cast<float>(data(r, c));
      if (!std::isfinite(f)) {
        throw InvalidArgument("value at row " + std::to_string(r) +
                              " is not representable as a finite float32");
      }
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  if (set.has_ids()) {
    for (const auto& id : *set.ids()) {
      if (id.size() > UINT16_MAX) throw InvalidArgument("id longer than 65535 bytes");
      detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
      out.insert(out.end(), id.begin(), id.end());
    }
  }
  return out;
}

inline EmbeddingSet decode_emb(const std::uint8_t* bytes, std::size_t size) {
  if (size < kEmbHeaderSize) throw FormatError("truncated header");
  if (!std::equal(kEmbMagic.begin(), kEmbMagic.end(), bytes)) throw FormatError("bad magic");
  const std::uint8_t mod = bytes[4];
  if (mod > 2) throw FormatError("bad modality byte " + std::to_string(mod));
  const auto dim = detail::get_le<std::uint32_t>(bytes + 5);
  const auto count = detail::get_le<std::uint64_t>(bytes + 9);
  const std::uint8_t flags = bytes[17];
  if ((flags & ~kEmbFlagIds) != 0) throw FormatError("unknown flag bits");
  if (dim == 0 || count == 0) throw FormatError("dim and count must be positive");

  const std::size_t avail = size - kEmbHeaderSize;
  if (count > avail / 4 / dim) throw FormatError("payload length mismatch");
  const std::size_t payload = static_cast<std::size_t>(count) * dim * 4;
  const bool has_ids = (flags & kEmbFlagIds) != 0;
  if (!has_ids && avail != payload) throw FormatError("payload length mismatch");

  RowMatrix data(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  const std::uint8_t* p = bytes + kEmbHeaderSize;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c, p += 4) {
      const float f = std::bit_cast<float>(detail::get_le<std::uint32_t>(p));
      if (std::isnan(f)) {
        throw FormatError("NaN in payload at row " + std::to_string(r) + ", column " +
                          std::to_string(c));
      }
      if (std::isinf(f)) {
        throw FormatError("Inf in payload at row " + std::to_string(r) + ", column " +
                          std::to_string(c));
      }
      data(r, c) = static_cast<double>(f);
    }
  }

  std::optional<std::vector<std::string>> ids;
  if (has_ids) {
    const std::uint8_t* end = bytes + size;
    ids.emplace();
    ids->reserve(count);
    for (std::uint64_t j = 0; j < count; ++j) {
      if (end - p < 2) throw FormatError("payload length mismatch (truncated id section)");
      const auto len = detail::get_le<std::uint16_t>(p);
      p += 2;
      if (end - p < len) throw FormatError("payload length mismatch (truncated id section)");
      ids->emplace_back(reinterpret_cast<const char*>(p), len);
      p += len;
    }
    if (p != end) throw FormatError("payload length mismatch (trailing bytes after ids)");
  }

  try {
    return EmbeddingSet(static_cast<Modality>(mod), std::move(data), std::move(ids));
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
}

inline EmbeddingSet load_emb(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_emb(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_emb(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_emb(set);  // validates before any byte hits disk
  detail::write_file_atomic(path, bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

struct CsvOptions {
  // First row is a header. When its first cell is "id" (case-insensitive) the
  // first column of every data row is taken as the instance id.
  bool header = false;
};

namespace detail {

// RFC 4180 field splitting: quoted fields, doubled quotes, CRLF tolerated.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_content || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        row_has_content = false;
        break;
      default:
        field.push_back(ch);
        row_has_content = true;
    }
  }
  if (in_quotes) throw FormatError("unterminated quoted field");
  if (row_has_content || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double parse_number(std::string_view cell, std::size_t line, std::size_t col) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw FormatError("non-numeric cell '" + std::string(cell) + "' at line " +
                      std::to_string(line) + ", column " + std::to_string(col));
  }
  return value;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace detail

inline EmbeddingSet parse_csv_embeddings(std::string_view text, Modality modality,
                                         CsvOptions opts = {}) {
  auto rows = detail::parse_csv(text);
  if (rows.empty()) throw FormatError("empty file");
  bool id_column = false;
  std::size_t first_data = 0;
  if (opts.header) {
    id_column = !rows[0].empty() && detail::iequals(rows[0][0], "id");
    first_data = 1;
  }
  if (rows.size() <= first_data) throw FormatError("empty file (no data rows)");

  const std::size_t width = rows[first_data].size();
  if (opts.header && rows[0].size() != width) throw FormatError("ragged rows: header width differs");
  const std::size_t dim = width - (id_column ? 1 : 0);
  if (dim == 0) throw FormatError("no numeric columns");

  RowMatrix data(static_cast<Eigen::Index>(rows.size() - first_data),
                 static_cast<Eigen::Index>(dim));
  std::optional<std::vector<std::string>> ids;
  if (id_column) ids.emplace();
  for (std::size_t r = first_data; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != width) {
      throw FormatError("ragged rows: line " + std::to_string(r + 1) + " has " +
                        std::to_string(row.size()) + " cells, expected " + std::to_string(width));
    }
    std::size_t c0 = 0;
    if (id_column) {
      ids->push_back(row[0]);
      c0 = 1;
    }
    for (std::size_t c = c0; c < width; ++c) {
      data(static_cast<Eigen::Index>(r - first_data), static_cast<Eigen::Index>(c - c0)) =
          detail::parse_number(row[c], r + 1, c + 1);
    }
  }
  try {
    return EmbeddingSet(modality, std::move(data), std::move(ids));
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
}

inline EmbeddingSet import_csv(const std::filesystem::path& path, Modality modality,
                               CsvOptions opts = {}) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  try {
    return parse_csv_embeddings(text, modality, opts);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pairing
// ---------------------------------------------------------------------------

/// Aligns an image set with a text set. When both carry ids the text rows are
/// reordered to follow the image ids; otherwise row order is taken as given.
inline PairedEmbeddings pair(const EmbeddingSet& images, const EmbeddingSet& texts) {
  detail::require(images.modality() == Modality::image, "first set must have modality image");
  detail::require(texts.modality() == Modality::text, "second set must have modality text");
  detail::require(images.count() == texts.count(),
                  "count mismatch: " + std::to_string(images.count()) + " images vs " +
                      std::to_string(texts.count()) + " texts");
  detail::require(images.dim() == texts.dim(),
                  "dim mismatch: " + std::to_string(images.dim()) + " vs " +
                      std::to_string(texts.dim()));

  if (!images.has_ids() || !texts.has_ids()) return PairedEmbeddings{images, texts};

  const auto& img_ids = *images.ids();
  const auto& txt_ids = *texts.ids();
  std::unordered_map<std::string_view, Eigen::Index> text_row;
  text_row.reserve(txt_ids.size());
  for (std::size_t j = 0; j < txt_ids.size(); ++j) {
    text_row.emplace(txt_ids[j], static_cast<Eigen::Index>(j));
  }
  RowMatrix reordered(texts.data().rows(), texts.data().cols());
  for (std::size_t j = 0; j < img_ids.size(); ++j) {
    auto it = text_row.find(img_ids[j]);
    if (it == text_row.end()) {
      throw InvalidArgument("id sets differ: image id '" + img_ids[j] + "' has no text");
    }
    reordered.row(static_cast<Eigen::Index>(j)) = texts.data().row(it->second);
  }
  return PairedEmbeddings{images, EmbeddingSet(Modality::text, std::move(reordered), img_ids)};
}

}  // namespace clipgeom
