#ifndef QTS_CORPUS_HPP
#define QTS_CORPUS_HPP

// Data model and on-disk formats for galleries of descriptor sets and the
// proxy tables computed over them.
//
// A gallery directory holds `manifest.tsv` (set_id, identity, relative_path;
// identity `-` when unknown) and one file per set, either CSV (one exemplar
// per row) or the binary `QTS1` layout: magic, u32 n, u32 d, then n*d
// little-endian float32 values in row-major order.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qts/detail/text.hpp"
#include "qts/error.hpp"

namespace qts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One descriptor set: n_r exemplars (rows) of dimension d (columns).
struct FaceSet {
  std::string id;
  Matrix exemplars;
  std::string source_path;

  Eigen::Index size() const { return exemplars.rows(); }
  Eigen::Index dim() const { return exemplars.cols(); }

  friend bool operator==(const FaceSet& a, const FaceSet& b) {
    return a.id == b.id && a.exemplars.rows() == b.exemplars.rows() &&
           a.exemplars.cols() == b.exemplars.cols() &&
           a.exemplars == b.exemplars;
  }
};

/// Throws DataError naming the set and the offending row when `s` is empty,
/// holds a non-finite entry or a zero-norm exemplar.
inline void validate_face_set(const FaceSet& s) {
  if (s.exemplars.rows() < 1 || s.exemplars.cols() < 1) {
    throw DataError("set '" + s.id + "': empty descriptor matrix");
  }
  for (Eigen::Index r = 0; r < s.exemplars.rows(); ++r) {
    const auto row = s.exemplars.row(r);
    if (!row.allFinite()) {
      throw DataError("set '" + s.id + "', row " + std::to_string(r + 1) +
                      ": non-finite value");
    }
    if (row.squaredNorm() <= 0.0) {
      throw DataError("set '" + s.id + "', row " + std::to_string(r + 1) +
                      ": zero-norm exemplar");
    }
  }
}

/// Ordered, immutable collection of validated sets sharing one dimension.
///
/// The gallery carries no identity information. Labels live beside it in
/// LabelledGallery and only the evaluation code reads them, so training and
/// retrieval cannot depend on them.
class Gallery {
 public:
  Gallery() = default;

  explicit Gallery(std::vector<FaceSet> sets) : sets_(std::move(sets)) {
    for (std::size_t i = 0; i < sets_.size(); ++i) {
      const auto& s = sets_[i];
      validate_face_set(s);
      if (i == 0) {
        dim_ = s.dim();
      } else if (s.dim() != dim_) {
        throw DataError("set '" + s.id + "': dimension " +
                        std::to_string(s.dim()) + " differs from gallery "
                        "dimension " + std::to_string(dim_));
      }
      if (!index_.emplace(s.id, i).second) {
        throw DataError("duplicate set id '" + s.id + "'");
      }
    }
  }

  std::size_t size() const { return sets_.size(); }
  bool empty() const { return sets_.empty(); }
  Eigen::Index dim() const { return dim_; }
  const FaceSet& operator[](std::size_t i) const { return sets_[i]; }
  const FaceSet& at(std::size_t i) const { return sets_.at(i); }
  std::span<const FaceSet> sets() const { return sets_; }
  auto begin() const { return sets_.begin(); }
  auto end() const { return sets_.end(); }

  std::optional<std::size_t> index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const Gallery& a, const Gallery& b) {
    return a.dim_ == b.dim_ && a.sets_ == b.sets_;
  }

 private:
  std::vector<FaceSet> sets_;
  Eigen::Index dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

/// set_id -> identity string.
using IdentityLabels = std::map<std::string, std::string>;

/// What a gallery directory holds: the unlabelled gallery, and identity
/// labels when the manifest provides them (evaluation only).
struct LabelledGallery {
  Gallery gallery;
  std::optional<IdentityLabels> labels;

  friend bool operator==(const LabelledGallery&,
                         const LabelledGallery&) = default;
};

inline void validate_labels(const Gallery& g, const IdentityLabels& labels) {
  for (const auto& s : g) {
    auto it = labels.find(s.id);
    if (it == labels.end() || it->second.empty() || it->second == "-") {
      throw DataError("label map does not cover set '" + s.id + "'");
    }
  }
  if (labels.size() != g.size()) {
    throw DataError("label map names sets absent from the gallery");
  }
}

// ---------------------------------------------------------------------------
// Set files

enum class SetFormat { csv, binary };

inline constexpr std::array<char, 4> kBinaryMagic = {'Q', 'T', 'S', '1'};

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline Matrix parse_binary_set(const std::string& bytes,
                               const std::string& where) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12) throw DataError(where + ": truncated binary header");
  const std::uint32_t n = read_u32_le(p + 4);
  const std::uint32_t d = read_u32_le(p + 8);
  const std::size_t want = 12 + std::size_t(n) * d * 4;
  if (bytes.size() != want) {
    throw DataError(where + ": expected " + std::to_string(want) +
                    " bytes for " + std::to_string(n) + "x" +
                    std::to_string(d) + ", found " +
                    std::to_string(bytes.size()));
  }
  Matrix m(n, d);
  for (std::uint32_t r = 0; r < n; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      std::uint32_t bits = read_u32_le(p + 12 + (std::size_t(r) * d + c) * 4);
      float f;
      static_assert(sizeof(float) == 4);
      std::memcpy(&f, &bits, 4);
      m(r, c) = f;
    }
  }
  return m;
}

inline Matrix parse_csv_set(const std::string& text, const std::string& where) {
  std::vector<double> values;
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split(t, ',');
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(fields.size());
    } else if (static_cast<Eigen::Index>(fields.size()) != cols) {
      throw DataError(where + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(cols) + " values, found " +
                      std::to_string(fields.size()));
    }
    for (auto f : fields) {
      auto v = parse_real(f);
      if (!v) {
        throw DataError(where + ":" + std::to_string(lineno) +
                        ": not a number: '" + std::string(trim(f)) + "'");
      }
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(where + ": no exemplars");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[r * cols + c];
  }
  return m;
}

}  // namespace detail

/// Reads a set file, detecting the binary layout by its magic bytes.
inline Matrix read_set_file(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 4 &&
      std::equal(kBinaryMagic.begin(), kBinaryMagic.end(), bytes.begin())) {
    return detail::parse_binary_set(bytes, path.string());
  }
  return detail::parse_csv_set(bytes, path.string());
}

inline void write_set_file(const std::filesystem::path& path, const Matrix& m,
                           SetFormat format = SetFormat::csv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  if (format == SetFormat::binary) {
    out.write(kBinaryMagic.data(), 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const float f = static_cast<float>(m(r, c));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::write_u32_le(out, bits);
      }
    }
  } else {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c) out << ',';
        out << detail::format_real(m(r, c));
      }
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Gallery directories

inline constexpr const char* kManifestName = "manifest.tsv";

inline LabelledGallery load_gallery(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  if (!std::filesystem::exists(manifest_path)) {
    throw DataError("missing manifest: '" + manifest_path.string() + "'");
  }
  const std::string text = detail::read_file(manifest_path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<FaceSet> sets;
  IdentityLabels labels;
  std::size_t labelled = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = detail::split(t, '\t');
    const std::string where =
        manifest_path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 3) {
      throw DataError(where + ": expected 3 tab-separated columns");
    }
    FaceSet s;
    s.id = std::string(detail::trim(fields[0]));
    const std::string identity(detail::trim(fields[1]));
    s.source_path = std::string(detail::trim(fields[2]));
    if (s.id.empty()) throw DataError(where + ": empty set id");
    s.exemplars = read_set_file(dir / s.source_path);
    validate_face_set(s);
    if (identity != "-" && !identity.empty()) {
      labels[s.id] = identity;
      ++labelled;
    }
    sets.push_back(std::move(s));
  }
  LabelledGallery out;
  out.gallery = Gallery(std::move(sets));
  if (labelled > 0) {
    if (labelled != out.gallery.size()) {
      throw DataError(manifest_path.string() +
                      ": identity column is only partially filled");
    }
    out.labels = std::move(labels);
  }
  return out;
}

/// Writes `manifest.tsv` plus one file per set. Sets keep their
/// `source_path` when it is relative; otherwise `<set_id>.csv|.bin` is used.
inline void save_gallery(const std::filesystem::path& dir,
                         const LabelledGallery& lg,
                         SetFormat format = SetFormat::csv) {
  std::filesystem::create_directories(dir);
  if (lg.labels) validate_labels(lg.gallery, *lg.labels);
  std::ofstream manifest(dir / kManifestName, std::ios::binary);
  if (!manifest) throw DataError("cannot write manifest in '" + dir.string() + "'");
  const char* ext = format == SetFormat::binary ? ".bin" : ".csv";
  for (const auto& s : lg.gallery) {
    std::filesystem::path rel = s.source_path;
    if (rel.empty() || rel.is_absolute()) rel = s.id + ext;
    rel.replace_extension(ext);
    std::filesystem::create_directories((dir / rel).parent_path());
    write_set_file(dir / rel, s.exemplars, format);
    manifest << s.id << '\t' << (lg.labels ? lg.labels->at(s.id) : "-") << '\t'
             << rel.generic_string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Proxy tables

struct ProxyEntry {
  std::string id;
  double score = 0.0;

  friend bool operator==(const ProxyEntry&, const ProxyEntry&) = default;
};

/// For each set, its k_p nearest other sets under a baseline similarity, in
/// descending score order (ties by ascending gallery index).
struct ProxyTable {
  int k_p = 0;
  std::map<std::string, std::vector<ProxyEntry>> entries;

  std::span<const ProxyEntry> proxies_of(const std::string& id) const {
    auto it = entries.find(id);
    if (it == entries.end()) return {};
    return it->second;
  }

  friend bool operator==(const ProxyTable&, const ProxyTable&) = default;
};

inline void validate_proxy_table(const ProxyTable& t) {
  if (t.k_p < 0) throw DataError("proxy table: negative k_p");
  for (const auto& [id, list] : t.entries) {
    if (static_cast<int>(list.size()) > t.k_p) {
      throw DataError("proxy table: set '" + id + "' lists more than k_p proxies");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i].id == id) {
        throw DataError("proxy table: set '" + id + "' lists itself as a proxy");
      }
      if (i > 0 && list[i].score > list[i - 1].score) {
        throw DataError("proxy table: proxies of '" + id +
                        "' not sorted by descending score");
      }
    }
  }
}

/// TSV rows `set_id \t rank \t proxy_id \t score`, preceded by a
/// `# k_p=<k>` comment so that empty tables round-trip.
inline void save_proxy_table(const std::filesystem::path& path,
                             const ProxyTable& t,
                             const Gallery* order = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "# k_p=" << t.k_p << '\n';
  auto emit = [&](const std::string& id, const std::vector<ProxyEntry>& list) {
    for (std::size_t r = 0; r < list.size(); ++r) {
      out << id << '\t' << (r + 1) << '\t' << list[r].id << '\t'
          << detail::format_real(list[r].score) << '\n';
    }
  };
  if (order) {
    for (const auto& s : *order) {
      auto it = t.entries.find(s.id);
      if (it != t.entries.end()) emit(it->first, it->second);
    }
  } else {
    for (const auto& [id, list] : t.entries) emit(id, list);
  }
}

inline ProxyTable load_proxy_table(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  ProxyTable t;
  std::optional<int> declared_k;
  int max_rank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto s = detail::trim(line);
    if (s.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (s.front() == '#') {
      constexpr std::string_view key = "# k_p=";
      if (s.substr(0, key.size()) == key) {
        auto k = detail::parse_int(s.substr(key.size()));
        if (!k) throw DataError(where + ": malformed k_p header");
        declared_k = static_cast<int>(*k);
      }
      continue;
    }
    auto f = detail::split(s, '\t');
    if (f.size() != 4) throw DataError(where + ": expected 4 columns");
    auto rank = detail::parse_int(f[1]);
    auto score = detail::parse_real(f[3]);
    if (!rank || !score || *rank < 1) {
      throw DataError(where + ": malformed rank or score");
    }
    auto& list = t.entries[std::string(detail::trim(f[0]))];
    if (static_cast<long long>(list.size()) + 1 != *rank) {
      throw DataError(where + ": ranks must be consecutive from 1");
    }
    list.push_back({std::string(detail::trim(f[2])), *score});
    max_rank = std::max(max_rank, static_cast<int>(*rank));
  }
  t.k_p = declared_k.value_or(max_rank);
  validate_proxy_table(t);
  return t;
}

}  // namespace qts

#endif  // QTS_CORPUS_HPP
