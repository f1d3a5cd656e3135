#pragma once

// Data model and ingestion: image metadata, embedding matrices, manifest
// loading with integrity checks, near-duplicate filtering.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "wildaudit/common.hpp"

namespace wildaudit::corpus {

enum class Split { train, test };
enum class Flank { left, right, frontal, unknown };
enum class Variant {
  full_rgb,
  foreground,
  silhouette,
  bg_silhouette,
  inpainted,
  mirror
};

inline const char* to_string(Split s) {
  return s == Split::train ? "train" : "test";
}

inline const char* to_string(Flank f) {
  switch (f) {
    case Flank::left: return "left";
    case Flank::right: return "right";
    case Flank::frontal: return "frontal";
    default: return "unknown";
  }
}

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full_rgb: return "full_rgb";
    case Variant::foreground: return "foreground";
    case Variant::silhouette: return "silhouette";
    case Variant::bg_silhouette: return "bg_silhouette";
    case Variant::inpainted: return "inpainted";
    default: return "mirror";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DataError("unknown split: '" + s + "'");
}

inline Flank parse_flank(const std::string& s) {
  if (s == "left") return Flank::left;
  if (s == "right") return Flank::right;
  if (s == "frontal") return Flank::frontal;
  if (s == "unknown" || s.empty()) return Flank::unknown;
  throw DataError("unknown flank: '" + s + "'");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full_rgb") return Variant::full_rgb;
  if (s == "foreground") return Variant::foreground;
  if (s == "silhouette") return Variant::silhouette;
  if (s == "bg_silhouette") return Variant::bg_silhouette;
  if (s == "inpainted") return Variant::inpainted;
  if (s == "mirror") return Variant::mirror;
  throw DataError("unknown variant: '" + s + "'");
}

/// Keyword rules for free-text view descriptions. "left flank" maps to left,
/// "right flank" to right; mentions of both or neither map to unknown.
inline Flank parse_flank_description(const std::string& text) {
  const std::string t = to_lower(text);
  const bool left = t.find("left flank") != std::string::npos;
  const bool right = t.find("right flank") != std::string::npos;
  if (left && !right) return Flank::left;
  if (right && !left) return Flank::right;
  return Flank::unknown;
}

struct ImageRecord {
  std::string image_id;
  std::string identity;
  Split split = Split::train;
  Flank flank = Flank::unknown;
  std::optional<double> solidity;
  std::set<Variant> variants;  // derived: variants with embedding coverage
};

struct EmbeddingMatrix {
  std::string model_id;
  Variant variant = Variant::full_rgb;
  int dim = 0;
  std::vector<std::string> rows;  // image_id per data row
  Eigen::MatrixXf data;           // N x dim

  int count() const { return static_cast<int>(rows.size()); }
};

using EmbeddingKey = std::pair<std::string, Variant>;

struct Corpus {
  std::vector<ImageRecord> records;
  std::map<EmbeddingKey, EmbeddingMatrix> embeddings;

  std::unordered_map<std::string, size_t> index;  // image_id -> records slot

  void rebuild_index() {
    index.clear();
    for (size_t i = 0; i < records.size(); ++i) index[records[i].image_id] = i;
  }

  const ImageRecord& record(const std::string& image_id) const {
    auto it = index.find(image_id);
    if (it == index.end())
      throw DataError("unknown image_id: '" + image_id + "'");
    return records[it->second];
  }

  bool has_record(const std::string& image_id) const {
    return index.count(image_id) > 0;
  }

  const std::string& identity_of(const std::string& image_id) const {
    return record(image_id).identity;
  }

  const EmbeddingMatrix& embedding(const std::string& model_id,
                                   Variant variant) const {
    auto it = embeddings.find({model_id, variant});
    if (it == embeddings.end()) {
      throw DataError("no embedding for (" + model_id + ", " +
                      to_string(variant) + ")");
    }
    return it->second;
  }

  bool has_embedding(const std::string& model_id, Variant variant) const {
    return embeddings.count({model_id, variant}) > 0;
  }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> out;
    for (const auto& [key, m] : embeddings) {
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Metadata parsing
// ---------------------------------------------------------------------------

inline ImageRecord record_from_fields(const std::string& image_id,
                                      const std::string& identity,
                                      const std::string& split,
                                      const std::string& flank,
                                      const std::optional<double>& solidity) {
  if (image_id.empty()) throw DataError("empty image_id in metadata");
  if (identity.empty())
    throw DataError("empty identity for image_id '" + image_id + "'");
  ImageRecord rec;
  rec.image_id = image_id;
  rec.identity = identity;
  rec.split = parse_split(split);
  rec.flank = parse_flank(flank);
  if (solidity) {
    if (*solidity < 0.0 || *solidity > 1.0) {
      throw DataError("solidity out of [0,1] for image_id '" + image_id +
                      "': " + std::to_string(*solidity));
    }
    rec.solidity = solidity;
  }
  return rec;
}

/// CSV alternative to the manifest's inline image list. Expected header:
/// image_id,identity,split,flank,solidity (solidity may be empty).
inline std::vector<ImageRecord> load_metadata_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metadata CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty metadata CSV: " + path);
  if (trim(line) != "image_id,identity,split,flank,solidity") {
    throw DataError("metadata CSV header mismatch in " + path);
  }
  std::vector<ImageRecord> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5)
      throw DataError("metadata CSV row with " + std::to_string(f.size()) +
                      " fields in " + path);
    std::optional<double> sol;
    if (!trim(f[4]).empty()) sol = parse_double(trim(f[4]), path);
    out.push_back(record_from_fields(trim(f[0]), trim(f[1]), trim(f[2]),
                                     trim(f[3]), sol));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest loading
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXf read_blob_f32(const std::string& path, int count,
                                     int dim) {
  static_assert(std::endian::native == std::endian::little,
                "embedding blobs are little-endian float32");
  const std::string bytes = read_file_bytes(path);
  const size_t expected = static_cast<size_t>(count) * dim * sizeof(float);
  if (bytes.size() != expected) {
    throw DataError("embedding blob size mismatch for " + path + ": got " +
                    std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected));
  }
  Eigen::MatrixXf m(count, dim);
  // Blob is row-major; Eigen default storage is column-major, so copy by row.
  const float* src = reinterpret_cast<const float*>(bytes.data());
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < dim; ++j) m(i, j) = src[static_cast<size_t>(i) * dim + j];
  }
  return m;
}

inline void write_blob_f32(const std::string& path, const Eigen::MatrixXf& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write blob: " + path);
  std::vector<float> row(static_cast<size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      row[static_cast<size_t>(j)] = m(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

}  // namespace detail

/// Loads and validates a corpus from a JSON manifest.
///
/// Manifest schema:
///   {
///     "images": [{"image_id", "identity", "split", "flank", "solidity"?}],
///     or "images_csv": "relative/path.csv",
///     "embeddings": [{"model_id", "variant", "dim", "count", "file",
///                     "sha256", "ids"?}]
///   }
/// Embedding blobs are headerless little-endian float32, row-major count x dim.
/// When "ids" is absent the rows align with the manifest's image order and
/// count must equal the number of images.
inline Corpus load_corpus(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  if (!fs::exists(manifest_path))
    throw DataError("missing file: " + manifest_path);

  nlohmann::json doc;
  try {
    std::ifstream in(manifest_path);
    in >> doc;
  } catch (const std::exception& e) {
    throw DataError("manifest parse error in " + manifest_path + ": " +
                    e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();

  Corpus corpus;
  if (doc.contains("images_csv")) {
    corpus.records =
        load_metadata_csv((base / doc["images_csv"].get<std::string>()).string());
  } else if (doc.contains("images")) {
    for (const auto& img : doc["images"]) {
      std::optional<double> sol;
      if (img.contains("solidity") && !img["solidity"].is_null())
        sol = img["solidity"].get<double>();
      corpus.records.push_back(record_from_fields(
          img.at("image_id").get<std::string>(),
          img.at("identity").get<std::string>(),
          img.at("split").get<std::string>(),
          img.contains("flank") ? img["flank"].get<std::string>() : "unknown",
          sol));
    }
  } else {
    throw DataError("manifest has neither 'images' nor 'images_csv': " +
                    manifest_path);
  }

  corpus.rebuild_index();
  if (corpus.index.size() != corpus.records.size()) {
    for (size_t i = 0; i < corpus.records.size(); ++i) {
      for (size_t j = i + 1; j < corpus.records.size(); ++j) {
        if (corpus.records[i].image_id == corpus.records[j].image_id) {
          throw DataError("duplicate image_id: '" + corpus.records[i].image_id +
                          "'");
        }
      }
    }
  }

  for (const auto& emb : doc.value("embeddings", nlohmann::json::array())) {
    EmbeddingMatrix m;
    m.model_id = emb.at("model_id").get<std::string>();
    m.variant = parse_variant(emb.at("variant").get<std::string>());
    m.dim = emb.at("dim").get<int>();
    const int count = emb.at("count").get<int>();
    if (m.dim <= 0 || count < 0)
      throw DataError("bad dim/count for (" + m.model_id + ", " +
                      to_string(m.variant) + ")");
    const std::string key_str =
        "(" + m.model_id + ", " + std::string(to_string(m.variant)) + ")";

    const std::string file = (base / emb.at("file").get<std::string>()).string();
    if (!fs::exists(file))
      throw DataError("missing file: " + file + " for " + key_str);
    if (emb.contains("sha256")) {
      const std::string want = to_lower(emb["sha256"].get<std::string>());
      const std::string got = sha256_file(file);
      if (want != got) {
        throw DataError("checksum mismatch for " + key_str + ": manifest " +
                        want + ", file " + got);
      }
    }

    if (emb.contains("ids")) {
      m.rows = emb["ids"].get<std::vector<std::string>>();
      if (static_cast<int>(m.rows.size()) != count)
        throw DataError("ids/count mismatch for " + key_str);
    } else {
      if (count != static_cast<int>(corpus.records.size()))
        throw DataError("count without ids must cover all images for " +
                        key_str);
      m.rows.reserve(corpus.records.size());
      for (const auto& r : corpus.records) m.rows.push_back(r.image_id);
    }

    m.data = detail::read_blob_f32(file, count, m.dim);

    for (int i = 0; i < count; ++i) {
      if (!corpus.has_record(m.rows[static_cast<size_t>(i)])) {
        throw DataError("dangling reference in " + key_str + ": image_id '" +
                        m.rows[static_cast<size_t>(i)] + "' not in metadata");
      }
      for (int j = 0; j < m.dim; ++j) {
        if (!std::isfinite(m.data(i, j))) {
          throw DataError("NaN in embeddings " + key_str + " at row " +
                          std::to_string(i) + " (image_id '" +
                          m.rows[static_cast<size_t>(i)] + "')");
        }
      }
    }

    const EmbeddingKey key{m.model_id, m.variant};
    if (corpus.embeddings.count(key))
      throw DataError("duplicate embedding entry for " + key_str);
    for (const auto& id : m.rows) {
      corpus.records[corpus.index.at(id)].variants.insert(m.variant);
    }
    corpus.embeddings.emplace(key, std::move(m));
  }

  return corpus;
}

/// Writes a corpus back to disk (manifest + blobs). Blob bytes round-trip
/// bit-identically through load_corpus.
inline void save_corpus(const Corpus& corpus, const std::string& dir,
                        const std::string& manifest_name = "manifest.json") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  for (const auto& r : corpus.records) {
    nlohmann::json img{{"image_id", r.image_id},
                       {"identity", r.identity},
                       {"split", to_string(r.split)},
                       {"flank", to_string(r.flank)}};
    if (r.solidity) img["solidity"] = *r.solidity;
    doc["images"].push_back(img);
  }
  doc["embeddings"] = nlohmann::json::array();
  std::set<std::string> used_names;
  for (const auto& [key, m] : corpus.embeddings) {
    std::string stem = key.first;
    for (char& c : stem)
      if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    std::string blob_name = stem + "_" + to_string(key.second) + ".f32";
    for (int k = 2; used_names.count(blob_name); ++k)
      blob_name = stem + "_" + to_string(key.second) + "_" +
                  std::to_string(k) + ".f32";
    used_names.insert(blob_name);
    const std::string blob_path = (fs::path(dir) / blob_name).string();
    detail::write_blob_f32(blob_path, m.data);
    doc["embeddings"].push_back(nlohmann::json{
        {"model_id", m.model_id},
        {"variant", to_string(m.variant)},
        {"dim", m.dim},
        {"count", m.count()},
        {"file", blob_name},
        {"sha256", sha256_file(blob_path)},
        {"ids", m.rows}});
  }
  std::ofstream out(fs::path(dir) / manifest_name);
  out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Embedding operations
// ---------------------------------------------------------------------------

/// Row-wise L2 normalization. A zero row is reported with its image_id.
inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
  EmbeddingMatrix out = m;
  for (int i = 0; i < out.count(); ++i) {
    const float norm = out.data.row(i).norm();
    if (norm == 0.0f) {
      throw DataError("zero embedding row for image_id '" +
                      m.rows[static_cast<size_t>(i)] + "'");
    }
    out.data.row(i) /= norm;
  }
  return out;
}

inline bool is_row_normalized(const Eigen::MatrixXf& data, float tol = 1e-5f) {
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    if (std::abs(data.row(i).norm() - 1.0f) > tol) return false;
  }
  return true;
}

struct NearDuplicate {
  std::string a, b;  // a < b lexicographically
  double similarity;
};

/// All unordered row pairs with cosine similarity strictly above `threshold`,
/// sorted by descending similarity (pair ids as tie-break).
inline std::vector<NearDuplicate> find_near_duplicates(
    const EmbeddingMatrix& m, double threshold) {
  if (threshold <= 0.0 || threshold > 1.0)
    throw std::invalid_argument("near-duplicate threshold must be in (0,1]");
  if (!is_row_normalized(m.data))
    throw std::invalid_argument("find_near_duplicates expects normalized rows");
  std::vector<NearDuplicate> out;
  const int n = m.count();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double sim = static_cast<double>(m.data.row(i).dot(m.data.row(j)));
      if (sim > threshold) {
        const auto& a = m.rows[static_cast<size_t>(i)];
        const auto& b = m.rows[static_cast<size_t>(j)];
        out.push_back(a < b ? NearDuplicate{a, b, sim}
                            : NearDuplicate{b, a, sim});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const NearDuplicate& x,
                                       const NearDuplicate& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  return out;
}

}  // namespace wildaudit::corpus
