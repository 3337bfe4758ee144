#pragma once

// Embedding corpora, query triplets and manifests.
//
// EMB1 layout (all integers little-endian):
//   "EMB1" | u32 dim | u64 count | count x (u32 byte length, UTF-8 id) |
//   count*dim IEEE-754 binary32, row-major
//
// Values are widened to 64-bit on load; writing narrows them back, so a
// matrix that came from a file roundtrips bit-exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dqe/bytes.hpp"
#include "dqe/error.hpp"
#include "dqe/sha256.hpp"
#include "dqe/vec.hpp"

namespace dqe {

inline constexpr std::string_view kCorpusMagic = "EMB1";

class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    /// Validates and takes ownership. `data` is count x dim, row-major.
    EmbeddingMatrix(std::size_t dim, std::vector<std::string> ids, Vec data)
        : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
        if (dim_ == 0) throw Error(Errc::BadFormat, "dim must be >= 1");
        if (ids_.empty()) throw Error(Errc::TruncatedFile, "count must be >= 1");
        if (data_.size() != ids_.size() * dim_)
            throw Error(Errc::DimMismatch, "data length does not match count x dim");
        index_.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (!index_.emplace(ids_[i], i).second) throw Error(Errc::DuplicateId, "duplicate item id", ids_[i]);
        }
        for (std::size_t r = 0; r < ids_.size(); ++r) {
            for (std::size_t c = 0; c < dim_; ++c) {
                if (!std::isfinite(data_[r * dim_ + c]))
                    throw Error(Errc::NonFiniteEntry, "non-finite entry",
                                "row=" + std::to_string(r) + " col=" + std::to_string(c));
            }
        }
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return ids_.size(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const Vec& data() const noexcept { return data_; }
    const std::string& id(std::size_t row) const { return ids_.at(row); }

    CSpan row(std::size_t r) const { return CSpan(data_).subspan(r * dim_, dim_); }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t lookup(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw Error(Errc::UnknownId, "item id not in corpus", id);
        return it->second;
    }

    friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
        return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    Vec data_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::uint8_t> encode_corpus(const EmbeddingMatrix& m) {
    ByteWriter w;
    w.raw(kCorpusMagic);
    w.u32(static_cast<std::uint32_t>(m.dim()));
    w.u64(static_cast<std::uint64_t>(m.count()));
    for (const auto& id : m.ids()) w.str(id);
    for (double x : m.data()) w.f32(static_cast<float>(x));
    return std::move(w).bytes();
}

inline EmbeddingMatrix decode_corpus(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.remaining() < kCorpusMagic.size() || r.raw(kCorpusMagic.size()) != kCorpusMagic)
        throw Error(Errc::BadMagic, "corpus file does not start with EMB1", "offset=0");
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();
    if (count == 0) throw Error(Errc::TruncatedFile, "declared count is zero", "offset=8");
    if (dim == 0) throw Error(Errc::BadFormat, "declared dim is zero", "offset=4");

    std::vector<std::string> ids;
    // A hostile count cannot allocate more than the file could describe.
    ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, r.remaining() / 4)));
    std::unordered_map<std::string, std::size_t> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto at = r.offset();
        std::string id = r.str();
        if (id.empty()) throw Error(Errc::BadFormat, "empty item id", "offset=" + std::to_string(at));
        if (!seen.emplace(id, i).second)
            throw Error(Errc::DuplicateId, "duplicate item id", id + " offset=" + std::to_string(at));
        ids.push_back(std::move(id));
    }

    const std::uint64_t values = count * dim;
    if (values / dim != count || r.remaining() / 4 < values)
        throw Error(Errc::TruncatedFile, "embedding block shorter than count x dim",
                    "offset=" + std::to_string(r.offset()));
    Vec data(static_cast<std::size_t>(values));
    for (std::uint64_t k = 0; k < values; ++k) {
        const auto at = r.offset();
        const float f = r.f32();
        if (!std::isfinite(f))
            throw Error(Errc::NonFiniteEntry, "non-finite entry",
                        "row=" + std::to_string(k / dim) + " col=" + std::to_string(k % dim) +
                            " offset=" + std::to_string(at));
        data[k] = f;
    }
    if (r.remaining() != 0)
        throw Error(Errc::BadFormat, "trailing bytes after embedding block", "offset=" + std::to_string(r.offset()));
    return EmbeddingMatrix(dim, std::move(ids), std::move(data));
}

inline EmbeddingMatrix load_corpus(const std::string& path) { return decode_corpus(read_file_bytes(path)); }

inline void write_corpus(const std::string& path, const EmbeddingMatrix& m) { write_file_bytes(path, encode_corpus(m)); }

inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
    Vec data = m.data();
    const std::size_t d = m.dim();
    for (std::size_t r = 0; r < m.count(); ++r) {
        MSpan row(data.data() + r * d, d);
        const double n = norm(row);
        if (n == 0.0) throw Error(Errc::ZeroRow, "cannot normalize all-zero row", "row=" + std::to_string(r));
        for (auto& x : row) x /= n;
    }
    return EmbeddingMatrix(d, m.ids(), std::move(data));
}

// ---------------------------------------------------------------------------
// Triplets

enum class Attribute : std::size_t { color = 0, shape = 1 };
inline constexpr std::array<Attribute, 2> kAttributes{Attribute::color, Attribute::shape};

constexpr std::string_view attribute_name(Attribute a) noexcept { return a == Attribute::color ? "color" : "shape"; }

struct QueryTriplet {
    std::string ref_id;
    Vec text_emb;
    /// Indexed by Attribute; an absent entry contributes nothing.
    std::array<std::optional<Vec>, 2> attr_embs;
    std::string target_id;
    std::optional<std::vector<std::string>> subset_ids;

    // Resolved against the corpus by validate_triplet.
    std::size_t ref_row = 0;
    std::size_t target_row = 0;

    const std::optional<Vec>& attr(Attribute a) const { return attr_embs[static_cast<std::size_t>(a)]; }
    std::optional<Vec>& attr(Attribute a) { return attr_embs[static_cast<std::size_t>(a)]; }

    friend bool operator==(const QueryTriplet&, const QueryTriplet&) = default;
};

inline void validate_triplet(QueryTriplet& t, const EmbeddingMatrix& corpus) {
    t.ref_row = corpus.lookup(t.ref_id);
    t.target_row = corpus.lookup(t.target_id);
    if (t.text_emb.size() != corpus.dim())
        throw Error(Errc::DimMismatch, "text_emb length differs from corpus dim", t.ref_id);
    if (!all_finite(t.text_emb)) throw Error(Errc::NonFiniteEntry, "non-finite text_emb", t.ref_id);
    for (auto a : kAttributes) {
        if (const auto& v = t.attr(a)) {
            if (v->size() != corpus.dim())
                throw Error(Errc::DimMismatch, "attr_embs length differs from corpus dim",
                            std::string(attribute_name(a)));
            if (!all_finite(*v)) throw Error(Errc::NonFiniteEntry, "non-finite attr_embs", t.ref_id);
        }
    }
    if (t.subset_ids) {
        bool has_target = false;
        for (const auto& id : *t.subset_ids) {
            corpus.lookup(id);
            has_target = has_target || id == t.target_id;
        }
        if (!has_target) throw Error(Errc::TargetNotInSubset, "subset_ids does not contain target", t.target_id);
        if (t.subset_ids->size() < 2) throw Error(Errc::TargetNotInSubset, "subset_ids needs at least 2 items", t.target_id);
    }
}

inline nlohmann::json triplet_to_json(const QueryTriplet& t) {
    nlohmann::json j;
    j["ref_id"] = t.ref_id;
    j["text_emb"] = t.text_emb;
    nlohmann::json attrs = nlohmann::json::object();
    for (auto a : kAttributes)
        if (const auto& v = t.attr(a)) attrs[std::string(attribute_name(a))] = *v;
    j["attr_embs"] = std::move(attrs);
    j["target_id"] = t.target_id;
    if (t.subset_ids) j["subset_ids"] = *t.subset_ids;
    return j;
}

inline QueryTriplet triplet_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::BadFormat, "triplet line is not a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "ref_id" && key != "text_emb" && key != "attr_embs" && key != "target_id" && key != "subset_ids")
            throw Error(Errc::BadFormat, "unknown triplet key", key);
    }
    QueryTriplet t;
    try {
        t.ref_id = j.at("ref_id").get<std::string>();
        t.text_emb = j.at("text_emb").get<Vec>();
        t.target_id = j.at("target_id").get<std::string>();
        if (j.contains("attr_embs")) {
            for (const auto& [key, value] : j.at("attr_embs").items()) {
                if (key == "color")
                    t.attr(Attribute::color) = value.get<Vec>();
                else if (key == "shape")
                    t.attr(Attribute::shape) = value.get<Vec>();
                else
                    throw Error(Errc::BadFormat, "attr_embs key must be color or shape", key);
            }
        }
        if (j.contains("subset_ids")) t.subset_ids = j.at("subset_ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::BadFormat, e.what());
    }
    return t;
}

inline std::vector<QueryTriplet> parse_triplets(std::istream& in, const EmbeddingMatrix& corpus) {
    std::vector<QueryTriplet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::BadFormat, e.what(), "line=" + std::to_string(lineno));
        }
        auto t = triplet_from_json(j);
        validate_triplet(t, corpus);
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<QueryTriplet> load_triplets(const std::string& path, const EmbeddingMatrix& corpus) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open triplets file", path);
    return parse_triplets(in, corpus);
}

inline std::string encode_triplets(const std::vector<QueryTriplet>& ts) {
    std::string out;
    for (const auto& t : ts) {
        out += triplet_to_json(t).dump();
        out += '\n';
    }
    return out;
}

inline void write_triplets(const std::string& path, const std::vector<QueryTriplet>& ts) {
    const auto text = encode_triplets(ts);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { train, val, test };

inline std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(Errc::BadFormat, "split must be train, val or test", s);
}

/// Paths are stored relative to the manifest's directory.
struct Manifest {
    std::string corpus_path;
    std::string triplets_path;
    std::size_t dim = 0;
    Split split = Split::train;
    std::string corpus_sha256;
    std::string triplets_sha256;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    return {{"corpus_path", m.corpus_path},
            {"triplets_path", m.triplets_path},
            {"dim", m.dim},
            {"split", split_name(m.split)},
            {"checksums", {{"corpus", m.corpus_sha256}, {"triplets", m.triplets_sha256}}}};
}

/// Computes checksums for the referenced files and writes the manifest.
inline Manifest write_manifest(const std::string& manifest_path, const std::string& corpus_rel,
                               const std::string& triplets_rel, std::size_t dim, Split split) {
    const auto base = std::filesystem::path(manifest_path).parent_path();
    Manifest m{corpus_rel, triplets_rel, dim, split, sha256_file((base / corpus_rel).string()),
               sha256_file((base / triplets_rel).string())};
    const auto text = manifest_to_json(m).dump(2) + "\n";
    write_file_bytes(manifest_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return m;
}

inline Manifest read_manifest(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
        for (const auto& [key, _] : j.items()) {
            if (key != "corpus_path" && key != "triplets_path" && key != "dim" && key != "split" && key != "checksums")
                throw Error(Errc::BadFormat, "unknown manifest key", key);
        }
        Manifest m;
        m.corpus_path = j.at("corpus_path").get<std::string>();
        m.triplets_path = j.at("triplets_path").get<std::string>();
        m.dim = j.at("dim").get<std::size_t>();
        m.split = parse_split(j.at("split").get<std::string>());
        const auto& sums = j.at("checksums");
        if (sums.size() != 2) throw Error(Errc::BadFormat, "checksums must name corpus and triplets");
        m.corpus_sha256 = sums.at("corpus").get<std::string>();
        m.triplets_sha256 = sums.at("triplets").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::BadFormat, e.what(), path);
    }
}

struct Dataset {
    Manifest manifest;
    EmbeddingMatrix corpus;
    std::vector<QueryTriplet> triplets;
};

/// Verifies both checksums and the declared dim, then loads. With
/// `normalize`, corpus rows are scaled to unit length before triplets are
/// resolved.
inline Dataset load_dataset(const std::string& manifest_path, bool normalize = true) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    const auto corpus_file = (base / ds.manifest.corpus_path).string();
    const auto triplets_file = (base / ds.manifest.triplets_path).string();

    const auto corpus_bytes = read_file_bytes(corpus_file);
    if (sha256_hex(corpus_bytes) != ds.manifest.corpus_sha256)
        throw Error(Errc::ChecksumMismatch, "corpus checksum does not match manifest", corpus_file);
    const auto triplet_bytes = read_file_bytes(triplets_file);
    if (sha256_hex(triplet_bytes) != ds.manifest.triplets_sha256)
        throw Error(Errc::ChecksumMismatch, "triplets checksum does not match manifest", triplets_file);

    ds.corpus = decode_corpus(corpus_bytes);
    if (ds.corpus.dim() != ds.manifest.dim)
        throw Error(Errc::DimMismatch, "manifest dim differs from corpus dim", manifest_path);
    if (normalize) ds.corpus = l2_normalize(ds.corpus);
    std::istringstream in(std::string(triplet_bytes.begin(), triplet_bytes.end()));
    ds.triplets = parse_triplets(in, ds.corpus);
    return ds;
}

}  // namespace dqe
