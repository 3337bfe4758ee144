#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "dqe/corpus.hpp"
#include "support.hpp"

using namespace dqe;
using dqe::testing::random_corpus;
using dqe::testing::temp_dir;

namespace {

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected dqe::Error";
    return Errc::Io;
}

std::string where_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.where();
    }
    return {};
}

// Builds an EMB1 file byte by byte, independent of encode_corpus.
std::vector<std::uint8_t> hand_file(std::uint32_t dim, const std::vector<std::string>& ids, const std::vector<float>& v) {
    std::vector<std::uint8_t> out{'E', 'M', 'B', '1'};
    auto put = [&](std::uint64_t x, int n) {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
    };
    put(dim, 4);
    put(ids.size(), 8);
    for (const auto& id : ids) {
        put(id.size(), 4);
        out.insert(out.end(), id.begin(), id.end());
    }
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put(bits, 4);
    }
    return out;
}

}  // namespace

TEST(Corpus, DecodesHandBuiltFile) {
    const auto bytes = hand_file(2, {"a", "bb"}, {1.0f, 2.0f, -3.5f, 0.25f});
    const auto m = decode_corpus(bytes);
    EXPECT_EQ(m.dim(), 2u);
    EXPECT_EQ(m.count(), 2u);
    EXPECT_EQ(m.id(1), "bb");
    EXPECT_EQ(m.row(1)[0], -3.5);
    EXPECT_EQ(encode_corpus(m), bytes);
}

TEST(Corpus, NanEntryReportsRowAndColumn) {
    std::vector<float> v(12, 1.0f);
    v[2 * 3 + 1] = std::nanf("");
    const auto bytes = hand_file(3, {"a", "b", "c", "d"}, v);
    EXPECT_EQ(code_of([&] { decode_corpus(bytes); }), Errc::NonFiniteEntry);
    EXPECT_NE(where_of([&] { decode_corpus(bytes); }).find("row=2 col=1"), std::string::npos);
}

TEST(Corpus, ZeroCountIsTruncated) {
    EXPECT_EQ(code_of([] { decode_corpus(hand_file(4, {}, {})); }), Errc::TruncatedFile);
}

TEST(Corpus, FormatErrors) {
    auto bytes = hand_file(2, {"a"}, {1.0f, 2.0f});
    auto bad_magic = bytes;
    bad_magic[3] = '2';
    EXPECT_EQ(code_of([&] { decode_corpus(bad_magic); }), Errc::BadMagic);
    EXPECT_EQ(code_of([&] { decode_corpus(std::span(bytes).first(bytes.size() - 1)); }), Errc::TruncatedFile);
    EXPECT_EQ(code_of([&] { decode_corpus(std::span(bytes).first(10)); }), Errc::TruncatedFile);
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_EQ(code_of([&] { decode_corpus(trailing); }), Errc::BadFormat);
    EXPECT_EQ(code_of([&] { decode_corpus(hand_file(1, {"x", "x"}, {1.0f, 2.0f})); }), Errc::DuplicateId);
    EXPECT_EQ(code_of([&] { decode_corpus(hand_file(0, {"x"}, {})); }), Errc::BadFormat);
}

TEST(Corpus, RoundtripIsBitExact) {
    Rng rng(11);
    // float-representable so that 32-bit storage loses nothing
    auto m = random_corpus(rng, 30, 7, false);
    Vec data = m.data();
    for (auto& x : data) x = static_cast<float>(x);
    m = EmbeddingMatrix(7, m.ids(), data);
    const auto dir = temp_dir("corpus_rt");
    write_corpus((dir / "c.emb").string(), m);
    EXPECT_EQ(load_corpus((dir / "c.emb").string()), m);
}

TEST(Corpus, IdLookupIsBijective) {
    Rng rng(3);
    const auto m = random_corpus(rng, 57, 3);
    for (std::size_t i = 0; i < m.count(); ++i) EXPECT_EQ(m.lookup(m.id(i)), i);
    EXPECT_EQ(code_of([&] { m.lookup("missing"); }), Errc::UnknownId);
}

TEST(Corpus, NormalizeRows) {
    const EmbeddingMatrix m(2, {"a", "b"}, {3.0, 4.0, 0.6, 0.8});
    const auto n = l2_normalize(m);
    EXPECT_NEAR(n.row(0)[0], 0.6, 1e-15);
    EXPECT_NEAR(n.row(0)[1], 0.8, 1e-15);
    EXPECT_NEAR(n.row(1)[0], 0.6, 1e-7);
    EXPECT_NEAR(n.row(1)[1], 0.8, 1e-7);

    Rng rng(5);
    const auto r = l2_normalize(random_corpus(rng, 100, 16, false));
    for (std::size_t i = 0; i < r.count(); ++i) {
        double s = 0;
        for (double x : r.row(i)) s += x * x;
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
    }
    const EmbeddingMatrix z(2, {"a", "b"}, {1.0, 0.0, 0.0, 0.0});
    EXPECT_EQ(code_of([&] { l2_normalize(z); }), Errc::ZeroRow);
    EXPECT_EQ(where_of([&] { l2_normalize(z); }), "row=1");
}

TEST(Triplets, ValidationErrors) {
    const EmbeddingMatrix c(2, {"a", "b", "c"}, {1, 0, 0, 1, 1, 1});
    auto line = [](const std::string& s) {
        std::istringstream in(s);
        return in;
    };
    auto parse = [&](const std::string& s) {
        auto in = line(s);
        return parse_triplets(in, c);
    };
    EXPECT_EQ(parse(R"({"ref_id":"a","text_emb":[0,1],"target_id":"b"})").size(), 1u);
    EXPECT_EQ(code_of([&] { parse(R"({"ref_id":"a","text_emb":[0,1],"target_id":"zz"})"); }), Errc::UnknownId);
    EXPECT_EQ(code_of([&] { parse(R"({"ref_id":"a","text_emb":[0,1,2],"target_id":"b"})"); }), Errc::DimMismatch);
    EXPECT_EQ(code_of([&] { parse(R"({"ref_id":"a","text_emb":[0,1],"target_id":"b","subset_ids":["a","c"]})"); }),
              Errc::TargetNotInSubset);
    EXPECT_EQ(code_of([&] { parse(R"({"ref_id":"a","text_emb":[0,1],"target_id":"b","attr_embs":{"color":[1]}})"); }),
              Errc::DimMismatch);
    EXPECT_EQ(code_of([&] { parse(R"({"ref_id":"a","text_emb":[0,1],"target_id":"b","extra":1})"); }),
              Errc::BadFormat);
    EXPECT_EQ(code_of([&] { parse("{not json"); }), Errc::BadFormat);
}

TEST(Triplets, RoundtripFieldWise) {
    const EmbeddingMatrix c(2, {"a", "b", "c"}, {1, 0, 0, 1, 1, 1});
    std::vector<QueryTriplet> ts(2);
    ts[0].ref_id = "a";
    ts[0].target_id = "b";
    ts[0].text_emb = {0.125, -1.0 / 3.0};
    ts[0].attr(Attribute::color) = Vec{1e-300, 2.0};
    ts[1].ref_id = "c";
    ts[1].target_id = "a";
    ts[1].text_emb = {0.1, 0.2};
    ts[1].attr(Attribute::shape) = Vec{-0.5, 0.7};
    ts[1].subset_ids = std::vector<std::string>{"b", "a"};
    for (auto& t : ts) validate_triplet(t, c);

    const auto dir = temp_dir("triplets_rt");
    write_triplets((dir / "t.jsonl").string(), ts);
    const auto back = load_triplets((dir / "t.jsonl").string(), c);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].ref_id, ts[i].ref_id);
        EXPECT_EQ(back[i].target_id, ts[i].target_id);
        EXPECT_EQ(back[i].text_emb, ts[i].text_emb);
        EXPECT_EQ(back[i].attr_embs, ts[i].attr_embs);
        EXPECT_EQ(back[i].subset_ids, ts[i].subset_ids);
        EXPECT_EQ(back[i].ref_row, ts[i].ref_row);
        EXPECT_EQ(back[i].target_row, ts[i].target_row);
    }
}

class ManifestTamper : public ::testing::Test {
protected:
    void SetUp() override {
        dir = temp_dir("manifest");
        const EmbeddingMatrix c(2, {"a", "b", "c"}, {1, 0, 0, 1, 0.5, 0.5});
        std::vector<QueryTriplet> ts(1);
        ts[0].ref_id = "a";
        ts[0].target_id = "b";
        ts[0].text_emb = {0.5, 0.25};
        for (auto& t : ts) validate_triplet(t, c);
        write_corpus((dir / "corpus.emb").string(), c);
        write_triplets((dir / "t.jsonl").string(), ts);
        write_manifest((dir / "m.json").string(), "corpus.emb", "t.jsonl", 2, Split::train);
    }
    std::filesystem::path dir;
};

TEST_F(ManifestTamper, LoadsCleanDataset) {
    const auto ds = load_dataset((dir / "m.json").string(), false);
    EXPECT_EQ(ds.corpus.count(), 3u);
    EXPECT_EQ(ds.triplets.size(), 1u);
    EXPECT_EQ(ds.manifest.corpus_sha256, sha256_file((dir / "corpus.emb").string()));
}

TEST_F(ManifestTamper, EverySingleByteFlipIsDetected) {
    for (const char* name : {"corpus.emb", "t.jsonl"}) {
        const auto path = (dir / name).string();
        const auto orig = read_file_bytes(path);
        for (std::size_t i = 0; i < orig.size(); ++i) {
            auto mod = orig;
            mod[i] ^= 0x01;
            write_file_bytes(path, mod);
            EXPECT_THROW(load_dataset((dir / "m.json").string()), Error) << name << " byte " << i;
        }
        write_file_bytes(path, orig);
    }
    EXPECT_NO_THROW(load_dataset((dir / "m.json").string()));
}

TEST_F(ManifestTamper, ChecksumMismatchCode) {
    auto bytes = read_file_bytes((dir / "corpus.emb").string());
    bytes.back() ^= 0x80;
    write_file_bytes((dir / "corpus.emb").string(), bytes);
    EXPECT_EQ(code_of([&] { load_dataset((dir / "m.json").string()); }), Errc::ChecksumMismatch);
}

TEST(Sha256, KnownVector) {
    const std::string s = "abc";
    EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
