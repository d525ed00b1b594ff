#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "clipgeom/embedding_store.hpp"
#include "test_util.hpp"

using namespace clipgeom;
using testutil::TempDir;

namespace {

// Hand-assembled EMB1 image, independent of encode_emb.
std::vector<std::uint8_t> handmade_emb(std::uint8_t modality, std::uint32_t dim,
                                       std::uint64_t count, const std::vector<float>& values,
                                       const std::vector<std::string>* ids = nullptr) {
  std::vector<std::uint8_t> b = {'E', 'M', 'B', '1', modality};
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(dim >> (8 * i)));
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
  b.push_back(ids ? 1 : 0);
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  if (ids) {
    for (const auto& s : *ids) {
      b.push_back(static_cast<std::uint8_t>(s.size() & 0xFF));
      b.push_back(static_cast<std::uint8_t>(s.size() >> 8));
      b.insert(b.end(), s.begin(), s.end());
    }
  }
  return b;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

template <typename E, typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(EmbeddingSet, RejectsNonFiniteAndBadIds) {
  RowMatrix m(2, 2);
  m << 1, 2, 3, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(EmbeddingSet(Modality::image, m), InvalidArgument);
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(EmbeddingSet(Modality::image, m), InvalidArgument);
  m(1, 1) = 4;
  EXPECT_THROW(EmbeddingSet(Modality::image, m, std::vector<std::string>{"a"}), InvalidArgument);
  EXPECT_THROW(EmbeddingSet(Modality::image, m, std::vector<std::string>{"a", "a"}),
               InvalidArgument);
  EXPECT_NO_THROW(EmbeddingSet(Modality::image, m, std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(EmbeddingSet(Modality::image, RowMatrix(0, 3)), InvalidArgument);
}

TEST(Emb1, HandmadeFileLoads) {
  TempDir dir;
  const auto path = dir / "x.emb";
  write_bytes(path, handmade_emb(1, 3, 2, {1, 2, 3, 4, 5, 6}));
  const auto set = load_emb(path);
  EXPECT_EQ(set.modality(), Modality::text);
  ASSERT_EQ(set.count(), 2u);
  ASSERT_EQ(set.dim(), 3u);
  RowMatrix expect(2, 3);
  expect << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(set.data(), expect);
  EXPECT_FALSE(set.has_ids());
}

TEST(Emb1, EncoderMatchesHandmadeBytes) {
  RowMatrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const std::vector<std::string> ids = {"a", "bee"};
  EXPECT_EQ(encode_emb(EmbeddingSet(Modality::image, m, ids)),
            handmade_emb(0, 3, 2, {1, 2, 3, 4, 5, 6}, &ids));
  EXPECT_EQ(encode_emb(EmbeddingSet(Modality::other, m)), handmade_emb(2, 3, 2, {1, 2, 3, 4, 5, 6}));
}

TEST(Emb1, BadMagic) {
  auto b = handmade_emb(0, 1, 1, {1});
  std::memcpy(b.data(), "XXXX", 4);
  EXPECT_NE(error_of<FormatError>([&] { decode_emb(b.data(), b.size()); }).find("bad magic"),
            std::string::npos);
}

TEST(Emb1, PayloadLengthMismatch) {
  // Declares 5 rows, carries 4.
  const auto b = handmade_emb(0, 2, 5, std::vector<float>(8, 1.0f));
  EXPECT_NE(error_of<FormatError>([&] { decode_emb(b.data(), b.size()); })
                .find("payload length mismatch"),
            std::string::npos);
  auto extra = handmade_emb(0, 2, 1, {1, 2});
  extra.push_back(0);
  EXPECT_THROW(decode_emb(extra.data(), extra.size()), FormatError);
}

TEST(Emb1, TruncatedAndMalformedHeaders) {
  const auto b = handmade_emb(0, 2, 1, {1, 2});
  EXPECT_THROW(decode_emb(b.data(), 10), FormatError);
  auto bad_mod = b;
  bad_mod[4] = 7;
  EXPECT_THROW(decode_emb(bad_mod.data(), bad_mod.size()), FormatError);
  auto bad_flags = b;
  bad_flags[17] = 0x80;
  EXPECT_THROW(decode_emb(bad_flags.data(), bad_flags.size()), FormatError);
  const auto zero_dim = handmade_emb(0, 0, 1, {});
  EXPECT_THROW(decode_emb(zero_dim.data(), zero_dim.size()), FormatError);
}

TEST(Emb1, NanAndInfInPayloadRejected) {
  const auto nan = handmade_emb(0, 2, 1, {1, std::numeric_limits<float>::quiet_NaN()});
  EXPECT_NE(error_of<FormatError>([&] { decode_emb(nan.data(), nan.size()); }).find("NaN"),
            std::string::npos);
  const auto inf = handmade_emb(0, 2, 1, {-std::numeric_limits<float>::infinity(), 1});
  EXPECT_NE(error_of<FormatError>([&] { decode_emb(inf.data(), inf.size()); }).find("Inf"),
            std::string::npos);
}

TEST(Emb1, DuplicateIdsInFileRejected) {
  const std::vector<std::string> ids = {"k", "k"};
  const auto b = handmade_emb(0, 1, 2, {1, 2}, &ids);
  EXPECT_THROW(decode_emb(b.data(), b.size()), FormatError);
  const auto cut = std::vector<std::uint8_t>(b.begin(), b.end() - 1);
  EXPECT_THROW(decode_emb(cut.data(), cut.size()), FormatError);
}

TEST(Emb1, RoundTripIsIdentityForFloat32Data) {
  TempDir dir;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    // float32-representable values so the round trip is exact.
    RowMatrix m = testutil::gaussian_matrix(1 + seed % 7, 1 + seed % 5, seed);
    m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    std::optional<std::vector<std::string>> ids;
    if (seed % 2) {
      ids.emplace();
      for (Eigen::Index r = 0; r < m.rows(); ++r) ids->push_back("id-" + std::to_string(r) + "-\xC3\xA9");
    }
    const EmbeddingSet set(static_cast<Modality>(seed % 3), m, ids);
    const auto path = dir / ("rt" + std::to_string(seed) + ".emb");
    save_emb(set, path);
    EXPECT_EQ(load_emb(path), set) << "seed " << seed;
  }
}

TEST(Emb1, SaveRejectsValuesOutsideFloat32BeforeWriting) {
  TempDir dir;
  RowMatrix m(1, 2);
  m << 1.0, 1e300;
  const auto path = dir / "big.emb";
  EXPECT_THROW(save_emb(EmbeddingSet(Modality::image, m), path), InvalidArgument);
  EXPECT_FALSE(std::filesystem::exists(path));
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(Emb1, NoIdsMeansNoIdSection) {
  RowMatrix m(1, 2);
  m << 1, 2;
  const auto b = encode_emb(EmbeddingSet(Modality::image, m));
  EXPECT_EQ(b.size(), kEmbHeaderSize + 8);
  EXPECT_EQ(b[17], 0);
}

TEST(Emb1, MissingFileIsIoError) {
  EXPECT_THROW(load_emb("/nonexistent/dir/file.emb"), IoError);
}

TEST(Csv, IdentityRows) {
  const auto set = parse_csv_embeddings("1,0\n0,1", Modality::image);
  EXPECT_EQ(set.data(), RowMatrix(RowMatrix::Identity(2, 2)));
  EXPECT_FALSE(set.has_ids());
}

TEST(Csv, RaggedRowsRejected) {
  EXPECT_THROW(parse_csv_embeddings("1,2\n3", Modality::image), FormatError);
}

TEST(Csv, HeaderWithIdColumn) {
  const auto set =
      parse_csv_embeddings("id,f0,f1\r\nx,1.5,2\r\n\"y,z\",-3,4e-1\r\n", Modality::text, {.header = true});
  ASSERT_TRUE(set.has_ids());
  EXPECT_EQ(*set.ids(), (std::vector<std::string>{"x", "y,z"}));
  RowMatrix expect(2, 2);
  expect << 1.5, 2, -3, 0.4;
  EXPECT_EQ(set.data(), expect);
}

TEST(Csv, HeaderWithoutIdColumn) {
  const auto set = parse_csv_embeddings("a,b\n1,2\n", Modality::text, {.header = true});
  EXPECT_FALSE(set.has_ids());
  EXPECT_EQ(set.count(), 1u);
}

TEST(Csv, NonNumericAndEmptyAndNan) {
  EXPECT_THROW(parse_csv_embeddings("1,abc\n", Modality::image), FormatError);
  EXPECT_THROW(parse_csv_embeddings("", Modality::image), FormatError);
  EXPECT_THROW(parse_csv_embeddings("1,nan\n", Modality::image), FormatError);
}

TEST(Pair, IndexAlignedWithoutIds) {
  const auto a = testutil::gaussian_set(5, 512, 1, Modality::image);
  const auto b = testutil::gaussian_set(5, 512, 2, Modality::text);
  const auto p = pair(a, b);
  EXPECT_EQ(p.images, a);
  EXPECT_EQ(p.texts, b);
}

TEST(Pair, ReordersTextsByImageIds) {
  RowMatrix i(2, 1), t(2, 1);
  i << 1, 2;
  t << 20, 10;
  const auto p = pair(EmbeddingSet(Modality::image, i, std::vector<std::string>{"a", "b"}),
                      EmbeddingSet(Modality::text, t, std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(*p.texts.ids(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(p.texts.data()(0, 0), 10);
  EXPECT_EQ(p.texts.data()(1, 0), 20);
}

TEST(Pair, Errors) {
  const auto a = testutil::gaussian_set(5, 4, 1, Modality::image);
  EXPECT_THROW(pair(a, testutil::gaussian_set(6, 4, 2, Modality::text)), InvalidArgument);
  EXPECT_THROW(pair(a, testutil::gaussian_set(5, 3, 2, Modality::text)), InvalidArgument);
  EXPECT_THROW(pair(a, testutil::gaussian_set(5, 4, 2, Modality::image)), InvalidArgument);
  RowMatrix one(1, 1);
  one << 1;
  EXPECT_THROW(pair(EmbeddingSet(Modality::image, one, std::vector<std::string>{"a"}),
                    EmbeddingSet(Modality::text, one, std::vector<std::string>{"b"})),
               InvalidArgument);
}

// pair(I, shuffle(T)) == pair(I, T), and pairing an already paired set is a no-op.
TEST(PairProperty, ShuffleInvariantAndIdempotent) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial);
    std::vector<std::string> ids;
    for (std::size_t j = 0; j < m; ++j) ids.push_back("k" + std::to_string(j));
    const EmbeddingSet img(Modality::image, testutil::gaussian_matrix(m, 3, 100 + trial), ids);
    const EmbeddingSet txt(Modality::text, testutil::gaussian_matrix(m, 3, 200 + trial), ids);

    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RowMatrix shuffled(txt.data().rows(), txt.data().cols());
    std::vector<std::string> shuffled_ids;
    for (std::size_t j = 0; j < m; ++j) {
      shuffled.row(static_cast<Eigen::Index>(j)) = txt.data().row(static_cast<Eigen::Index>(perm[j]));
      shuffled_ids.push_back(ids[perm[j]]);
    }
    const auto ref = pair(img, txt);
    const auto p = pair(img, EmbeddingSet(Modality::text, shuffled, shuffled_ids));
    EXPECT_EQ(p.texts, ref.texts);
    EXPECT_EQ(pair(p.images, p.texts).texts, p.texts);
  }
}
