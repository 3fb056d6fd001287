#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "iast/tensor.hpp"
#include "iast/tensor_io.hpp"
#include "test_util.hpp"

using namespace iast;
using iast::testing::TempDir;

namespace {

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(DenseArray, RejectsPayloadShapeMismatch) {
  EXPECT_THROW(Array<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  Array<float> a(Shape{2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(a.size(), 6u);
}

TEST(TensorFormat, HeaderLayoutForFloatMatrix) {
  TempDir dir;
  Array<float> a(Shape{2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  save_array(dir / "a.iast", a);
  const auto b = file_bytes(dir / "a.iast");
  // 8 fixed bytes + 2 dims * 8 bytes, then 4 floats.
  ASSERT_EQ(b.size(), tensor_header_size(2) + 16);
  EXPECT_EQ(tensor_header_size(2), 24u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "IAST");
  EXPECT_EQ(b[4], 1);  // version
  EXPECT_EQ(b[5], 1);  // float32
  EXPECT_EQ(b[6], 2);  // ndim
  EXPECT_EQ(b[7], 0);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 2);
  for (int i = 9; i < 16; ++i) EXPECT_EQ(b[i], 0);
  // 1.0f little-endian = 00 00 80 3f
  EXPECT_EQ(static_cast<unsigned char>(b[24]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(b[26]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(b[27]), 0x3f);
}

TEST(TensorFormat, ScalarShapeRejected) {
  TempDir dir;
  Array<float> scalar(Shape{}, std::vector<float>{1.0f});
  EXPECT_THROW(save_array(dir / "s.iast", scalar), ShapeError);
  Array<float> five(Shape{1, 1, 1, 1, 1}, std::vector<float>{1.0f});
  EXPECT_THROW(save_array(dir / "f.iast", five), ShapeError);
}

TEST(TensorFormat, RoundTripIsBitExactForRandomArrays) {
  TempDir dir;
  std::mt19937_64 rng(1234);
  std::normal_distribution<float> g(0.0f, 3.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Array<float> f(Shape{3, 8, 8});
    for (auto& v : f.values()) v = g(rng);
    save_array(dir / "f.iast", f);
    const auto back = load_array<float>(dir / "f.iast");
    ASSERT_EQ(back.shape(), f.shape());
    ASSERT_EQ(std::memcmp(back.data(), f.data(), f.size() * sizeof(float)), 0);

    LabelMask m(Shape{8, 8});
    for (auto& v : m.values()) v = static_cast<std::int32_t>(rng() % 6);
    m[0] = kVoid;
    save_array(dir / "m.iast", m);
    EXPECT_EQ(load_array<std::int32_t>(dir / "m.iast"), m);

    Array<std::uint8_t> u(Shape{64});
    for (auto& v : u.values()) v = static_cast<std::uint8_t>(rng());
    save_array(dir / "u.iast", u);
    EXPECT_EQ(load_array<std::uint8_t>(dir / "u.iast"), u);
  }
}

TEST(TensorFormat, PayloadOffsetDependsOnlyOnNdim) {
  TempDir dir;
  for (std::size_t nd = 1; nd <= 4; ++nd) {
    Shape s(nd, 2);
    Array<std::uint8_t> a(s, 7);
    save_array(dir / "a.iast", a);
    const auto b = file_bytes(dir / "a.iast");
    EXPECT_EQ(b.size(), 8 + 8 * nd + a.size());
    EXPECT_EQ(static_cast<unsigned char>(b[8 + 8 * nd]), 7);
  }
}

TEST(TensorFormat, CorruptedMagicIsBadMagic) {
  TempDir dir;
  save_array(dir / "a.iast", Array<float>(Shape{4}, 1.0f));
  auto b = file_bytes(dir / "a.iast");
  b[1] = 'X';
  write_bytes(dir / "a.iast", b);
  EXPECT_THROW(load_array<float>(dir / "a.iast"), BadMagic);
}

TEST(TensorFormat, ShortPayloadIsTruncated) {
  TempDir dir;
  save_array(dir / "a.iast", Array<float>(Shape{4, 4}, 1.0f));
  auto b = file_bytes(dir / "a.iast");
  b.resize(b.size() - 3);
  write_bytes(dir / "a.iast", b);
  EXPECT_THROW(load_array<float>(dir / "a.iast"), Truncated);
}

TEST(TensorFormat, UnknownDtypeCode) {
  TempDir dir;
  save_array(dir / "a.iast", Array<float>(Shape{4}, 1.0f));
  auto b = file_bytes(dir / "a.iast");
  b[5] = 9;
  write_bytes(dir / "a.iast", b);
  EXPECT_THROW(load_array<float>(dir / "a.iast"), UnknownDtype);
}

TEST(TensorFormat, ErrorsNameThePath) {
  TempDir dir;
  const auto missing = dir / "nope.iast";
  try {
    load_array<float>(missing);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.iast"), std::string::npos);
  }
  EXPECT_THROW(save_array(dir / "no_such_dir" / "a.iast", Array<float>(Shape{1}, 0.0f)), IoError);
}

TEST(TensorFormat, DtypeMismatchOnTypedLoad) {
  TempDir dir;
  save_array(dir / "a.iast", Array<std::int32_t>(Shape{2}, 1));
  EXPECT_THROW(load_array<float>(dir / "a.iast"), FormatError);
  auto any = load_any_array(dir / "a.iast");
  EXPECT_TRUE(std::holds_alternative<Array<std::int32_t>>(any));
}
