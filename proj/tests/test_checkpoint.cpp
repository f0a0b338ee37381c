#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fedforget/nn/checkpoint.hpp"
#include "fedforget/nn/ops.hpp"

using namespace ff;

namespace {

std::filesystem::path tmp(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / "fedforget_ckpt_test";
  std::filesystem::create_directories(d);
  return d / name;
}

std::uint32_t u32_at(const std::vector<unsigned char>& b, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  auto p = init_model(find_arch("lenet5_mnist"), 3);
  auto path = tmp("lenet.ckpt");
  save_checkpoint(path, p, "model=3");
  auto c = load_checkpoint(path);
  EXPECT_EQ(c.params, p);
  EXPECT_EQ(c.params.arch_id(), "lenet5_mnist");
  EXPECT_EQ(c.lineage, "model=3");
  EXPECT_EQ(c.params.content_hash(), p.content_hash());
}

TEST(Checkpoint, HeaderLayout) {
  auto p = init_model(find_arch("synthetic_cnn"), 1);
  auto b = encode_checkpoint(p, "xy");
  ASSERT_GT(b.size(), 24u);
  EXPECT_EQ(std::memcmp(b.data(), "FFCK", 4), 0);
  EXPECT_EQ(u32_at(b, 4), 1u);
  EXPECT_EQ(u32_at(b, 8), 13u);  // "synthetic_cnn"
  EXPECT_EQ(std::string(b.begin() + 12, b.begin() + 25), "synthetic_cnn");
  EXPECT_EQ(u32_at(b, 25), 2u);
  EXPECT_EQ(b[31], 0);  // f32 tag
  EXPECT_EQ(u32_at(b, 32), std::uint32_t(p.size()));
  Fnv1a h;
  h.update(b.data(), b.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, b.data() + b.size() - 8, 8);
  EXPECT_EQ(stored, h.digest());
}

TEST(Checkpoint, SizeMatchesFormula) {
  auto p = init_model(find_arch("synthetic_cnn"), 1);
  std::size_t expect = 4 + 4 + 4 + 13 + 4 + 0 + 1 + 4 + 8;
  for (const auto& [name, t] : p) expect += 4 + name.size() + 4 + 4 * t.shape.size() + 4 * t.numel();
  EXPECT_EQ(encode_checkpoint(p, "").size(), expect);
}

TEST(Checkpoint, DoublePrecisionRoundTrip) {
  auto p = init_model<double>(find_arch("synthetic_cnn"), 1);
  auto b = encode_checkpoint(p, "");
  auto c = decode_checkpoint(b);
  EXPECT_EQ(c.params, p.cast<float>());
}

TEST(Checkpoint, RejectsCorruption) {
  auto p = init_model(find_arch("synthetic_cnn"), 1);
  auto b = encode_checkpoint(p, "");
  auto flipped = b;
  flipped[b.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), LoadError);
  auto magic = b;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), LoadError);
  auto version = b;
  version[4] = 2;
  EXPECT_THROW(decode_checkpoint(version), LoadError);
  auto truncated = b;
  truncated.resize(b.size() - 20);
  EXPECT_THROW(decode_checkpoint(truncated), LoadError);
  auto trailing = b;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), LoadError);
  EXPECT_THROW(decode_checkpoint({}), LoadError);
}

TEST(Checkpoint, MissingFileNamesPath) {
  try {
    load_checkpoint("/nonexistent/dir/x.ckpt");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.ckpt"), std::string::npos);
  }
}

TEST(Checkpoint, UnwritablePathIsIoError) {
  auto p = init_model(find_arch("synthetic_cnn"), 1);
  auto file = tmp("plain_file");
  std::ofstream(file) << "x";
  EXPECT_THROW(save_checkpoint(file / "x.ckpt", p), IoError);
  EXPECT_THROW(save_checkpoint(tmp(""), p), IoError);
}
