#include <cstring>
#include <fstream>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "fmital/annotations.hpp"
#include "fmital/feature_io.hpp"
#include "helpers.hpp"

using namespace fmital;
using fmital::testing::random_array;
using fmital::testing::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FormatError::Kind read_failure(const std::filesystem::path& p) {
  try {
    read_features(p);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << p;
  return FormatError::Kind::kIo;
}

std::string message_of(const std::filesystem::path& p) {
  try {
    read_features(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(FeatureFile, RoundTripIsBitExact) {
  TempDir dir;
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 30));
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 5));
    const auto d = static_cast<std::size_t>(2 * rng.uniform_int(1, 8));
    FeatureTensor f(random_array(rng, {t, n, d}, -1e6, 1e6));
    f.array().values()[0] = -0.0f;
    f.array().values()[f.array().size() - 1] = std::numeric_limits<float>::denorm_min();
    const auto path = dir / "x.fmit";
    write_features(path, f);
    const FeatureTensor back = read_features(path);
    ASSERT_EQ(back.array().shape(), f.array().shape());
    EXPECT_EQ(std::memcmp(back.array().storage().data(), f.array().storage().data(), f.array().size() * 4), 0);
    write_features(dir / "y.fmit", back);
    EXPECT_EQ(slurp(path), slurp(dir / "y.fmit"));
  }
}

TEST(FeatureFile, HeaderLayoutIsLittleEndian) {
  TempDir dir;
  FeatureTensor f(Array({1, 1, 2}, {1.0f, -2.0f}));
  write_features(dir / "h.fmit", f);
  const auto bytes = slurp(dir / "h.fmit");
  const std::vector<unsigned char> expected = {'F', 'M', 'I', 'T', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0,
                                               0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(FeatureFile, EmptyFileIsTruncatedHeader) {
  TempDir dir;
  spit(dir / "e.fmit", {});
  EXPECT_EQ(read_failure(dir / "e.fmit"), FormatError::Kind::kTruncatedHeader);
  EXPECT_NE(message_of(dir / "e.fmit").find("truncated header"), std::string::npos);
}

TEST(FeatureFile, WrongMagicIsBadMagic) {
  TempDir dir;
  write_features(dir / "m.fmit", FeatureTensor(2, 1, 2));
  auto bytes = slurp(dir / "m.fmit");
  bytes[0] = 'X';
  spit(dir / "m.fmit", bytes);
  EXPECT_EQ(read_failure(dir / "m.fmit"), FormatError::Kind::kBadMagic);
  EXPECT_NE(message_of(dir / "m.fmit").find("bad magic"), std::string::npos);
}

TEST(FeatureFile, VersionTruncationAndOverflowAreDistinct) {
  TempDir dir;
  write_features(dir / "v.fmit", FeatureTensor(2, 1, 2));
  auto bytes = slurp(dir / "v.fmit");

  auto version = bytes;
  version[4] = 2;
  spit(dir / "a.fmit", version);
  EXPECT_EQ(read_failure(dir / "a.fmit"), FormatError::Kind::kBadVersion);

  auto short_header = bytes;
  short_header.resize(14);
  spit(dir / "b.fmit", short_header);
  EXPECT_EQ(read_failure(dir / "b.fmit"), FormatError::Kind::kTruncatedHeader);

  auto short_payload = bytes;
  short_payload.pop_back();
  spit(dir / "c.fmit", short_payload);
  EXPECT_EQ(read_failure(dir / "c.fmit"), FormatError::Kind::kTruncatedPayload);

  std::vector<unsigned char> huge = {'F', 'M', 'I', 'T', 1, 0, 0, 0};
  for (int i = 0; i < 3; ++i) huge.insert(huge.end(), {0xff, 0xff, 0xff, 0xff});
  spit(dir / "d.fmit", huge);
  const auto kind = read_failure(dir / "d.fmit");
  EXPECT_TRUE(kind == FormatError::Kind::kExtentOverflow || kind == FormatError::Kind::kTruncatedPayload);

  EXPECT_EQ(read_failure(dir / "missing.fmit"), FormatError::Kind::kIo);
}

TEST(FeatureFile, ErrorsAreDataErrors) {
  TempDir dir;
  spit(dir / "e.fmit", {'F'});
  EXPECT_THROW(read_features(dir / "e.fmit"), DataError);
}

TEST(Checkpoint, RoundTripPreservesNamesShapesAndWidth) {
  TempDir dir;
  std::vector<NamedArray> arrays = {{"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6.5}, false},
                                    {"b", {1}, {0.1}, true},
                                    {"empty", {0}, {}, false}};
  write_checkpoint(dir / "c.fmip", arrays);
  const auto back = read_checkpoint(dir / "c.fmip");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].name, arrays[i].name);
    EXPECT_EQ(back[i].shape, arrays[i].shape);
    EXPECT_EQ(back[i].wide, arrays[i].wide);
    EXPECT_EQ(back[i].values, arrays[i].values);
  }
  EXPECT_EQ(back[1].values[0], 0.1);
  EXPECT_THROW(write_checkpoint(dir / "bad.fmip", {{"x", {2}, {1}, false}}), ShapeError);
}

TEST(Checkpoint, RejectsFeatureFileMagic) {
  TempDir dir;
  write_features(dir / "f.fmit", FeatureTensor(1, 1, 2));
  EXPECT_THROW(read_checkpoint(dir / "f.fmit"), FormatError);
}

TEST(Annotations, JumpSegmentRoundTrips) {
  TempDir dir;
  AnnotationSet set;
  set["v"] = {10, {{{2, 6}, "jump"}}};
  write_annotations(dir / "a.json", set);
  const auto back = read_annotations(dir / "a.json");
  EXPECT_EQ(back, set);
  EXPECT_EQ(back.at("v").segments[0].segment, (Segment{2, 6}));
}

TEST(Annotations, EndBeforeStartRejected) {
  const auto doc = nlohmann::json::parse(R"({"v": {"duration": 10, "segments": [{"start": 6, "end": 2, "class": "jump"}]}})");
  try {
    parse_annotations(doc);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("segment 0"), std::string::npos);
    EXPECT_NE(msg.find("'end'"), std::string::npos);
  }
}

TEST(Annotations, FixtureHasSevenSegments) {
  const auto set = read_annotations(std::filesystem::path(FMITAL_TEST_DATA) / "annotations_fixture.json");
  EXPECT_EQ(set.size(), 3u);
  std::size_t total = 0;
  for (const auto& [id, ann] : set) total += ann.segments.size();
  EXPECT_EQ(total, 7u);
  EXPECT_EQ(set.at("video_c").segments[1].segment, (Segment{15, 35}));
}

TEST(Annotations, ValidationErrors) {
  auto fails = [](const char* text) {
    try {
      parse_annotations(nlohmann::json::parse(text));
    } catch (const DataError&) {
      return true;
    }
    return false;
  };
  EXPECT_TRUE(fails(R"({"v": {"duration": 10, "segments": [{"start": -1, "end": 2, "class": "x"}]}})"));
  EXPECT_TRUE(fails(R"({"v": {"duration": 10, "segments": [{"start": 1, "end": 10, "class": "x"}]}})"));
  EXPECT_TRUE(fails(R"({"v": {"duration": 10, "segments": [{"start": 1.5, "end": 3, "class": "x"}]}})"));
  EXPECT_TRUE(fails(R"({"v": {"duration": 10, "segments": [{"start": 1, "class": "x"}]}})"));
  EXPECT_TRUE(fails(R"({"v": {"segments": []}})"));
  EXPECT_TRUE(fails(R"([1, 2])"));
  EXPECT_FALSE(fails(R"({"v": {"duration": 10, "segments": []}})"));

  const std::set<std::string> known = {"jump"};
  const auto doc = nlohmann::json::parse(R"({"v": {"duration": 10, "segments": [{"start": 1, "end": 2, "class": "swim"}]}})");
  EXPECT_THROW(parse_annotations(doc, &known), DataError);
  EXPECT_NO_THROW(parse_annotations(doc));
}

TEST(Annotations, ClassNames) {
  EXPECT_EQ(class_name(7), "class_7");
  EXPECT_EQ(class_id_from_name("class_12"), 12);
  EXPECT_FALSE(class_id_from_name("class_"));
  EXPECT_FALSE(class_id_from_name("jump"));
  EXPECT_FALSE(class_id_from_name("class_1a"));
}
