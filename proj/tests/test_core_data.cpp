#include <doctest.h>

#include <cstring>
#include <fstream>

#include "oracles.hpp"
#include "rdtac/core_data.hpp"

using namespace rdtac;

namespace {

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void put(std::vector<char>& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

FrameStack small_stack(std::size_t nt) {
  std::vector<double> times, data;
  for (std::size_t j = 0; j < nt; ++j) times.push_back(0.5 + static_cast<double>(j));
  for (std::size_t k = 0; k < nt * 6; ++k) data.push_back(0.25 * static_cast<double>(k));
  return FrameStack(3, 2, times, data);
}

}  // namespace

TEST_CASE("framestack round-trips bit-identically") {
  const auto dir = oracle::scratch_dir("core_roundtrip");
  const auto s = small_stack(4);
  save_framestack(s, dir / "s.dpet");
  CHECK(load_framestack(dir / "s.dpet") == s);
}

TEST_CASE("single-frame stack is a legal container") {
  const auto dir = oracle::scratch_dir("core_nt1");
  const auto s = small_stack(1);
  save_framestack(s, dir / "one.dpet");
  CHECK(load_framestack(dir / "one.dpet") == s);
}

TEST_CASE("hand-assembled 2x2x2 file decodes") {
  const auto dir = oracle::scratch_dir("core_hand");
  std::vector<char> bytes = {'D', 'P', 'E', 'T'};
  put<std::uint32_t>(bytes, 1);
  put<std::uint32_t>(bytes, 2);
  put<std::uint32_t>(bytes, 2);
  put<std::uint32_t>(bytes, 2);
  put<double>(bytes, 1.0);
  put<double>(bytes, 2.5);
  for (float v : {1.f, 2.f, 3.f, 4.f, -1.f, 0.5f, 8.f, 16.f}) put<float>(bytes, v);
  write_bytes(dir / "h.dpet", bytes);

  const auto s = load_framestack(dir / "h.dpet");
  CHECK(s.nx() == 2);
  CHECK(s.ny() == 2);
  CHECK(s.times() == std::vector<double>{1.0, 2.5});
  CHECK(s.data() == std::vector<double>{1, 2, 3, 4, -1, 0.5, 8, 16});

  save_framestack(s, dir / "again.dpet");
  CHECK(read_bytes(dir / "again.dpet") == bytes);
}

TEST_CASE("data begins after the fixed header and the time table") {
  const auto dir = oracle::scratch_dir("core_offset");
  const auto s = small_stack(3);
  save_framestack(s, dir / "s.dpet");
  const auto bytes = read_bytes(dir / "s.dpet");
  const std::size_t offset = 4 + 4 + 4 * 3 + 8 * 3;
  CHECK(offset == 44);
  REQUIRE(bytes.size() == offset + 4 * s.data().size());
  float first_of_frame2;
  std::memcpy(&first_of_frame2, bytes.data() + offset + 4 * 6, 4);
  CHECK(first_of_frame2 == doctest::Approx(s.frame(1)[0]));
}

TEST_CASE("malformed files raise format errors naming the field") {
  const auto dir = oracle::scratch_dir("core_bad");
  save_framestack(small_stack(3), dir / "good.dpet");
  auto bytes = read_bytes(dir / "good.dpet");

  auto expect_error = [&](const std::vector<char>& b, const std::string& needle) {
    write_bytes(dir / "bad.dpet", b);
    try {
      (void)load_framestack(dir / "bad.dpet");
      FAIL("no error for " << needle);
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  auto magic = bytes;
  std::memcpy(magic.data(), "XXXX", 4);
  expect_error(magic, "magic");

  expect_error(std::vector<char>(bytes.begin(), bytes.begin() + 30), "times");
  expect_error(std::vector<char>(bytes.begin(), bytes.end() - 3), "data");
  expect_error(std::vector<char>(bytes.begin(), bytes.begin() + 10), "nx");

  auto times = bytes;
  const double t = 99.0;
  std::memcpy(times.data() + 20, &t, 8);
  expect_error(times, "times");
}

TEST_CASE("loading a missing file is an I/O error") {
  CHECK_THROWS_AS(load_framestack("/nonexistent/dir/x.dpet"), IoError);
  CHECK_THROWS_AS(save_framestack(small_stack(2), "/nonexistent/dir/x.dpet"), IoError);
}

TEST_CASE("framestack invariants") {
  CHECK_THROWS_AS(FrameStack(2, 2, {1.0, 1.0}, std::vector<double>(8)), ArgumentError);
  CHECK_THROWS_AS(FrameStack(2, 2, {1.0, 2.0}, std::vector<double>(7)), ShapeError);
  CHECK_THROWS_AS(FrameStack(2, 2, {1.0}, {0, 0, 0, std::nan("")}), ArgumentError);
  CHECK(small_stack(5).head(2).nt() == 2);
}

TEST_CASE("ROI TAC extraction") {
  SUBCASE("constant stack gives a constant TAC") {
    const FrameStack s(3, 3, {0.0, 1.0}, std::vector<double>(18, 5.0));
    const RoiMask m("any", 3, 3, {0, 1, 1, 0, 0, 1, 0, 0, 0});
    CHECK(extract_roi_tac(s, m).values == std::vector<double>{5.0, 5.0});
  }
  SUBCASE("two-pixel mean") {
    const FrameStack s(2, 1, {0.0}, {1.0, 3.0});
    CHECK(extract_roi_tac(s, RoiMask("pair", 2, 1, {1, 1})).values[0] == 2.0);
  }
  SUBCASE("top row of 1..9") {
    const FrameStack s(3, 3, {0.0}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(extract_roi_tac(s, RoiMask("top", 3, 3, {1, 1, 1, 0, 0, 0, 0, 0, 0})).values[0] == 2.0);
  }
  SUBCASE("errors") {
    const FrameStack s(3, 3, {0.0}, std::vector<double>(9, 1.0));
    CHECK_THROWS_AS(extract_roi_tac(s, RoiMask("small", 2, 2, {1, 0, 0, 0})), ShapeError);
    CHECK_THROWS_AS(RoiMask("empty", 2, 2, {0, 0, 0, 0}), ArgumentError);
  }
}

TEST_CASE("ROI files keep their name in a sidecar") {
  const auto dir = oracle::scratch_dir("core_roi");
  const RoiMask m("liver", 3, 2, {0, 1, 1, 0, 1, 0});
  save_roi(m, dir / "r.dpet");
  CHECK(std::filesystem::exists(dir / "r.json"));
  const auto back = load_roi(dir / "r.dpet");
  CHECK(back.name == "liver");
  CHECK(back.mask == m.mask);
  CHECK(back.nx == 3);
}

TEST_CASE("tac invariants") {
  CHECK_THROWS_AS(Tac({0.0, 1.0}, {1.0}), ShapeError);
  CHECK_THROWS_AS(Tac({1.0, 0.0}, {1.0, 2.0}), ArgumentError);
}
