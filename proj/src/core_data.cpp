#include "rdtac/core_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace rdtac {

static_assert(std::endian::native == std::endian::little, "the .dpet reader assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'P', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <class T>
  T take(const char* field) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw FormatError(std::string("truncated payload while reading ") + field);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool strictly_increasing(std::span<const double> values) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (!(values[i] > values[i - 1])) return false;
  }
  return true;
}

FrameStack::FrameStack(std::size_t nx, std::size_t ny, std::vector<double> times, std::vector<double> data)
    : nx_(nx), ny_(ny), times_(std::move(times)), data_(std::move(data)) {
  if (nx_ == 0 || ny_ == 0) throw ShapeError("FrameStack: grid dimensions must be positive");
  if (times_.empty()) throw ShapeError("FrameStack: at least one frame required");
  if (data_.size() != nx_ * ny_ * times_.size()) {
    throw ShapeError("FrameStack: data size " + std::to_string(data_.size()) + " does not match nt*ny*nx = " +
                     std::to_string(nx_ * ny_ * times_.size()));
  }
  if (!strictly_increasing(times_)) throw ArgumentError("FrameStack: times must be strictly increasing");
  for (double t : times_) {
    if (!std::isfinite(t)) throw ArgumentError("FrameStack: non-finite frame time");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw ArgumentError("FrameStack: non-finite data value");
  }
}

std::span<const double> FrameStack::frame(std::size_t j) const {
  if (j >= nt()) throw ArgumentError("FrameStack: frame index out of range");
  return std::span<const double>(data_).subspan(j * pixels(), pixels());
}

FrameStack FrameStack::head(std::size_t count) const {
  if (count == 0 || count > nt()) throw ArgumentError("FrameStack::head: count out of range");
  std::vector<double> t(times_.begin(), times_.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<double> d(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(count * pixels()));
  return FrameStack(nx_, ny_, std::move(t), std::move(d));
}

RoiMask::RoiMask(std::string name_, std::size_t nx_, std::size_t ny_, std::vector<std::uint8_t> mask_)
    : name(std::move(name_)), nx(nx_), ny(ny_), mask(std::move(mask_)) {
  if (mask.size() != nx * ny) throw ShapeError("RoiMask '" + name + "': mask size does not match ny*nx");
  if (count() == 0) throw ArgumentError("RoiMask '" + name + "': mask has no pixels");
}

std::size_t RoiMask::count() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

Tac::Tac(std::vector<double> times_, std::vector<double> values_) : times(std::move(times_)), values(std::move(values_)) {
  if (times.size() != values.size()) throw ShapeError("Tac: times and values differ in length");
  if (!strictly_increasing(times)) throw ArgumentError("Tac: times must be strictly increasing");
}

void save_framestack(const FrameStack& stack, const std::filesystem::path& path) {
  std::vector<char> out;
  out.reserve(20 + 8 * stack.nt() + 4 * stack.data().size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stack.nx()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stack.ny()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stack.nt()));
  for (double t : stack.times()) put<double>(out, t);
  for (double v : stack.data()) put<float>(out, static_cast<float>(v));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

FrameStack load_framestack(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader in(std::move(bytes));

  char magic[4];
  for (char& c : magic) c = in.take<char>("magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic: expected \"DPET\"");
  const auto version = in.take<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version));
  const auto nx = in.take<std::uint32_t>("nx");
  const auto ny = in.take<std::uint32_t>("ny");
  const auto nt = in.take<std::uint32_t>("nt");
  if (nx == 0 || ny == 0 || nt == 0) throw FormatError("zero dimension in header (nx, ny, nt)");

  const std::size_t count = std::size_t{nx} * ny * nt;
  if (in.remaining() != 8 * std::size_t{nt} + 4 * count) {
    if (in.remaining() < 8 * std::size_t{nt}) throw FormatError("truncated payload in times");
    if (in.remaining() < 8 * std::size_t{nt} + 4 * count) throw FormatError("truncated payload in data");
    throw FormatError("trailing bytes after data");
  }
  std::vector<double> times(nt);
  for (auto& t : times) t = in.take<double>("times");
  if (!strictly_increasing(times)) throw FormatError("times are not strictly increasing");
  std::vector<double> data(count);
  for (auto& v : data) {
    v = static_cast<double>(in.take<float>("data"));
    if (!std::isfinite(v)) throw FormatError("non-finite value in data");
  }
  return FrameStack(nx, ny, std::move(times), std::move(data));
}

std::filesystem::path roi_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".json");
  return p;
}

void save_roi(const RoiMask& roi, const std::filesystem::path& path) {
  std::vector<double> data(roi.mask.size());
  std::transform(roi.mask.begin(), roi.mask.end(), data.begin(), [](std::uint8_t m) { return m ? 1.0 : 0.0; });
  save_framestack(FrameStack(roi.nx, roi.ny, {0.0}, std::move(data)), path);

  std::ofstream side(roi_sidecar_path(path), std::ios::trunc);
  if (!side) throw IoError("cannot write ROI sidecar for " + path.string());
  side << nlohmann::json{{"name", roi.name}}.dump() << "\n";
}

RoiMask load_roi(const std::filesystem::path& path) {
  const FrameStack stack = load_framestack(path);
  if (stack.nt() != 1) throw FormatError("ROI file must hold exactly one frame: " + path.string());
  std::vector<std::uint8_t> mask(stack.pixels());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double v = stack.data()[i];
    if (v != 0.0 && v != 1.0) throw FormatError("ROI values must be 0 or 1: " + path.string());
    mask[i] = v == 1.0 ? 1 : 0;
  }
  std::string name = path.stem().string();
  const auto side = roi_sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      const auto j = nlohmann::json::parse(in);
      name = j.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad ROI sidecar " + side.string() + ": " + e.what());
    }
  }
  return RoiMask(std::move(name), stack.nx(), stack.ny(), std::move(mask));
}

Tac extract_roi_tac(const FrameStack& stack, const RoiMask& roi) {
  if (roi.nx != stack.nx() || roi.ny != stack.ny()) {
    throw ShapeError("ROI '" + roi.name + "' dimensions do not match the frame stack");
  }
  const std::size_t n = roi.count();
  if (n == 0) throw ArgumentError("ROI '" + roi.name + "' is empty");
  std::vector<double> values(stack.nt(), 0.0);
  for (std::size_t j = 0; j < stack.nt(); ++j) {
    const auto frame = stack.frame(j);
    double sum = 0.0;
    for (std::size_t p = 0; p < frame.size(); ++p) {
      if (roi.mask[p]) sum += frame[p];
    }
    values[j] = sum / static_cast<double>(n);
  }
  return Tac(stack.times(), std::move(values));
}

}  // namespace rdtac
