#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rdtac/errors.hpp"

namespace rdtac {

/// A time-ordered sequence of 2D activity images, stored C-order [t][y][x].
///
/// Frame values are instantaneous samples at the frame midpoints held in
/// times() (minutes). Instances are immutable once constructed.
class FrameStack {
 public:
  FrameStack(std::size_t nx, std::size_t ny, std::vector<double> times, std::vector<double> data);

  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t nt() const { return times_.size(); }
  std::size_t pixels() const { return nx_ * ny_; }

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& data() const { return data_; }
  std::span<const double> frame(std::size_t j) const;

  // First `count` frames as a new stack.
  FrameStack head(std::size_t count) const;

  friend bool operator==(const FrameStack&, const FrameStack&) = default;

 private:
  std::size_t nx_;
  std::size_t ny_;
  std::vector<double> times_;
  std::vector<double> data_;
};

struct RoiMask {
  RoiMask(std::string name, std::size_t nx, std::size_t ny, std::vector<std::uint8_t> mask);

  std::string name;
  std::size_t nx;
  std::size_t ny;
  std::vector<std::uint8_t> mask;  // ny*nx, nonzero = inside

  std::size_t count() const;
};

struct Tac {
  Tac() = default;
  Tac(std::vector<double> times, std::vector<double> values);

  std::vector<double> times;
  std::vector<double> values;

  std::size_t size() const { return times.size(); }
};

FrameStack load_framestack(const std::filesystem::path& path);
void save_framestack(const FrameStack& stack, const std::filesystem::path& path);

// ROI files reuse the .dpet container (nt = 1, values 0/1) with a JSON
// sidecar {"name": ...} next to it under the same basename.
RoiMask load_roi(const std::filesystem::path& path);
void save_roi(const RoiMask& roi, const std::filesystem::path& path);
std::filesystem::path roi_sidecar_path(const std::filesystem::path& path);

Tac extract_roi_tac(const FrameStack& stack, const RoiMask& roi);

bool strictly_increasing(std::span<const double> values);

}  // namespace rdtac
