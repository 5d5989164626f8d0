#include "rdtac/spectral.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include <fftw3.h>

#include "rdtac/errors.hpp"

namespace rdtac {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void check_step_args(double kappa, double h) {
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ArgumentError("diffusion step: kappa must be finite and >= 0");
  if (!(h > 0.0) || !std::isfinite(h)) throw ArgumentError("diffusion step: h must be finite and > 0");
}

// FFTW's REDFT10 computes 2*sum x_n cos(pi k (n+1/2)/N); these factors make it orthonormal.
std::vector<double> forward_scale(std::size_t n) {
  std::vector<double> s(n, std::sqrt(1.0 / (2.0 * static_cast<double>(n))));
  s[0] = std::sqrt(1.0 / (4.0 * static_cast<double>(n)));
  return s;
}

// REDFT01 computes X_0 + 2*sum_{k>0} X_k cos(...); prescaling gives the orthonormal DCT-III.
std::vector<double> inverse_scale(std::size_t n) {
  std::vector<double> s(n, 1.0 / std::sqrt(2.0 * static_cast<double>(n)));
  s[0] = 1.0 / std::sqrt(static_cast<double>(n));
  return s;
}

}  // namespace

std::vector<double> laplacian_eigenvalues(std::size_t nx, std::size_t ny) {
  if (nx == 0 || ny == 0) throw ShapeError("laplacian_eigenvalues: dimensions must be positive");
  std::vector<double> eigs(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    const double ly = 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(j) / static_cast<double>(ny));
    for (std::size_t i = 0; i < nx; ++i) {
      const double lx = 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(nx));
      eigs[j * nx + i] = lx + ly;
    }
  }
  eigs[0] = 0.0;
  return eigs;
}

SpectralPlan::SpectralPlan(std::size_t nx, std::size_t ny)
    : nx_(nx),
      ny_(ny),
      eigs_(laplacian_eigenvalues(nx, ny)),
      scale_x_fwd_(forward_scale(nx)),
      scale_y_fwd_(forward_scale(ny)),
      scale_x_inv_(inverse_scale(nx)),
      scale_y_inv_(inverse_scale(ny)) {
  std::vector<double> buf(nx * ny, 0.0);
  const int n0 = static_cast<int>(ny);
  const int n1 = static_cast<int>(nx);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  std::lock_guard lock(planner_mutex());
  fwd_ = fftw_plan_r2r_2d(n0, n1, buf.data(), buf.data(), FFTW_REDFT10, FFTW_REDFT10, flags);
  inv_ = fftw_plan_r2r_2d(n0, n1, buf.data(), buf.data(), FFTW_REDFT01, FFTW_REDFT01, flags);
  if (fwd_ == nullptr || inv_ == nullptr) {
    release();
    throw std::runtime_error("SpectralPlan: FFTW planning failed");
  }
}

void SpectralPlan::release() {
  std::lock_guard lock(planner_mutex());
  if (fwd_) fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  if (inv_) fftw_destroy_plan(static_cast<fftw_plan>(inv_));
  fwd_ = inv_ = nullptr;
}

SpectralPlan::~SpectralPlan() { release(); }

SpectralPlan::SpectralPlan(SpectralPlan&& other) noexcept
    : nx_(other.nx_),
      ny_(other.ny_),
      eigs_(std::move(other.eigs_)),
      scale_x_fwd_(std::move(other.scale_x_fwd_)),
      scale_y_fwd_(std::move(other.scale_y_fwd_)),
      scale_x_inv_(std::move(other.scale_x_inv_)),
      scale_y_inv_(std::move(other.scale_y_inv_)),
      fwd_(other.fwd_),
      inv_(other.inv_) {
  other.fwd_ = other.inv_ = nullptr;
}

SpectralPlan& SpectralPlan::operator=(SpectralPlan&& other) noexcept {
  if (this != &other) {
    release();
    nx_ = other.nx_;
    ny_ = other.ny_;
    eigs_ = std::move(other.eigs_);
    scale_x_fwd_ = std::move(other.scale_x_fwd_);
    scale_y_fwd_ = std::move(other.scale_y_fwd_);
    scale_x_inv_ = std::move(other.scale_x_inv_);
    scale_y_inv_ = std::move(other.scale_y_inv_);
    fwd_ = other.fwd_;
    inv_ = other.inv_;
    other.fwd_ = other.inv_ = nullptr;
  }
  return *this;
}

void SpectralPlan::check_shape(std::size_t n, const char* what) const {
  if (n != size()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(size()) + " values for a " +
                     std::to_string(nx_) + "x" + std::to_string(ny_) + " grid, got " + std::to_string(n));
  }
}

void SpectralPlan::forward_inplace(std::span<double> field) const {
  check_shape(field.size(), "dct2_forward");
  fftw_execute_r2r(static_cast<fftw_plan>(fwd_), field.data(), field.data());
  for (std::size_t j = 0; j < ny_; ++j) {
    const double sy = scale_y_fwd_[j];
    double* row = field.data() + j * nx_;
    for (std::size_t i = 0; i < nx_; ++i) row[i] *= sy * scale_x_fwd_[i];
  }
}

void SpectralPlan::inverse_inplace(std::span<double> coeffs) const {
  check_shape(coeffs.size(), "dct2_inverse");
  for (std::size_t j = 0; j < ny_; ++j) {
    const double sy = scale_y_inv_[j];
    double* row = coeffs.data() + j * nx_;
    for (std::size_t i = 0; i < nx_; ++i) row[i] *= sy * scale_x_inv_[i];
  }
  fftw_execute_r2r(static_cast<fftw_plan>(inv_), coeffs.data(), coeffs.data());
}

std::vector<double> dct2_forward(std::span<const double> field, const SpectralPlan& plan) {
  plan.check_shape(field.size(), "dct2_forward");
  std::vector<double> out(field.begin(), field.end());
  plan.forward_inplace(out);
  return out;
}

std::vector<double> dct2_inverse(std::span<const double> coeffs, const SpectralPlan& plan) {
  plan.check_shape(coeffs.size(), "dct2_inverse");
  std::vector<double> out(coeffs.begin(), coeffs.end());
  plan.inverse_inplace(out);
  return out;
}

std::vector<double> implicit_diffusion_step(std::span<const double> u, double kappa, double h,
                                            const SpectralPlan& plan) {
  check_step_args(kappa, h);
  plan.check_shape(u.size(), "implicit_diffusion_step");
  std::vector<double> out(u.begin(), u.end());
  if (kappa == 0.0) return out;
  plan.forward_inplace(out);
  const auto eigs = plan.eigenvalues();
  const double hk = h * kappa;
  for (std::size_t m = 0; m < out.size(); ++m) out[m] /= 1.0 + hk * eigs[m];
  plan.inverse_inplace(out);
  return out;
}

DiffusionVjp diffusion_step_vjp(std::span<const double> u, std::span<const double> gbar, double kappa, double h,
                                const SpectralPlan& plan) {
  check_step_args(kappa, h);
  plan.check_shape(u.size(), "diffusion_step_vjp (u)");
  plan.check_shape(gbar.size(), "diffusion_step_vjp (gbar)");

  std::vector<double> uhat(u.begin(), u.end());
  std::vector<double> ghat(gbar.begin(), gbar.end());
  plan.forward_inplace(uhat);
  plan.forward_inplace(ghat);

  const auto eigs = plan.eigenvalues();
  const double hk = h * kappa;
  DiffusionVjp out;
  double gk = 0.0;
  for (std::size_t m = 0; m < ghat.size(); ++m) {
    const double denom = 1.0 + hk * eigs[m];
    gk += ghat[m] * (-h * eigs[m] * uhat[m] / (denom * denom));
    ghat[m] /= denom;
  }
  plan.inverse_inplace(ghat);
  out.grad_u = std::move(ghat);
  out.grad_kappa = gk;
  return out;
}

}  // namespace rdtac
