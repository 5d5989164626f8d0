#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rdtac {

/// Precomputed cosine-transform plans and Neumann-Laplacian eigenvalues for a
/// fixed nx-by-ny grid with unit spacing.
///
/// Construction goes through the FFTW planner and is serialized internally.
/// A constructed plan is read-only: transforms write to caller-owned buffers,
/// so one plan may be shared across threads.
class SpectralPlan {
 public:
  SpectralPlan(std::size_t nx, std::size_t ny);
  ~SpectralPlan();
  SpectralPlan(const SpectralPlan&) = delete;
  SpectralPlan& operator=(const SpectralPlan&) = delete;
  SpectralPlan(SpectralPlan&& other) noexcept;
  SpectralPlan& operator=(SpectralPlan&& other) noexcept;

  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t size() const { return nx_ * ny_; }

  // Eigenvalues of the negative 5-point Neumann Laplacian, [j][i] row-major.
  std::span<const double> eigenvalues() const { return eigs_; }

  // In-place orthonormal DCT-II / DCT-III over both axes.
  void forward_inplace(std::span<double> field) const;
  void inverse_inplace(std::span<double> coeffs) const;

  void check_shape(std::size_t n, const char* what) const;

 private:
  void release();

  std::size_t nx_ = 0;
  std::size_t ny_ = 0;
  std::vector<double> eigs_;
  std::vector<double> scale_x_fwd_, scale_y_fwd_;
  std::vector<double> scale_x_inv_, scale_y_inv_;
  void* fwd_ = nullptr;  // fftw_plan
  void* inv_ = nullptr;
};

std::vector<double> dct2_forward(std::span<const double> field, const SpectralPlan& plan);
std::vector<double> dct2_inverse(std::span<const double> coeffs, const SpectralPlan& plan);

std::vector<double> laplacian_eigenvalues(std::size_t nx, std::size_t ny);

/// Solves (I + h*kappa*A) x = u with A the negative Neumann Laplacian, by
/// dividing each cosine mode by 1 + h*kappa*lambda.
std::vector<double> implicit_diffusion_step(std::span<const double> u, double kappa, double h,
                                            const SpectralPlan& plan);

struct DiffusionVjp {
  std::vector<double> grad_u;
  double grad_kappa = 0.0;
};

/// Vector-Jacobian product of implicit_diffusion_step at input u with
/// cotangent gbar. The operator is symmetric, so grad_u is the same solve
/// applied to gbar; grad_kappa uses the closed-form per-mode derivative.
DiffusionVjp diffusion_step_vjp(std::span<const double> u, std::span<const double> gbar, double kappa, double h,
                                const SpectralPlan& plan);

}  // namespace rdtac
