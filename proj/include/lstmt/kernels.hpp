#pragma once

// Dense f64 inner loops. A scalar reference implementation is always built;
// vector variants are compiled per-ISA and picked at startup from what the
// CPU reports. Set LSTMT_KERNELS=scalar to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace lstmt::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  const char* name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // z[i] = x[i] + y[i]
  void (*add)(const double* x, const double* y, double* z, std::size_t n);
  // z[i] = x[i] * y[i]
  void (*mul)(const double* x, const double* y, double* z, std::size_t n);
  // z[i] += x[i] * y[i]
  void (*mul_acc)(const double* x, const double* y, double* z, std::size_t n);
};

const KernelTable& scalar_table();

/// Every table this binary carries that the running CPU can execute.
/// The scalar table is always first.
std::vector<const KernelTable*> available();

/// The table all tensor code routes through.
const KernelTable& active();

/// Switches the active table. Returns false (and changes nothing) when the
/// ISA is not available on this CPU or not compiled in.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void add(std::span<const double> x, std::span<const double> y, std::span<double> z) {
  active().add(x.data(), y.data(), z.data(), x.size());
}
inline void mul(std::span<const double> x, std::span<const double> y, std::span<double> z) {
  active().mul(x.data(), y.data(), z.data(), x.size());
}
inline void mul_acc(std::span<const double> x, std::span<const double> y, std::span<double> z) {
  active().mul_acc(x.data(), y.data(), z.data(), x.size());
}

namespace detail {
// Defined in the per-ISA translation units; null when not compiled in.
const KernelTable* avx2_table();
const KernelTable* neon_table();
}  // namespace detail

}  // namespace lstmt::kernels
