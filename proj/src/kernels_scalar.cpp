#include "lstmt/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace lstmt::kernels {
namespace {

double dot_ref(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_ref(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_ref(const double* x, const double* y, double* z, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void mul_ref(const double* x, const double* y, double* z, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void mul_acc_ref(const double* x, const double* y, double* z, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}

constexpr KernelTable kScalar{Isa::scalar, "scalar", dot_ref, axpy_ref, add_ref, mul_ref, mul_acc_ref};

const KernelTable* best_available() {
  if (const char* forced = std::getenv("LSTMT_KERNELS"); forced && std::strcmp(forced, "scalar") == 0) {
    return &kScalar;
  }
  if (auto* t = detail::avx2_table()) return t;
  if (auto* t = detail::neon_table()) return t;
  return &kScalar;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{best_available()};
  return slot;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

std::vector<const KernelTable*> available() {
  std::vector<const KernelTable*> out{&kScalar};
  if (auto* t = detail::avx2_table()) out.push_back(t);
  if (auto* t = detail::neon_table()) out.push_back(t);
  return out;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

bool select(Isa isa) {
  for (const auto* t : available()) {
    if (t->isa == isa) {
      active_slot().store(t, std::memory_order_release);
      return true;
    }
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

}  // namespace lstmt::kernels
