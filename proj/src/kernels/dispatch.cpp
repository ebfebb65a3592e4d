#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "bapc/kernels.hpp"

namespace bapc::kernels {

namespace {

struct KernelTable {
  Backend backend;
  float (*dot_f32)(const float*, const float*, std::size_t);
  double (*dot_f64)(const double*, const double*, std::size_t);
  void (*axpy_f32)(float, const float*, float*, std::size_t);
  void (*axpy_f64)(double, const double*, double*, std::size_t);
  void (*add_f32)(const float*, float*, std::size_t);
  void (*add_f64)(const double*, double*, std::size_t);
};

constexpr KernelTable kScalarTable{Backend::kScalar, scalar::dot,  scalar::dot, scalar::axpy,
                                   scalar::axpy,     scalar::add,  scalar::add};
#if defined(BAPC_HAVE_AVX2_KERNELS)
constexpr KernelTable kAvx2Table{Backend::kAvx2, avx2::dot, avx2::dot, avx2::axpy,
                                 avx2::axpy,     avx2::add, avx2::add};
#endif
#if defined(BAPC_HAVE_NEON_KERNELS)
constexpr KernelTable kNeonTable{Backend::kNeon, neon::dot, neon::dot, neon::axpy,
                                 neon::axpy,     neon::add, neon::add};
#endif

const KernelTable* table_for(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return &kScalarTable;
    case Backend::kAvx2:
#if defined(BAPC_HAVE_AVX2_KERNELS)
      return &kAvx2Table;
#else
      return nullptr;
#endif
    case Backend::kNeon:
#if defined(BAPC_HAVE_NEON_KERNELS)
      return &kNeonTable;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

Backend detect_best() {
  if (const char* env = std::getenv("BAPC_KERNELS"); env != nullptr && *env != '\0') {
    Backend requested = parse_backend(env);
    if (!backend_available(requested)) {
      throw std::invalid_argument("BAPC_KERNELS requests unavailable backend '" + std::string(env) + "'");
    }
    return requested;
  }
  if (backend_available(Backend::kAvx2)) return Backend::kAvx2;
  if (backend_available(Backend::kNeon)) return Backend::kNeon;
  return Backend::kScalar;
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{table_for(detect_best())};
  return table;
}

inline const KernelTable& current() { return *active_table().load(std::memory_order_relaxed); }

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
    case Backend::kNeon:
      return "neon";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  if (name == "neon") return Backend::kNeon;
  throw std::invalid_argument("unknown kernel backend '" + std::string(name) + "'");
}

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(BAPC_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::kNeon:
#if defined(BAPC_HAVE_NEON_KERNELS)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return current().backend; }

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw std::invalid_argument("kernel backend '" + std::string(backend_name(backend)) +
                                "' is not available on this CPU");
  }
  active_table().store(table_for(backend), std::memory_order_relaxed);
}

float dot(std::span<const float> a, std::span<const float> b) {
  check_same_size(a.size(), b.size(), "dot");
  return current().dot_f32(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size(), "dot");
  return current().dot_f64(a.data(), b.data(), a.size());
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  check_same_size(x.size(), y.size(), "axpy");
  current().axpy_f32(alpha, x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size(), "axpy");
  current().axpy_f64(alpha, x.data(), y.data(), x.size());
}

void add(std::span<const float> x, std::span<float> y) {
  check_same_size(x.size(), y.size(), "add");
  current().add_f32(x.data(), y.data(), x.size());
}

void add(std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size(), "add");
  current().add_f64(x.data(), y.data(), x.size());
}

}  // namespace bapc::kernels
