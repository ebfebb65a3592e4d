#pragma once

// Data-parallel inner loops used by the tensor ops and the featurizer.
//
// Every kernel has a scalar reference implementation. Vector variants
// (AVX2+FMA on x86-64, NEON on AArch64) are selected once at startup from
// the CPU feature set; the choice can be overridden with the environment
// variable BAPC_KERNELS=scalar|avx2|neon or with set_backend().
//
// Vector variants reassociate sums, so results agree with the scalar
// reference to rounding, not bit-for-bit. A given backend is deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace bapc::kernels {

enum class Backend { kScalar, kAvx2, kNeon };

std::string_view backend_name(Backend backend);
bool backend_available(Backend backend);
Backend active_backend();
// Throws std::invalid_argument if the backend is not available on this CPU.
void set_backend(Backend backend);
Backend parse_backend(std::string_view name);

// sum_i a[i] * b[i]
float dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);

// y += alpha * x
void axpy(float alpha, std::span<const float> x, std::span<float> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// y += x
void add(std::span<const float> x, std::span<float> y);
void add(std::span<const double> x, std::span<double> y);

namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const float* x, float* y, std::size_t n);
void add(const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define BAPC_HAVE_AVX2_KERNELS 1
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const float* x, float* y, std::size_t n);
void add(const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__) || defined(_M_ARM64)
#define BAPC_HAVE_NEON_KERNELS 1
namespace neon {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const float* x, float* y, std::size_t n);
void add(const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace bapc::kernels
