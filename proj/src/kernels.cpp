#include "eul/kernels.h"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace eul::kernels {

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "?";
}

namespace {

struct Active {
  const Ops* table;
  Backend backend;
};

Active resolve_from_env() {
  const char* env = std::getenv("EUL_KERNELS");
  if (env != nullptr && std::strcmp(env, "scalar") == 0)
    return {&scalar_ops(), Backend::scalar};
  if (env != nullptr && std::strcmp(env, "avx2") == 0) {
    if (const Ops* t = avx2_ops()) return {t, Backend::avx2};
    std::fprintf(stderr, "eul: EUL_KERNELS=avx2 but cpu lacks avx2, using scalar\n");
    return {&scalar_ops(), Backend::scalar};
  }
  if (env != nullptr && std::strcmp(env, "auto") != 0 && env[0] != '\0')
    std::fprintf(stderr, "eul: unknown EUL_KERNELS value '%s', using auto\n", env);
  if (const Ops* t = avx2_ops()) return {t, Backend::avx2};
  return {&scalar_ops(), Backend::scalar};
}

std::atomic<const Active*> g_active{nullptr};

const Active* active() {
  const Active* a = g_active.load(std::memory_order_acquire);
  if (a == nullptr) {
    static const Active resolved = resolve_from_env();
    const Active* expected = nullptr;
    g_active.compare_exchange_strong(expected, &resolved, std::memory_order_acq_rel);
    a = g_active.load(std::memory_order_acquire);
  }
  return a;
}

}  // namespace

const Ops& ops() { return *active()->table; }

Backend active_backend() { return active()->backend; }

void force_backend(Backend b) {
  static const Active forced_scalar{&scalar_ops(), Backend::scalar};
  if (b == Backend::scalar) {
    g_active.store(&forced_scalar, std::memory_order_release);
    return;
  }
  const Ops* t = avx2_ops();
  if (t == nullptr) throw std::runtime_error("force_backend: avx2 not available on this cpu");
  static const Active forced_avx2{t, Backend::avx2};
  g_active.store(&forced_avx2, std::memory_order_release);
}

}  // namespace eul::kernels
