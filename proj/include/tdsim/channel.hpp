#pragma once

#include <cstdint>
#include <random>
#include <variant>

#include "tdsim/tensor.hpp"

namespace tdsim {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-cell / per-stage seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

struct FixedDb {
  double db = 0.0;
};

struct SandwichRange {
  double lo_db = -10.0;
  double hi_db = 10.0;
};

using SnrSpec = std::variant<FixedDb, SandwichRange>;

struct ChannelConfig {
  int bandwidth = 64;  // channel uses per image
  double power = 1.0;  // average power budget P
  SnrSpec snr = SandwichRange{};

  void validate() const;
};

// sigma^2 = P / 10^(snr_db / 10)
double snr_db_to_noise_var(double snr_db, double power);

// Rescales each row of x [N,B] so that (1/B) sum x^2 == power. All-zero rows
// pass through unchanged and bump zero_power_rows().
Var power_normalize(const Var& x, double power);

// Number of all-zero rows seen by power_normalize since process start.
std::uint64_t zero_power_rows();

// y = x + z with z ~ N(0, noise_var) i.i.d.; z is a constant for backward.
Var transmit(const Var& x, double noise_var, Rng& rng);

// Cycle: lo_db, hi_db, U(lo_db, hi_db), repeated. rng is drawn only on the
// third step of each cycle.
double sandwich_snr(std::uint64_t iteration, double lo_db, double hi_db, Rng& rng);

}  // namespace tdsim
