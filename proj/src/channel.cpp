#include "tdsim/channel.hpp"

#include <atomic>
#include <cmath>
#include <memory>

#include "tdsim/errors.hpp"
#include "tdsim/nn.hpp"

namespace tdsim {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ChannelConfig::validate() const {
  if (bandwidth < 1) throw ConfigError("channel bandwidth must be >= 1");
  if (!(power > 0.0)) throw ConfigError("channel power must be > 0");
  if (const auto* r = std::get_if<SandwichRange>(&snr); r && !(r->lo_db < r->hi_db)) {
    throw ConfigError("SNR range requires lo_db < hi_db");
  }
}

double snr_db_to_noise_var(double snr_db, double power) {
  if (!(power > 0.0)) throw ValidationError("power must be > 0");
  return power / std::pow(10.0, snr_db / 10.0);
}

namespace {
std::atomic<std::uint64_t> g_zero_rows{0};
}

std::uint64_t zero_power_rows() { return g_zero_rows.load(); }

Var power_normalize(const Var& x, double power) {
  if (x.shape().size() != 2) {
    throw DimensionError("power_normalize: expected [N,B], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], b = x.shape()[1];
  const double target = std::sqrt(power * static_cast<double>(b));
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor y = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < b; ++j) ss += y[r * b + j] * y[r * b + j];
    const double norm = std::sqrt(ss);
    (*norms)[r] = norm;
    if (norm == 0.0) {
      g_zero_rows.fetch_add(1);
      continue;
    }
    const double s = target / norm;
    for (std::size_t j = 0; j < b; ++j) y[r * b + j] *= s;
  }
  return make_op("power_normalize", std::move(y), {x}, [x, norms, n, b, target](const Tensor& g) {
    auto gx = grad_buffer(x).data();
    const auto xv = x.value().data();
    for (std::size_t r = 0; r < n; ++r) {
      const double norm = (*norms)[r];
      if (norm == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < b; ++j) dot += xv[r * b + j] * g[r * b + j];
      const double s = target / norm;
      const double proj = dot / (norm * norm);
      for (std::size_t j = 0; j < b; ++j) {
        gx[r * b + j] += s * (g[r * b + j] - proj * xv[r * b + j]);
      }
    }
  });
}

Var transmit(const Var& x, double noise_var, Rng& rng) {
  if (!(noise_var >= 0.0)) throw ValidationError("noise variance must be >= 0");
  Tensor z(x.shape(), 0.0);
  if (noise_var > 0.0) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(noise_var));
    for (auto& v : z.data()) v = gauss(rng);
  }
  return add_constant(x, z);
}

double sandwich_snr(std::uint64_t iteration, double lo_db, double hi_db, Rng& rng) {
  switch (iteration % 3) {
    case 0:
      return lo_db;
    case 1:
      return hi_db;
    default: {
      std::uniform_real_distribution<double> u(lo_db, hi_db);
      return u(rng);
    }
  }
}

}  // namespace tdsim
