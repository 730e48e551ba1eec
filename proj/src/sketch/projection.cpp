#include "driftline/sketch/projection.hpp"

#include <cmath>

#include "driftline/sketch/format.hpp"

namespace driftline::sketch {

RandomProjection::RandomProjection(std::uint32_t input_dim, std::uint32_t output_dim, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(output_dim), seed_(seed) {
  if (output_dim < 1 || output_dim >= input_dim) {
    throw Error(Errc::kDomain, "projection needs 1 <= output_dim < input_dim");
  }
}

int RandomProjection::entry(std::uint32_t row, std::uint32_t col) const {
  const std::uint64_t cell = static_cast<std::uint64_t>(row) * input_dim_ + col;
  switch (splitmix64(seed_ ^ splitmix64(cell)) % 6) {
    case 0: return 1;
    case 1: return -1;
    default: return 0;
  }
}

std::vector<double> RandomProjection::project(std::span<const double> x, ExecPolicy policy) const {
  if (x.size() != input_dim_) throw Error(Errc::kDomain, "projection input has wrong length");
  std::vector<double> out(output_dim_, 0.0);
  const double scale = std::sqrt(3.0 / static_cast<double>(output_dim_));
  const auto rows = static_cast<std::int64_t>(output_dim_);
  auto row_value = [&](std::uint32_t j) {
    double acc = 0.0;
    for (std::uint32_t i = 0; i < input_dim_; ++i) {
      const int e = entry(j, i);
      if (e > 0) {
        acc += x[i];
      } else if (e < 0) {
        acc -= x[i];
      }
    }
    return acc * scale;
  };
  if (policy == ExecPolicy::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < rows; ++j) out[j] = row_value(static_cast<std::uint32_t>(j));
  } else {
    for (std::int64_t j = 0; j < rows; ++j) out[j] = row_value(static_cast<std::uint32_t>(j));
  }
  return out;
}

Bytes RandomProjection::serialize() const {
  ByteWriter p;
  p.u32(input_dim_);
  p.u32(output_dim_);
  p.u64(seed_);
  return seal(kSketchMagic, static_cast<std::uint16_t>(Kind::kProjection), p.take(), {});
}

RandomProjection RandomProjection::deserialize(std::span<const std::uint8_t> data) {
  auto env = open_kind(Kind::kProjection, data);
  ByteReader p(env.params);
  const auto in = p.u32();
  const auto out = p.u32();
  return RandomProjection(in, out, p.u64());
}

}  // namespace driftline::sketch
