#pragma once

#include <array>
#include <cstdint>

namespace man {

// xoshiro256** seeded through splitmix64. The complete generator is the
// 32 bytes of state, which is what checkpoints serialize, so none of the
// distribution helpers may cache samples between calls.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double normal();                         // standard normal, one Box-Muller sample per call
    double truncated_normal(double stddev);  // resampled until |x| <= 2*stddev
    std::int64_t uniform_int(std::int64_t n);  // unbiased draw from [0, n), n > 0

    std::array<std::uint8_t, 32> state_bytes() const;
    void set_state_bytes(const std::array<std::uint8_t, 32>& bytes);

private:
    std::uint64_t s_[4];
};

}  // namespace man
