#pragma once

#include <cstdint>
#include <vector>

namespace deepclust {

// SplitMix64 finalizer. Stateless, platform-independent.
std::uint64_t mix64(std::uint64_t x);

// Deterministic keyed random stream. Streams are identified by a list of
// 64-bit key parts (seed, purpose tag, sample id, epoch, ...), so draws for
// one (sample, epoch) never depend on how many draws another stream made.
// This is what makes augmentation order-independent and restartable.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : state_(mix64(key ^ 0x9e3779b97f4a7c15ull)) {}

    static RngStream keyed(std::initializer_list<std::uint64_t> parts);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double next_double();

    double uniform(double lo, double hi);

    // Uniform integer in [0, n), rejection sampled (no modulo bias).
    std::uint64_t next_below(std::uint64_t n);

    // Standard normal via Box-Muller.
    double next_gaussian();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_gaussian_ = false;
    double spare_gaussian_ = 0.0;
};

// Purpose tags for keyed streams. Fixed constants: changing one invalidates
// reproducibility of existing runs.
namespace rng_tag {
inline constexpr std::uint64_t kInit = 0x01;
inline constexpr std::uint64_t kShuffle = 0x02;
inline constexpr std::uint64_t kAugment = 0x03;
inline constexpr std::uint64_t kPairDraw = 0x04;
inline constexpr std::uint64_t kSubsample = 0x05;
inline constexpr std::uint64_t kKMeans = 0x06;
}  // namespace rng_tag

}  // namespace deepclust
