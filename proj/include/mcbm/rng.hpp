#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace mcbm {

// 64-bit FNV-1a; used to turn stream names into keys.
std::uint64_t fnv1a64(std::string_view text) noexcept;

// Counter-based generator: value i of a stream is a pure function of
// (key, i). Streams are derived from a master seed and a name, so data
// generation, initialisation and reparameterisation noise never share state.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t master_seed, std::string_view name) noexcept;

    RngStream substream(std::string_view name) const noexcept;

    std::uint64_t next_u64() noexcept;
    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Uniform integer on [0, n); n > 0.
    std::uint64_t below(std::uint64_t n) noexcept;
    double normal() noexcept;

    template <class T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_ = 0x853c49e6748fea9bULL;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng);

}  // namespace mcbm
