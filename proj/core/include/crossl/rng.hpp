#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace crossl {

// Deterministic splitmix64-based generator. Identical seed + identical call
// sequence gives an identical stream on every run and platform; no libstdc++
// distribution objects are used anywhere so streams are reproducible
// bit-for-bit. fork() derives independent streams for sub-tasks (per-epoch
// shuffles, per-batch masks, per-cell sweeps) so that consuming more or fewer
// draws in one stream never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                  // [0, 1), 53-bit resolution
    double normal();                   // standard normal, Box-Muller
    std::size_t uniform_int(std::size_t n); // [0, n), rejection sampled

    Rng fork(std::uint64_t salt) const;
    Rng fork(std::string_view tag) const;
    Rng fork(std::string_view tag, std::uint64_t salt) const;

    std::uint64_t seed() const { return seed_; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    // First `count` elements of a Fisher-Yates pass over [0, n): a uniform
    // sample without replacement.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t hash_str64(std::string_view s); // FNV-1a

} // namespace crossl
