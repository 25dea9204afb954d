// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace desplat {

inline void warn(const std::string& msg) {
    std::fprintf(stderr, "[desplat] warning: %s\n", msg.c_str());
}

// Global worker count for parallel sections. 0 = hardware concurrency.
inline std::atomic<int>& thread_count_slot() {
    static std::atomic<int> n{0};
    return n;
}

inline void set_thread_count(int n) { thread_count_slot().store(n < 0 ? 0 : n); }

inline int thread_count() {
    int n = thread_count_slot().load();
    if (n == 0) {
        unsigned hw = std::thread::hardware_concurrency();
        n = hw == 0 ? 1 : static_cast<int>(hw);
    }
    return n;
}

// Number of chunks [0,n) splits into for a given chunk size. The split is a
// function of n alone, never of the worker count, so per-chunk partial
// results can be reduced in chunk order and stay reproducible.
inline int64_t chunk_count(int64_t n, int64_t chunk) {
    return chunk <= 0 ? 0 : (n + chunk - 1) / chunk;
}

// Runs fn(begin, end, chunk_index) over [0,n) in fixed-size chunks.
// Chunks are claimed by workers in any order; fn must only write state
// owned by its chunk.
template <class F>
void parallel_chunks(int64_t n, int64_t chunk, F&& fn) {
    if (n <= 0) return;
    const int64_t nchunks = chunk_count(n, chunk);
    const int workers = std::min<int64_t>(thread_count(), nchunks);
    if (workers <= 1) {
        for (int64_t c = 0; c < nchunks; ++c)
            fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        return;
    }
    std::atomic<int64_t> next{0};
    auto body = [&] {
        for (;;) {
            const int64_t c = next.fetch_add(1);
            if (c >= nchunks) return;
            fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int i = 1; i < workers; ++i) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

// Seed derivation for independent per-item streams (splitmix64 step).
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// FNV-1a, used for cache keys and config hashes; stable across builds.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace desplat
