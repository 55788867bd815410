// Shared basics: error types, 3-vector geometry, deterministic RNG draws,
// number formatting for text files.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace modt {

// Malformed input data (files, configs). CLI maps this to exit code 2.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    bool operator==(const Vec3& o) const = default;

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    a = std::fmod(a + M_PI, two_pi);
    if (a < 0.0) a += two_pi;
    a -= M_PI;
    if (a >= M_PI) a = -M_PI;  // fmod edge
    return a;
}

// Deterministic uniform/normal draws built on raw engine output.
// std::uniform_real_distribution is not bit-reproducible across standard
// libraries, so draws that feed reproducible artifacts go through these.
template <class Engine>
double draw_unit(Engine& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

template <class Engine>
double draw_uniform(Engine& rng, double lo, double hi) {
    return lo + (hi - lo) * draw_unit(rng);
}

template <class Engine>
double draw_normal(Engine& rng, double sigma) {
    // Box-Muller; consumes two draws per call so sequences stay aligned.
    double u1 = draw_unit(rng);
    double u2 = draw_unit(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Shortest round-trippable decimal form, for lossless text files.
inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError(context + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

inline long parse_long(std::string_view s, const std::string& context) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError(context + ": bad integer '" + std::string(s) + "'");
    }
    return v;
}

// MODT_THREADS caps worker threads; unset or invalid falls back to 1.
inline int env_thread_cap() {
    const char* s = std::getenv("MODT_THREADS");
    if (s == nullptr) return 1;
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || v < 1) return 1;
    return static_cast<int>(std::min<long>(v, 256));
}

}  // namespace modt

#include <thread>

namespace modt {

// Index-parallel loop with per-index independent work; results keyed by index
// stay bitwise identical regardless of the thread count.
template <class Fn>
void parallel_for(int n, int max_threads, Fn fn) {
    int workers = std::min(std::max(max_threads, 1), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([=]() {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace modt
