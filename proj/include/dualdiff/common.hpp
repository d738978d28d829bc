#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dualdiff {

// Error taxonomy. Everything user-visible derives from std::runtime_error so
// the CLI can map categories onto exit codes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Raised when an operation produces NaN/Inf.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Broken noise schedule: non-monotone SNR or a degenerate gamma field.
struct ScheduleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG with derivable independent streams. A child stream is a
// pure function of the parent seed and the tag, never of consumption order,
// so parallel consumers stay reproducible regardless of scheduling.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    int uniform_int(int lo, int hi);       // inclusive bounds
    double gaussian();                     // standard normal
    void fill_gaussian(std::vector<double>& out);

    Rng child(uint64_t tag) const;
    Rng child(std::string_view tag) const;
    Rng child(uint64_t a, uint64_t b) const { return child(a).child(b); }
    Rng child(uint64_t a, uint64_t b, uint64_t c) const { return child(a).child(b).child(c); }

    uint64_t seed() const { return seed_; }

  private:
    uint64_t seed_ = 0;
    uint64_t state_ = 0;
    uint64_t next_u64();
};

// Worker-thread cap from DUALDIFF_THREADS (>= 1); defaults to the hardware
// concurrency when unset.
int thread_cap();

// Runs fn(0..n-1), possibly across threads (bounded by thread_cap()).
// fn must only write to its own slot of any shared output.
void parallel_for(int n, const std::function<void(int)>& fn);

// Locale-independent float/int text IO used for every CSV/TSV surface:
// shortest round-trip form, '.' decimal separator.
std::string format_double(double v);
double parse_double(std::string_view s);   // throws ParseError
long parse_long(std::string_view s);       // throws ParseError

}  // namespace dualdiff
