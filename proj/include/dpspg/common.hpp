#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dpspg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A soft prompt is an M x d_tok matrix of context token embeddings.
using PromptVector = Matrix;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto process exit codes.
// ---------------------------------------------------------------------------

struct InvalidParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidStateError : std::logic_error {
    using std::logic_error::logic_error;
};

struct NumericFailureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingFailureError : std::runtime_error {
    TrainingFailureError(const std::string& msg, int epoch_index)
        : std::runtime_error(msg + " (epoch " + std::to_string(epoch_index) + ")"),
          epoch(epoch_index) {}
    int epoch;
};

struct StageOrderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContaminationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw NumericFailureError(std::string("non-finite values in ") + what);
    }
}

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 has a pinned sequence, but the standard
// distributions do not, so gaussians are drawn via Box-Muller on raw uniforms.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                m(r, c) = scale * gaussian();
            }
        }
        return m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    // xorshift-mixed splitmix64; full period, trivially reproducible
    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derives independent stream seeds from a run seed and a role label, so that
// e.g. stage-1 batching and generator init never share a stream.
std::uint64_t derive_seed(std::uint64_t base, const std::string& role, std::uint64_t index = 0);

// FNV-1a over bytes; used for config hashes and artifact stamps.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s);
std::string to_hex(std::uint64_t v);

// Shortest round-trip decimal formatting for CSV output (deterministic bytes).
std::string fmt_double(double v);

}  // namespace dpspg
