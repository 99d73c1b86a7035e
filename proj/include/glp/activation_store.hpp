#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "glp/io.hpp"
#include "glp/matrix.hpp"
#include "glp/rng.hpp"

namespace glp {

// ---------------------------------------------------------------------------
// Activation file: header {magic "GLPA", version u32, d_act u32, layer_id u32,
// row_count u64} followed by row-major little-endian 32-bit float rows.
// Storage is 32-bit, compute is 64-bit.

inline constexpr char kActivationMagic[4] = {'G', 'L', 'P', 'A'};
inline constexpr std::uint32_t kActivationVersion = 1;

struct ActivationFileData {
    std::uint32_t layer_id = 0;
    Matrix acts;
};

inline void write_activation_file(const std::string& path, const Matrix& acts,
                                  std::uint32_t layer_id) {
    std::ofstream out = open_for_write(path);
    write_magic(out, kActivationMagic);
    write_pod(out, kActivationVersion);
    write_pod(out, static_cast<std::uint32_t>(acts.cols));
    write_pod(out, layer_id);
    write_pod(out, static_cast<std::uint64_t>(acts.rows));
    std::vector<float> row(acts.cols);
    for (std::size_t i = 0; i < acts.rows; ++i) {
        const double* src = acts.row(i);
        for (std::size_t j = 0; j < acts.cols; ++j) row[j] = static_cast<float>(src[j]);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline ActivationFileData read_activation_file(const std::string& path) {
    std::ifstream in = open_for_read(path);
    expect_magic(in, kActivationMagic, "activation file");
    const auto version = read_pod<std::uint32_t>(in, "activation version");
    if (version != kActivationVersion)
        throw FileFormatError(FileFormatError::Kind::BadVersion,
                              "unsupported activation file version " +
                                  std::to_string(version));
    const auto d_act = read_pod<std::uint32_t>(in, "activation d_act");
    ActivationFileData out;
    out.layer_id = read_pod<std::uint32_t>(in, "activation layer id");
    const auto rows = read_pod<std::uint64_t>(in, "activation row count");
    out.acts = Matrix(static_cast<std::size_t>(rows), d_act);
    std::vector<float> row(d_act);
    for (std::uint64_t i = 0; i < rows; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in)
            throw FileFormatError(FileFormatError::Kind::Truncated,
                                  "truncated payload in activation file");
        double* dst = out.acts.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < d_act; ++j) dst[j] = row[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-dimension standardizer bridging raw activation space and model space.

struct Scaler {
    Matrix mean;  // 1 x d
    Matrix std;   // 1 x d, entries >= 1e-6
    std::uint64_t fit_count = 0;

    Matrix apply(const Matrix& x) const {
        GLP_REQUIRE(x.cols == mean.cols, "Scaler::apply: dimension mismatch");
        Matrix y = x;
        for (std::size_t i = 0; i < y.rows; ++i) {
            double* r = y.row(i);
            for (std::size_t j = 0; j < y.cols; ++j)
                r[j] = (r[j] - mean.data[j]) / std.data[j];
        }
        return y;
    }

    Matrix invert(const Matrix& x) const {
        GLP_REQUIRE(x.cols == mean.cols, "Scaler::invert: dimension mismatch");
        Matrix y = x;
        for (std::size_t i = 0; i < y.rows; ++i) {
            double* r = y.row(i);
            for (std::size_t j = 0; j < y.cols; ++j)
                r[j] = r[j] * std.data[j] + mean.data[j];
        }
        return y;
    }
};

inline constexpr double kScalerStdFloor = 1e-6;

/// Per-dimension mean and population std (divide by n), floored at 1e-6 so
/// constant columns standardize to zero instead of dividing by zero.
inline Scaler fit_scaler(const Matrix& acts) {
    GLP_REQUIRE(acts.rows >= 2, "fit_scaler: need at least 2 rows");
    Scaler s;
    s.mean = Matrix(1, acts.cols);
    s.std = Matrix(1, acts.cols);
    s.fit_count = acts.rows;
    const double inv_n = 1.0 / static_cast<double>(acts.rows);
    for (std::size_t i = 0; i < acts.rows; ++i) {
        const double* r = acts.row(i);
        for (std::size_t j = 0; j < acts.cols; ++j) s.mean.data[j] += r[j];
    }
    for (std::size_t j = 0; j < acts.cols; ++j) s.mean.data[j] *= inv_n;
    for (std::size_t i = 0; i < acts.rows; ++i) {
        const double* r = acts.row(i);
        for (std::size_t j = 0; j < acts.cols; ++j) {
            const double d = r[j] - s.mean.data[j];
            s.std.data[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < acts.cols; ++j)
        s.std.data[j] = std::max(kScalerStdFloor, std::sqrt(s.std.data[j] * inv_n));
    return s;
}

inline void save_scaler(const std::string& path, const Scaler& s) {
    std::ofstream out = open_for_write(path);
    const char magic[4] = {'G', 'L', 'P', 'S'};
    write_magic(out, magic);
    write_pod(out, kActivationVersion);
    write_pod(out, static_cast<std::uint64_t>(s.mean.cols));
    write_pod(out, s.fit_count);
    out.write(reinterpret_cast<const char*>(s.mean.data.data()),
              static_cast<std::streamsize>(s.mean.cols * sizeof(double)));
    out.write(reinterpret_cast<const char*>(s.std.data.data()),
              static_cast<std::streamsize>(s.std.cols * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Scaler load_scaler(const std::string& path) {
    std::ifstream in = open_for_read(path);
    const char magic[4] = {'G', 'L', 'P', 'S'};
    expect_magic(in, magic, "scaler file");
    const auto version = read_pod<std::uint32_t>(in, "scaler version");
    if (version != kActivationVersion)
        throw FileFormatError(FileFormatError::Kind::BadVersion,
                              "unsupported scaler file version");
    const auto d = read_pod<std::uint64_t>(in, "scaler dimension");
    Scaler s;
    s.fit_count = read_pod<std::uint64_t>(in, "scaler fit count");
    s.mean = Matrix(1, static_cast<std::size_t>(d));
    s.std = Matrix(1, static_cast<std::size_t>(d));
    in.read(reinterpret_cast<char*>(s.mean.data.data()),
            static_cast<std::streamsize>(d * sizeof(double)));
    in.read(reinterpret_cast<char*>(s.std.data.data()),
            static_cast<std::streamsize>(d * sizeof(double)));
    if (!in)
        throw FileFormatError(FileFormatError::Kind::Truncated, "truncated scaler file");
    return s;
}

// ---------------------------------------------------------------------------
// Bounded producer-consumer row buffer. One producer, one consumer. Rows in
// the buffer form an unordered pool; the consumer draws uniformly without
// replacement, which is the shuffle-within-buffer delivery order.

class RingBuffer {
  public:
    RingBuffer(std::size_t capacity_rows, std::size_t d)
        : capacity_(capacity_rows), d_(d), storage_(capacity_rows * d) {
        GLP_REQUIRE(capacity_rows >= 1, "RingBuffer: capacity must be >= 1");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return d_; }

    /// Producer: blocks while full. Returns false once the consumer has
    /// abandoned the stream, so the producer can stop early.
    bool push_row(const double* row) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return fill_ < capacity_ || abandoned_; });
        if (abandoned_) return false;
        std::copy(row, row + d_, storage_.data() + fill_ * d_);
        ++fill_;
        lock.unlock();
        not_empty_.notify_one();
        return true;
    }

    /// Producer: no more rows will arrive.
    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        not_empty_.notify_all();
    }

    /// Producer: propagate a failure; consumer throws on next pop.
    void fail(const std::string& message) {
        {
            std::lock_guard lock(mu_);
            error_ = message.empty() ? "producer failed" : message;
            closed_ = true;
        }
        not_empty_.notify_all();
    }

    /// Consumer: unblocks a producer that is still pushing; used on early
    /// teardown so join cannot deadlock.
    void abandon() {
        {
            std::lock_guard lock(mu_);
            abandoned_ = true;
        }
        not_full_.notify_all();
    }

    /// Consumer: pops up to `n` rows drawn uniformly from the pool. Blocks
    /// until n rows are buffered or the producer closed; after close, drains
    /// the remainder. Returns a 0-row matrix at end of stream.
    Matrix pop_batch(std::size_t n, Rng& rng) {
        GLP_REQUIRE(n >= 1, "RingBuffer: batch size must be >= 1");
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return fill_ >= n || closed_; });
        if (!error_.empty()) throw std::runtime_error("activation stream: " + error_);
        const std::size_t k = std::min(n, fill_);
        Matrix batch(k, d_);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = static_cast<std::size_t>(rng.below(fill_));
            std::copy(storage_.data() + j * d_, storage_.data() + (j + 1) * d_,
                      batch.row(i));
            if (j != fill_ - 1)
                std::copy(storage_.data() + (fill_ - 1) * d_,
                          storage_.data() + fill_ * d_, storage_.data() + j * d_);
            --fill_;
        }
        lock.unlock();
        not_full_.notify_one();
        return batch;
    }

  private:
    std::size_t capacity_;
    std::size_t d_;
    std::vector<double> storage_;
    std::size_t fill_ = 0;
    bool closed_ = false;
    bool abandoned_ = false;
    std::string error_;
    std::mutex mu_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
};

// ---------------------------------------------------------------------------
// Streaming pipeline: a producer thread pulls per-document hook activations
// from `next_doc` and pushes every position except the first (the sequence
// start carries no usable context); the consumer side hands out
// shuffled-within-buffer batches.

class ActivationStream {
  public:
    /// `next_doc` fills one document's activations (positions x d) and
    /// returns false when exhausted.
    using DocFn = std::function<bool(Matrix&)>;

    ActivationStream(DocFn next_doc, std::size_t d, std::size_t buffer_capacity,
                     std::size_t batch_size, std::uint64_t seed)
        : buffer_(buffer_capacity, d), batch_size_(batch_size), rng_(seed) {
        GLP_REQUIRE(buffer_capacity >= batch_size, "ActivationStream: capacity < batch");
        producer_ = std::thread([this, fn = std::move(next_doc)]() mutable {
            try {
                Matrix doc;
                while (fn(doc)) {
                    GLP_REQUIRE(doc.cols == buffer_.dim(),
                                "ActivationStream: document dimension mismatch");
                    for (std::size_t i = 1; i < doc.rows; ++i)
                        if (!buffer_.push_row(doc.row(i))) return;
                }
                buffer_.close();
            } catch (const std::exception& e) {
                buffer_.fail(e.what());
            } catch (...) {
                buffer_.fail("unknown producer error");
            }
        });
    }

    ~ActivationStream() {
        buffer_.abandon();
        if (producer_.joinable()) producer_.join();
    }

    ActivationStream(const ActivationStream&) = delete;
    ActivationStream& operator=(const ActivationStream&) = delete;

    /// Next shuffled batch; 0 rows at end of stream; throws if the producer
    /// failed.
    Matrix next_batch() { return buffer_.pop_batch(batch_size_, rng_); }

  private:
    RingBuffer buffer_;
    std::size_t batch_size_;
    Rng rng_;
    std::thread producer_;
};

/// Deterministic row split for train/validation: shuffles row indices with
/// the seed, then carves off the last `val_fraction` as validation.
inline std::pair<Matrix, Matrix> split_rows(const Matrix& acts, double val_fraction,
                                            std::uint64_t seed) {
    GLP_REQUIRE(val_fraction >= 0.0 && val_fraction < 1.0,
                "split_rows: val_fraction must be in [0,1)");
    std::vector<std::size_t> idx(acts.rows);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(val_fraction * static_cast<double>(acts.rows)));
    const std::size_t n_train = acts.rows - n_val;
    Matrix train(n_train, acts.cols), val(n_val, acts.cols);
    for (std::size_t i = 0; i < n_train; ++i)
        std::copy(acts.row(idx[i]), acts.row(idx[i]) + acts.cols, train.row(i));
    for (std::size_t i = 0; i < n_val; ++i)
        std::copy(acts.row(idx[n_train + i]), acts.row(idx[n_train + i]) + acts.cols,
                  val.row(i));
    return {std::move(train), std::move(val)};
}

}  // namespace glp
