#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "driftback/errors.hpp"

namespace driftback {

/// Dense row-major f64 tensor. Plain value type: copies copy the data.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count_of(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count_of(shape_) != data_.size())
            throw dim_error("tensor: shape/data length mismatch");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }

    std::size_t rows() const {
        require_rank2("rows");
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count_of(new_shape) != data_.size())
            throw dim_error("reshape: element count mismatch");
        return Tensor(std::move(new_shape), data_);
    }

    static std::size_t count_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    void require_rank2(const char* who) const {
        if (shape_.size() != 2) throw dim_error(std::string(who) + ": tensor is not rank 2");
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dim_error("tensor add: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dim_error("tensor sub: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw dim_error("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

/// C = A(n×k) · B(k×m). ikj order so the inner loop streams both C and B rows.
inline void matmul_into(Tensor& c, const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) throw dim_error("matmul: inner dimensions differ");
    if (c.rows() != n || c.cols() != m) throw dim_error("matmul: bad output shape");
    double* cd = c.data();
    const double* ad = a.data();
    const double* bd = b.data();
    std::memset(cd, 0, sizeof(double) * n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = ad + i * k;
        double* crow = cd + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    matmul_into(c, a, b);
    return c;
}

/// C = Aᵀ(k×n)ᵀ… i.e. C(k×m) = Aᵀ·B with A n×k, B n×m.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != n) throw dim_error("matmul_tn: row counts differ");
    Tensor c = Tensor::matrix(k, m);
    double* cd = c.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        const double* brow = b.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = cd + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// C(n×k) = A(n×m) · Bᵀ with B k×m.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
    if (b.cols() != m) throw dim_error("matmul_nt: column counts differ");
    Tensor c = Tensor::matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * m;
        double* crow = c.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* brow = b.data() + j * m;
            double s = 0.0;
            for (std::size_t p = 0; p < m; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// DBT1 binary tensor format: magic "DBT1", u32 rank, u32 dims[rank],
// little-endian f64 payload. Multi-tensor checkpoint files concatenate
// records; names live in the JSON sidecar.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, long& offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw parse_error("unexpected end of file reading u32", offset);
    offset += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is, long& offset) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw parse_error("unexpected end of file reading f64", offset);
    offset += 8;
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void write_tensor_record(std::ostream& os, const Tensor& t) {
    os.write("DBT1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(os, t[i]);
}

inline Tensor read_tensor_record(std::istream& is, long& offset) {
    char magic[4];
    is.read(magic, 4);
    if (!is) throw parse_error("unexpected end of file reading magic", offset);
    if (std::memcmp(magic, "DBT1", 4) != 0) throw parse_error("bad DBT1 magic", offset);
    offset += 4;
    std::uint32_t rank = detail::get_u32(is, offset);
    if (rank > 8) throw parse_error("implausible tensor rank", offset);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::get_u32(is, offset);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f64(is, offset);
    return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw config_error("cannot open for write: " + path);
    write_tensor_record(os, t);
    if (!os) throw config_error("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw config_error("cannot open: " + path);
    long offset = 0;
    return read_tensor_record(is, offset);
}

}  // namespace driftback
