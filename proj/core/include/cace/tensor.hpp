#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cace {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration or incompatible options (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Bad or missing data / files (CLI exit code 3).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values, diverged training (CLI exit code 4).
struct NumericError : Error {
    using Error::Error;
};

// Incompatible tensor shapes; names the offending dimension.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

enum class DType : uint8_t { f64 = 0, f32 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::f64 ? "f64" : "f32"; }

struct Shape {
    long n = 0, c = 0, h = 0, w = 0;
    long numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense 4-D array, row-major (n, c, h, w). Values are kept finite; callers
// can assert that with check_finite().
class Tensor {
public:
    Tensor() = default;
    Tensor(long n, long c, long h, long w, DType dt = DType::f64);
    explicit Tensor(Shape s, DType dt = DType::f64) : Tensor(s.n, s.c, s.h, s.w, dt) {}

    static Tensor zeros(long n, long c, long h, long w, DType dt = DType::f64);
    static Tensor full(long n, long c, long h, long w, double v, DType dt = DType::f64);
    static Tensor from(long n, long c, long h, long w, std::vector<double> values);

    Shape shape() const { return shape_; }
    long n() const { return shape_.n; }
    long c() const { return shape_.c; }
    long h() const { return shape_.h; }
    long w() const { return shape_.w; }
    long numel() const { return shape_.numel(); }
    DType dtype() const { return dtype_; }
    bool empty() const { return shape_.numel() == 0; }

    long index(long n, long c, long h, long w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    double get(long i) const { return dtype_ == DType::f64 ? d64_[i] : double(d32_[i]); }
    void set(long i, double v) {
        if (dtype_ == DType::f64) d64_[i] = v; else d32_[i] = float(v);
    }
    double at(long n, long c, long h, long w) const { return get(index(n, c, h, w)); }
    void at(long n, long c, long h, long w, double v) { set(index(n, c, h, w), v); }

    template <class T> T* data();
    template <class T> const T* data() const;

    Tensor astype(DType dt) const;
    bool finite() const;
    void check_finite(const std::string& what) const;
    bool same_values(const Tensor& other) const;  // bit-exact after dtype match

    Tensor& operator+=(const Tensor& other);
    Tensor& scale(double s);

private:
    Shape shape_{};
    DType dtype_ = DType::f64;
    std::vector<double> d64_;
    std::vector<float> d32_;
};

template <> inline double* Tensor::data<double>() { return d64_.data(); }
template <> inline const double* Tensor::data<double>() const { return d64_.data(); }
template <> inline float* Tensor::data<float>() { return d32_.data(); }
template <> inline const float* Tensor::data<float>() const { return d32_.data(); }

// Convolution geometry. Output height = floor((h + 2*ph - dh*(kh-1) - 1)/sh) + 1,
// analogously for width. output_padding applies to transposed convolution only.
struct ConvSpec {
    long kh = 3, kw = 3;
    long sh = 1, sw = 1;
    long ph = 0, pw = 0;
    long dh = 1, dw = 1;
    long oph = 0, opw = 0;
    long in_channels = 1;
    long out_channels = 1;

    void validate() const;
    long out_h(long h) const { return (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1; }
    long out_w(long w) const { return (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1; }
    long tconv_out_h(long h) const { return (h - 1) * sh - 2 * ph + dh * (kh - 1) + 1 + oph; }
    long tconv_out_w(long w) const { return (w - 1) * sw - 2 * pw + dw * (kw - 1) + 1 + opw; }
};

void require(bool cond, const std::string& msg);

}  // namespace cace
