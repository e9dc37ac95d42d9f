#include "cace/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cace {

std::string Shape::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

Tensor::Tensor(long n, long c, long h, long w, DType dt) : shape_{n, c, h, w}, dtype_(dt) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("tensor dimensions must all be >= 1, got " + shape_.str());
    if (dt == DType::f64)
        d64_.assign(size_t(numel()), 0.0);
    else
        d32_.assign(size_t(numel()), 0.0f);
}

Tensor Tensor::zeros(long n, long c, long h, long w, DType dt) { return Tensor(n, c, h, w, dt); }

Tensor Tensor::full(long n, long c, long h, long w, double v, DType dt) {
    Tensor t(n, c, h, w, dt);
    for (long i = 0; i < t.numel(); ++i) t.set(i, v);
    return t;
}

Tensor Tensor::from(long n, long c, long h, long w, std::vector<double> values) {
    Tensor t(n, c, h, w);
    if (long(values.size()) != t.numel())
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + t.shape().str());
    t.d64_ = std::move(values);
    return t;
}

Tensor Tensor::astype(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor out(shape_, dt);
    for (long i = 0; i < numel(); ++i) out.set(i, get(i));
    return out;
}

bool Tensor::finite() const {
    for (long i = 0; i < numel(); ++i)
        if (!std::isfinite(get(i))) return false;
    return true;
}

void Tensor::check_finite(const std::string& what) const {
    if (!finite()) throw NumericError("non-finite values in " + what);
}

bool Tensor::same_values(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
    for (long i = 0; i < numel(); ++i)
        if (get(i) != other.get(i)) return false;
    return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (shape_ != other.shape_)
        throw ShapeError("tensor += shape mismatch: " + shape_.str() + " vs " + other.shape().str());
    for (long i = 0; i < numel(); ++i) set(i, get(i) + other.get(i));
    return *this;
}

Tensor& Tensor::scale(double s) {
    for (long i = 0; i < numel(); ++i) set(i, get(i) * s);
    return *this;
}

void ConvSpec::validate() const {
    if (kh < 1 || kw < 1) throw ShapeError("conv kernel dims must be >= 1");
    if (sh < 1 || sw < 1) throw ShapeError("conv stride must be >= 1");
    if (ph < 0 || pw < 0) throw ShapeError("conv padding must be >= 0");
    if (dh < 1 || dw < 1) throw ShapeError("conv dilation must be >= 1");
    if (oph < 0 || opw < 0) throw ShapeError("conv output padding must be >= 0");
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv channel counts must be >= 1");
}

}  // namespace cace
