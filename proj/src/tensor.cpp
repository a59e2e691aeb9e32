#include "mebnn/tensor.hpp"

#include "mebnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace mebnn {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape)
{
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape))
    , data_(shape_numel(shape_), fill)
{
    if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " has a zero extent");
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape))
    , data_(std::move(data))
{
    if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " has a zero extent");
    if (data_.size() != shape_numel(shape_))
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape "
                         + shape_to_string(shape_));
}

Tensor Tensor::vector(std::initializer_list<float> values)
{
    return Tensor({values.size()}, std::vector<float>(values));
}

float& Tensor::at(std::size_t c, std::size_t h, std::size_t w)
{
    return data_[(c * shape_[1] + h) * shape_[2] + w];
}

float Tensor::at(std::size_t c, std::size_t h, std::size_t w) const
{
    return data_[(c * shape_[1] + h) * shape_[2] + w];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool is_supported_bitwidth(int bits) noexcept
{
    return bits == 4 || bits == 6 || bits == 8 || bits == 16;
}

double QFormat::step() const noexcept
{
    return std::ldexp(1.0, -frac_bits());
}

double QFormat::max_value() const noexcept
{
    return (std::ldexp(1.0, total_bits - 1) - 1.0) * step();
}

double QFormat::min_value() const noexcept
{
    return -std::ldexp(1.0, total_bits - 1) * step();
}

void QFormat::validate() const
{
    if (!is_supported_bitwidth(total_bits))
        throw InvalidArgument("fixed-point total_bits must be one of 4, 6, 8, 16 (got "
                              + std::to_string(total_bits) + ")");
    if (integer_bits < 1 || integer_bits > total_bits)
        throw InvalidArgument("fixed-point integer_bits must lie in [1, total_bits] (got "
                              + std::to_string(integer_bits) + ")");
}

std::string QFormat::to_string() const
{
    std::string s = "Q" + std::to_string(integer_bits) + "." + std::to_string(frac_bits());
    s += mode == RoundingMode::truncate ? ",trn" : ",rnd";
    s += saturating ? ",sat" : ",wrap";
    return s;
}

float quantize_value(float x, const QFormat& q) noexcept
{
    const double scaled = std::ldexp(static_cast<double>(x), q.frac_bits());
    double code = q.mode == RoundingMode::truncate ? std::floor(scaled) : std::nearbyint(scaled);
    const double lo = -std::ldexp(1.0, q.total_bits - 1);
    const double hi = std::ldexp(1.0, q.total_bits - 1) - 1.0;
    if (q.saturating) {
        code = std::clamp(code, lo, hi);
    } else {
        // two's complement wrap-around
        const double span = std::ldexp(1.0, q.total_bits);
        code = std::fmod(code - lo, span);
        if (code < 0)
            code += span;
        code += lo;
    }
    return static_cast<float>(std::ldexp(code, -q.frac_bits()));
}

void quantize_inplace(std::span<float> values, const QFormat& q) noexcept
{
    for (auto& v : values)
        v = quantize_value(v, q);
}

Tensor quantize(const Tensor& t, const QFormat& q)
{
    Tensor out = t;
    quantize_inplace(out.data(), q);
    return out;
}

}  // namespace mebnn
