#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mebnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float32 array.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor vector(std::initializer_list<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // (c, h, w) access for rank-3 tensors.
    float& at(std::size_t c, std::size_t h, std::size_t w);
    float at(std::size_t c, std::size_t h, std::size_t w) const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

enum class RoundingMode { round_to_nearest_even, truncate };

// Signed fixed-point format: total_bits wide, integer_bits of which (sign
// included) sit left of the binary point.
struct QFormat {
    int total_bits = 16;
    int integer_bits = 8;
    RoundingMode mode = RoundingMode::round_to_nearest_even;
    bool saturating = true;

    int frac_bits() const noexcept { return total_bits - integer_bits; }
    double step() const noexcept;
    double max_value() const noexcept;
    double min_value() const noexcept;

    void validate() const;
    std::string to_string() const;

    friend bool operator==(const QFormat&, const QFormat&) = default;
};

bool is_supported_bitwidth(int bits) noexcept;

float quantize_value(float x, const QFormat& q) noexcept;
Tensor quantize(const Tensor& t, const QFormat& q);
void quantize_inplace(std::span<float> values, const QFormat& q) noexcept;

}  // namespace mebnn
