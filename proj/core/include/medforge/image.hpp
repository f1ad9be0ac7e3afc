#pragma once

// Byte-level image handling. Only binary PPM (P6) is fully decoded; PNG and
// JPEG are recognised by signature so that real corpora can flow through the
// content store and HTTP providers untouched.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medforge {

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ImageFormat : std::uint8_t { Png, Jpeg, Ppm, Unknown };

ImageFormat sniff_format(std::string_view bytes);
std::string_view extension_for(ImageFormat f);  // "png", "jpg", "ppm", "bin"
std::string_view mime_type_for(ImageFormat f);

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB, 3 bytes per pixel

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

RgbImage decode_ppm(std::string_view bytes);
std::string encode_ppm(const RgbImage& img);

// Throws DecodeError unless the bytes look like a supported, non-truncated image.
void check_decodable(std::string_view bytes);

}  // namespace medforge
