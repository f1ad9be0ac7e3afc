#include "medforge/digest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <memory>
#include <stdexcept>
#include <vector>

namespace medforge {
namespace {

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("sha256: digest init failed");
        }
    }

    void update(std::string_view bytes) {
        if (EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()) != 1) {
            throw std::runtime_error("sha256: digest update failed");
        }
    }

    std::array<unsigned char, 32> finish() {
        std::array<unsigned char, 32> out{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1 || len != out.size()) {
            throw std::runtime_error("sha256: digest final failed");
        }
        return out;
    }

private:
    MdCtx ctx_;
};

std::string to_hex(std::span<const unsigned char> raw) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(raw.size() * 2);
    for (unsigned char b : raw) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0x0f]);
    }
    return out;
}

std::array<unsigned char, 32> hash_fields(std::span<const std::string_view> fields) {
    Sha256 h;
    for (std::string_view f : fields) {
        std::uint64_t n = f.size();
        std::array<unsigned char, 8> len{};
        for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(n >> (8 * i));
        h.update({reinterpret_cast<const char*>(len.data()), len.size()});
        h.update(f);
    }
    return h.finish();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes);
    auto raw = h.finish();
    return to_hex(raw);
}

std::string derive_id(std::span<const std::string_view> fields) {
    bool any = std::any_of(fields.begin(), fields.end(), [](std::string_view f) { return !f.empty(); });
    if (!any) throw std::invalid_argument("empty input");
    auto raw = hash_fields(fields);
    return to_hex(raw);
}

std::string derive_id(std::initializer_list<std::string_view> fields) {
    return derive_id(std::span<const std::string_view>(fields.begin(), fields.size()));
}

std::uint64_t derive_seed(std::initializer_list<std::string_view> fields) {
    auto raw = hash_fields(std::span<const std::string_view>(fields.begin(), fields.size()));
    std::uint64_t seed = 0;
    for (int i = 0; i < 8; ++i) seed |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
    return seed;
}

std::string base64_encode(std::string_view bytes) {
    if (bytes.empty()) return {};
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(bytes.data()),
                            static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == ' ') continue;
        clean.push_back(c);
    }
    if (clean.empty()) return {};
    if (clean.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
    std::size_t pad = 0;
    if (clean.back() == '=') ++pad;
    if (clean.size() >= 2 && clean[clean.size() - 2] == '=') ++pad;
    std::string out(clean.size() / 4 * 3, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(clean.data()),
                            static_cast<int>(clean.size()));
    if (n < 0) throw std::invalid_argument("base64: invalid character");
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

}  // namespace medforge
