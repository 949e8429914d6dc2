#pragma once

// Token stream wire format (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "MGVQ"
//   4       1     version (1)
//   5       2     G
//   7       4     K
//   11      2     grid_h
//   13      2     grid_w
//   15      2     orig_h
//   17      2     orig_w
//   19      ...   payload
//
// The payload holds G * grid_h * grid_w indices, group-major then row-major,
// each in ceil(log2 K) bits, most significant bit first, zero-padded to a
// whole byte.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mgvq/mgq.hpp"
#include "mgvq/trainer.hpp"

namespace mgvq {

class StreamError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::size_t kStreamHeaderBytes = 19;

struct StreamHeader {
    std::uint16_t groups = 0;
    std::uint32_t codebook_size = 0;
    std::uint16_t grid_h = 0, grid_w = 0;
    std::uint16_t orig_h = 0, orig_w = 0;

    bool operator==(const StreamHeader&) const = default;
};

struct TokenStream {
    StreamHeader header;
    TokenMap tokens;
};

// ceil(log2 K); 0 for K = 1.
unsigned bits_per_index(std::uint64_t codebook_size);
std::size_t payload_bytes(const StreamHeader& header);

std::vector<std::uint8_t> pack_indices(const TokenMap& tokens, std::uint32_t codebook_size);
TokenMap unpack_indices(std::span<const std::uint8_t> payload, const StreamHeader& header);

std::vector<std::uint8_t> serialize_stream(const TokenStream& stream);
TokenStream parse_stream(std::span<const std::uint8_t> bytes);

void write_stream(const std::filesystem::path& path, const TokenStream& stream);
TokenStream read_stream(const std::filesystem::path& path);

// Images whose sides are not multiples of D are center-cropped to the
// largest valid size; the original size is kept in the header.
TokenStream encode_image(const nd::Tensor& image, const Checkpoint& ckpt);
TokenStream encode_image_file(const std::filesystem::path& image_path, const Checkpoint& ckpt);

// Codebook lookup, optional nested mask, decode. keep defaults to G.
nd::Tensor decode_tokens(const TokenStream& stream, const Checkpoint& ckpt,
                         std::optional<std::size_t> keep = std::nullopt);

}  // namespace mgvq
