#include "mgvq/codec.hpp"

#include <fstream>
#include <limits>
#include <string>

#include "mgvq/image_io.hpp"

namespace mgvq {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'V', 'Q'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
}

std::uint16_t narrow16(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint16_t>::max())
        throw StreamError(std::string(what) + " " + std::to_string(v) + " does not fit the 16-bit header field");
    return static_cast<std::uint16_t>(v);
}

void check_against(const StreamHeader& h, const Checkpoint& ckpt) {
    if (h.groups != ckpt.config.groups || h.codebook_size != ckpt.config.codebook_size)
        throw StreamError("stream was encoded with G=" + std::to_string(h.groups) + ", K=" + std::to_string(h.codebook_size) +
                          " but the checkpoint has G=" + std::to_string(ckpt.config.groups) +
                          ", K=" + std::to_string(ckpt.config.codebook_size));
}

}  // namespace

unsigned bits_per_index(std::uint64_t codebook_size) {
    if (codebook_size == 0) throw StreamError("codebook size must be positive");
    unsigned bits = 0;
    while ((std::uint64_t{1} << bits) < codebook_size) ++bits;
    return bits;
}

std::size_t payload_bytes(const StreamHeader& h) {
    const std::size_t bits = std::size_t{h.groups} * h.grid_h * h.grid_w * bits_per_index(h.codebook_size);
    return (bits + 7) / 8;
}

std::vector<std::uint8_t> pack_indices(const TokenMap& tokens, std::uint32_t codebook_size) {
    tokens.validate(codebook_size);
    const unsigned width = bits_per_index(codebook_size);
    std::vector<std::uint8_t> out;
    std::uint8_t cur = 0;
    unsigned filled = 0;
    for (const auto& grid : tokens.indices)
        for (std::uint32_t idx : grid)
            for (unsigned b = width; b-- > 0;) {
                cur = static_cast<std::uint8_t>(cur << 1 | ((idx >> b) & 1u));
                if (++filled == 8) {
                    out.push_back(cur);
                    cur = 0;
                    filled = 0;
                }
            }
    if (filled) out.push_back(static_cast<std::uint8_t>(cur << (8 - filled)));
    return out;
}

TokenMap unpack_indices(std::span<const std::uint8_t> payload, const StreamHeader& h) {
    const std::size_t expected = payload_bytes(h);
    if (payload.size() != expected)
        throw StreamError("payload holds " + std::to_string(payload.size()) + " bytes, header implies " +
                          std::to_string(expected));
    const unsigned width = bits_per_index(h.codebook_size);
    const std::size_t sites = std::size_t{h.grid_h} * h.grid_w;
    TokenMap t{h.grid_h, h.grid_w, std::vector<std::vector<std::uint32_t>>(h.groups, std::vector<std::uint32_t>(sites))};
    std::size_t bit = 0;
    for (auto& grid : t.indices)
        for (auto& idx : grid) {
            std::uint32_t v = 0;
            for (unsigned b = 0; b < width; ++b, ++bit) v = v << 1 | ((payload[bit / 8] >> (7 - bit % 8)) & 1u);
            if (v >= h.codebook_size)
                throw StreamError("decoded index " + std::to_string(v) + " is not below K=" + std::to_string(h.codebook_size));
            idx = v;
        }
    return t;
}

std::vector<std::uint8_t> serialize_stream(const TokenStream& s) {
    const auto& h = s.header;
    if (s.tokens.groups() != h.groups || s.tokens.grid_h != h.grid_h || s.tokens.grid_w != h.grid_w)
        throw StreamError("token map does not match the stream header");
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.push_back(kStreamVersion);
    put_le(out, h.groups, 2);
    put_le(out, h.codebook_size, 4);
    put_le(out, h.grid_h, 2);
    put_le(out, h.grid_w, 2);
    put_le(out, h.orig_h, 2);
    put_le(out, h.orig_w, 2);
    const auto payload = pack_indices(s.tokens, h.codebook_size);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

TokenStream parse_stream(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kStreamHeaderBytes)
        throw StreamError("token stream truncated: " + std::to_string(bytes.size()) + " bytes, header needs " +
                          std::to_string(kStreamHeaderBytes));
    if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw StreamError("not a token stream: bad magic bytes");
    if (bytes[4] != kStreamVersion)
        throw StreamError("token stream version " + std::to_string(bytes[4]) + " is not supported (expected " +
                          std::to_string(kStreamVersion) + ")");
    TokenStream s;
    auto& h = s.header;
    h.groups = static_cast<std::uint16_t>(get_le(bytes.data() + 5, 2));
    h.codebook_size = static_cast<std::uint32_t>(get_le(bytes.data() + 7, 4));
    h.grid_h = static_cast<std::uint16_t>(get_le(bytes.data() + 11, 2));
    h.grid_w = static_cast<std::uint16_t>(get_le(bytes.data() + 13, 2));
    h.orig_h = static_cast<std::uint16_t>(get_le(bytes.data() + 15, 2));
    h.orig_w = static_cast<std::uint16_t>(get_le(bytes.data() + 17, 2));
    if (h.groups == 0 || h.codebook_size == 0 || h.grid_h == 0 || h.grid_w == 0)
        throw StreamError("token stream header has a zero extent");
    s.tokens = unpack_indices(bytes.subspan(kStreamHeaderBytes), h);
    return s;
}

void write_stream(const std::filesystem::path& path, const TokenStream& stream) {
    const auto bytes = serialize_stream(stream);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StreamError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw StreamError("write failed for " + path.string());
}

TokenStream read_stream(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StreamError("cannot open token stream " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_stream(bytes);
}

TokenStream encode_image(const nd::Tensor& image, const Checkpoint& ckpt) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw StreamError("encode_image: expected H x W x 3 image, got " + nd::shape_str(image.shape()));
    const std::size_t D = ckpt.config.model.downsample;
    const nd::Tensor cropped = center_crop_to_multiple(image, D);
    auto rec = reconstruct(ckpt, nd::reshape(cropped, {1, cropped.dim(0), cropped.dim(1), 3}));
    TokenStream s;
    s.header.groups = narrow16(ckpt.config.groups, "group count");
    s.header.codebook_size = static_cast<std::uint32_t>(ckpt.config.codebook_size);
    s.header.grid_h = narrow16(cropped.dim(0) / D, "grid height");
    s.header.grid_w = narrow16(cropped.dim(1) / D, "grid width");
    s.header.orig_h = narrow16(image.dim(0), "image height");
    s.header.orig_w = narrow16(image.dim(1), "image width");
    s.tokens = std::move(rec.tokens.front());
    return s;
}

TokenStream encode_image_file(const std::filesystem::path& image_path, const Checkpoint& ckpt) {
    return encode_image(read_png(image_path), ckpt);
}

nd::Tensor decode_tokens(const TokenStream& stream, const Checkpoint& ckpt, std::optional<std::size_t> keep) {
    check_against(stream.header, ckpt);
    nd::NoGradGuard no_grad;
    const auto& cfg = ckpt.config;
    const nd::Tensor z_q = lookup<float>(std::span<const TokenMap>(&stream.tokens, 1), ckpt.codebooks, false);
    const nd::Tensor masked = nested_mask(z_q, keep.value_or(cfg.groups), cfg.groups);
    return decode(masked, ckpt.params, cfg.model);
}

}  // namespace mgvq
