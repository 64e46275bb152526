#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bitraj/common.hpp"
#include "bitraj/digest.hpp"
#include "bitraj/tensor.hpp"

namespace bitraj {

// Shared on-disk container: 4-byte magic, 1-byte version, 4-byte LE JSON
// length, UTF-8 JSON metadata, then the tensor blocks as little-endian
// IEEE-754 doubles, row-major, in metadata order. The metadata always gets
// a "blocks" array (name/rows/cols) and a "payload_digest" over the raw
// block bytes.
inline constexpr std::uint8_t kContainerVersion = 1;

struct NamedBlock {
    std::string name;
    Tensor data;
};

namespace detail {

inline void append_le_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::string payload_bytes(const std::vector<NamedBlock>& blocks) {
    std::string payload;
    std::size_t total = 0;
    for (const auto& b : blocks) total += b.data.size() * sizeof(double);
    payload.reserve(total);
    for (const auto& b : blocks) {
        const auto* p = reinterpret_cast<const char*>(b.data.data().data());
        payload.append(p, b.data.size() * sizeof(double));
    }
    return payload;
}

} // namespace detail

inline void write_container(const std::filesystem::path& path, std::string_view magic,
                            nlohmann::json meta, std::vector<NamedBlock> blocks) {
    if (magic.size() != 4) throw Error(Errc::logic, "container magic must be 4 bytes");

    nlohmann::json blocks_meta = nlohmann::json::array();
    for (const auto& b : blocks)
        blocks_meta.push_back({{"name", b.name}, {"rows", b.data.rows()}, {"cols", b.data.cols()}});
    meta["blocks"] = std::move(blocks_meta);

    const std::string payload = detail::payload_bytes(blocks);
    meta["payload_digest"] = digest_hex(payload);

    const std::string meta_str = meta.dump();
    if (meta_str.size() > 0xFFFFFFFFu)
        throw Error(Errc::logic, "container metadata too large");

    std::string out;
    out.append(magic.data(), 4);
    out.push_back(static_cast<char>(kContainerVersion));
    detail::append_le_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    out += payload;

    // write-temp-then-rename keeps concurrent readers away from partial files
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataFormatError("cannot open for writing: " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataFormatError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

struct Container {
    nlohmann::json meta;
    std::vector<NamedBlock> blocks;

    const NamedBlock& block(std::string_view name) const {
        for (const auto& b : blocks)
            if (b.name == name) return b;
        throw DataFormatError("container has no block named '" + std::string(name) + "'");
    }
};

inline Container read_container(const std::filesystem::path& path, std::string_view expect_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataFormatError("cannot open: " + path.string());
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (raw.size() < 9) throw TruncatedError("container shorter than header: " + path.string());
    if (raw.compare(0, 4, expect_magic.data(), 4) != 0)
        throw BadMagicError("bad magic in " + path.string() + ": expected '" +
                            std::string(expect_magic) + "', got '" + raw.substr(0, 4) + "'");
    const auto version = static_cast<std::uint8_t>(raw[4]);
    if (version != kContainerVersion)
        throw BadVersionError("unsupported container version " + std::to_string(version) +
                              " in " + path.string());

    std::uint32_t meta_len = 0;
    for (int i = 0; i < 4; ++i)
        meta_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[5 + i])) << (8 * i);
    if (raw.size() < 9 + static_cast<std::size_t>(meta_len))
        throw TruncatedError("metadata truncated in " + path.string());

    Container c;
    try {
        c.meta = nlohmann::json::parse(raw.substr(9, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataFormatError("bad metadata JSON in " + path.string() + ": " + e.what());
    }
    if (!c.meta.contains("blocks") || !c.meta["blocks"].is_array())
        throw DataFormatError("metadata missing blocks array in " + path.string());

    std::size_t off = 9 + meta_len;
    const std::size_t payload_off = off;
    for (const auto& bm : c.meta["blocks"]) {
        NamedBlock b;
        b.name = bm.at("name").get<std::string>();
        const auto rows = bm.at("rows").get<std::size_t>();
        const auto cols = bm.at("cols").get<std::size_t>();
        const std::size_t nbytes = rows * cols * sizeof(double);
        if (off + nbytes > raw.size())
            throw TruncatedError("payload truncated in " + path.string() + " at block '" +
                                 b.name + "'");
        std::vector<double> vals(rows * cols);
        std::memcpy(vals.data(), raw.data() + off, nbytes);
        b.data = Tensor(rows, cols, std::move(vals));
        off += nbytes;
        c.blocks.push_back(std::move(b));
    }
    if (off != raw.size())
        throw DataFormatError("trailing bytes after payload in " + path.string());

    const std::string digest = digest_hex(raw.data() + payload_off, raw.size() - payload_off);
    const std::string expected = c.meta.value("payload_digest", "");
    if (digest != expected)
        throw DigestMismatchError("payload digest mismatch in " + path.string() + ": stored " +
                                  expected + ", computed " + digest);
    return c;
}

} // namespace bitraj
