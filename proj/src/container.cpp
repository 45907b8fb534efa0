#include "dada/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace dada {
namespace {

constexpr char magic[] = "DADA-CONTAINER\n";
constexpr std::size_t magic_size = sizeof(magic) - 1;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::uint32_t crc_of(const std::string& bytes, std::size_t length) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < length) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(length - done, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
void append_raw(std::string& out, const T& value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T read_raw(const std::string& in, std::size_t offset) {
    T value;
    std::memcpy(&value, in.data() + offset, sizeof(T));
    return value;
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto s : shape) {
        if (s < 0) throw DataError("negative blob dimension");
        n *= s;
    }
    return n;
}

}  // namespace

const Blob& Container::blob(const std::string& name) const {
    for (const auto& b : blobs)
        if (b.name == name) return b;
    throw DataError("container has no blob named '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& c, const std::string& format_version) {
    nlohmann::json directory = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& b : c.blobs) {
        if (element_count(b.shape) != static_cast<std::int64_t>(b.data.size()))
            throw ShapeError("blob " + b.name + ": shape does not match data length");
        directory.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
        offset += b.data.size() * sizeof(float);
    }
    const nlohmann::json header{{"format_version", format_version},
                                {"kind", c.kind},
                                {"manifest", c.manifest},
                                {"blobs", directory},
                                {"payload_bytes", offset}};
    const std::string header_text = header.dump();

    std::string out(magic, magic_size);
    append_raw<std::uint64_t>(out, header_text.size());
    out += header_text;
    out.reserve(out.size() + offset + 4);
    for (const auto& b : c.blobs) out.append(reinterpret_cast<const char*>(b.data.data()), b.data.size() * sizeof(float));
    append_raw<std::uint32_t>(out, crc_of(out, out.size()));

    const auto tmp = std::filesystem::path(path.string() + ".partial");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path, const std::string& expected_kind) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < magic_size || bytes.compare(0, magic_size, magic) != 0)
        throw DataError(path.string() + " is not a dada container");
    if (bytes.size() < magic_size + 8) throw TruncatedFileError(path.string() + ": truncated before header");
    const auto header_size = read_raw<std::uint64_t>(bytes, magic_size);
    const std::size_t header_begin = magic_size + 8;
    if (bytes.size() < header_begin + header_size) throw TruncatedFileError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(header_begin, header_size));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": unreadable header: " + e.what());
    }
    const std::string version = header.value("format_version", "");
    if (version != container_format_version)
        throw FormatVersionError(path.string() + ": format version '" + version + "', expected '" +
                                 container_format_version + "'");
    if (header.value("kind", "") != expected_kind)
        throw DataError(path.string() + ": holds a " + header.value("kind", "?") + ", expected a " + expected_kind);

    if (bytes.size() < header_begin + header_size + 4) throw ChecksumError(path.string() + ": checksum missing");
    const std::size_t body = bytes.size() - 4;
    if (read_raw<std::uint32_t>(bytes, body) != crc_of(bytes, body))
        throw ChecksumError(path.string() + ": checksum mismatch (file corrupt or truncated)");

    const std::size_t payload_begin = header_begin + header_size;
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (body - payload_begin != payload_bytes) throw DataError(path.string() + ": payload size disagrees with header");

    Container c{header.at("kind").get<std::string>(), header.at("manifest"), {}};
    for (const auto& entry : header.at("blobs")) {
        Blob b{entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<std::int64_t>>(), {}};
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = static_cast<std::size_t>(element_count(b.shape));
        if (offset + count * sizeof(float) > payload_bytes) throw DataError(path.string() + ": blob overruns payload");
        b.data.resize(count);
        std::memcpy(b.data.data(), bytes.data() + payload_begin + offset, count * sizeof(float));
        c.blobs.push_back(std::move(b));
    }
    return c;
}

}  // namespace dada
