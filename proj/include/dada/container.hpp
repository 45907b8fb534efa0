#ifndef DADA_CONTAINER_HPP
#define DADA_CONTAINER_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/types.hpp"

namespace dada {

class FormatVersionError : public DataError {
public:
    using DataError::DataError;
};

class TruncatedFileError : public DataError {
public:
    using DataError::DataError;
};

class ChecksumError : public DataError {
public:
    using DataError::DataError;
};

inline constexpr const char* container_format_version = "1";

/// Named float32 tensor stored in a container.
struct Blob {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    bool operator==(const Blob&) const = default;
};

struct Container {
    std::string kind;  // "dataset" | "checkpoint"
    nlohmann::json manifest;
    std::vector<Blob> blobs;

    const Blob& blob(const std::string& name) const;
};

/// Layout: magic line, 8-byte little-endian header length, JSON header
/// (format_version, kind, manifest, blob directory), raw float32 LE payload,
/// trailing 4-byte crc32 of everything before it.
void write_container(const std::filesystem::path& path, const Container& c,
                     const std::string& format_version = container_format_version);

/// Checks run in order: magic, header completeness, format version, kind,
/// checksum, payload size.
Container read_container(const std::filesystem::path& path, const std::string& expected_kind);

template <typename Scalar>
Blob matrix_blob(std::string name, const Matrix<Scalar>& m) {
    Blob b{std::move(name), {m.rows(), m.cols()}, {}};
    b.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) b.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    return b;
}

template <typename Scalar>
void blob_to_matrix(const Blob& b, Matrix<Scalar>& m) {
    if (b.shape.size() != 2 || b.shape[0] != m.rows() || b.shape[1] != m.cols())
        throw ShapeError("blob " + b.name + " does not match its target shape");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(b.data[static_cast<std::size_t>(i)]);
}

}  // namespace dada

#endif  // DADA_CONTAINER_HPP
