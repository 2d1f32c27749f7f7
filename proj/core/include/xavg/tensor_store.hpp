#ifndef XAVG_TENSOR_STORE_HPP
#define XAVG_TENSOR_STORE_HPP

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xavg/errors.hpp"

namespace xavg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts are unsupported");

/// Element types stored in checkpoint files. F32/F64 are the floating
/// kinds that participate in averaging; I64 is carried along unchanged.
enum class Dtype { F32, F64, I64 };

constexpr std::size_t dtype_width(Dtype d) {
    switch (d) {
        case Dtype::F32: return 4;
        case Dtype::F64: return 8;
        case Dtype::I64: return 8;
    }
    return 0;
}

constexpr bool dtype_is_floating(Dtype d) { return d != Dtype::I64; }

std::string_view dtype_name(Dtype d);
Dtype dtype_from_name(std::string_view name);  // throws MalformedHeaderError

/// One entry of a checkpoint header. byte_range is half-open and relative
/// to the start of the data region.
struct TensorSpec {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<std::uint64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;

    std::uint64_t numel() const;
    std::uint64_t byte_length() const { return numel() * dtype_width(dtype); }
};

/// Typed n-dimensional buffer. Bytes are held in file encoding
/// (little-endian), so round trips are bitwise by construction.
class TensorData {
public:
    TensorData() = default;
    TensorData(Dtype dtype, std::vector<std::uint64_t> shape, std::vector<std::byte> raw);

    static TensorData from_f32(std::vector<std::uint64_t> shape, std::span<const float> values);
    static TensorData from_f64(std::vector<std::uint64_t> shape, std::span<const double> values);
    static TensorData from_i64(std::vector<std::uint64_t> shape, std::span<const std::int64_t> values);

    Dtype dtype() const { return dtype_; }
    const std::vector<std::uint64_t>& shape() const { return shape_; }
    std::uint64_t numel() const;
    const std::vector<std::byte>& raw() const { return raw_; }

    std::span<const float> as_f32() const;
    std::span<const double> as_f64() const;
    std::span<const std::int64_t> as_i64() const;

    /// Element at flat index widened to double (floating dtypes only).
    double element_as_double(std::size_t i) const;

    bool bitwise_equal(const TensorData& other) const;

private:
    Dtype dtype_ = Dtype::F32;
    std::vector<std::uint64_t> shape_;
    std::vector<std::byte> raw_;
};

/// In-memory checkpoint: named tensors in lexicographic order plus
/// optional string metadata.
class Checkpoint {
public:
    void add(std::string name, TensorData tensor);  // throws ValidationError on duplicate
    void set_metadata(std::string key, std::string value);

    bool contains(const std::string& name) const { return tensors_.find(name) != tensors_.end(); }
    const TensorData& tensor(const std::string& name) const;  // throws UnknownTensorError
    std::size_t size() const { return tensors_.size(); }

    const std::map<std::string, TensorData>& tensors() const { return tensors_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

private:
    std::map<std::string, TensorData> tensors_;
    std::map<std::string, std::string> metadata_;
};

/// Handle to a checkpoint that reads tensor payloads on demand. Opening
/// validates the header but touches no tensor data. Immutable after open;
/// concurrent read_tensor calls are safe (each opens its own stream).
class CheckpointRef {
public:
    static CheckpointRef from_file(const std::filesystem::path& path);
    static CheckpointRef from_memory(std::shared_ptr<const Checkpoint> cp, std::string label = "<memory>");

    const std::vector<TensorSpec>& specs() const { return specs_; }
    const TensorSpec& spec(const std::string& name) const;  // throws UnknownTensorError
    bool contains(const std::string& name) const;
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    const std::string& source() const { return source_; }

    TensorData read(const std::string& name) const;
    Checkpoint load_all() const;

private:
    CheckpointRef() = default;

    std::string source_;
    std::filesystem::path path_;                    // set for file-backed refs
    std::shared_ptr<const Checkpoint> memory_;      // set for in-memory refs
    std::uint64_t data_begin_ = 0;                  // absolute file offset of the data region
    std::vector<TensorSpec> specs_;                 // lexicographic by name
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

/// Serializes a checkpoint. Layout: 8-byte little-endian header length N,
/// then N bytes of UTF-8 JSON mapping tensor names to
/// {"dtype", "shape", "data_offsets"} (plus optional "__metadata__"),
/// then the data region with tensors contiguous in lexicographic name
/// order. Output is canonical: writing the same checkpoint twice yields
/// identical bytes.
void write_checkpoint(const Checkpoint& cp, const std::filesystem::path& destination);

/// Parses and fully validates the header; reads no tensor payload.
CheckpointRef open_checkpoint(const std::filesystem::path& path);

TensorData read_tensor(const CheckpointRef& ref, const std::string& name);

}  // namespace xavg

#endif  // XAVG_TENSOR_STORE_HPP
