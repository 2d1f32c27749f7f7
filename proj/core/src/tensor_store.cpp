#include "xavg/tensor_store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace xavg {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kMetadataKey = "__metadata__";

std::uint64_t checked_numel(const std::vector<std::uint64_t>& shape) {
    std::uint64_t n = 1;
    for (std::uint64_t extent : shape) {
        if (extent != 0 && n > std::numeric_limits<std::uint64_t>::max() / extent) {
            throw MalformedHeaderError("tensor shape product overflows 64 bits");
        }
        n *= extent;
    }
    return n;
}

std::uint64_t read_le_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void write_le_u64(std::uint64_t v, std::ostream& out) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

}  // namespace

std::string_view dtype_name(Dtype d) {
    switch (d) {
        case Dtype::F32: return "F32";
        case Dtype::F64: return "F64";
        case Dtype::I64: return "I64";
    }
    return "?";
}

Dtype dtype_from_name(std::string_view name) {
    if (name == "F32") return Dtype::F32;
    if (name == "F64") return Dtype::F64;
    if (name == "I64") return Dtype::I64;
    throw MalformedHeaderError("unsupported dtype '" + std::string(name) + "'");
}

std::uint64_t TensorSpec::numel() const {
    std::uint64_t n = 1;
    for (std::uint64_t extent : shape) n *= extent;
    return n;
}

TensorData::TensorData(Dtype dtype, std::vector<std::uint64_t> shape, std::vector<std::byte> raw)
    : dtype_(dtype), shape_(std::move(shape)), raw_(std::move(raw)) {
    std::uint64_t expected = checked_numel(shape_) * dtype_width(dtype_);
    if (raw_.size() != expected) {
        throw ValidationError("tensor buffer has " + std::to_string(raw_.size()) +
                              " bytes, shape requires " + std::to_string(expected));
    }
}

template <typename T>
static TensorData make_tensor(Dtype dtype, std::vector<std::uint64_t> shape, std::span<const T> values) {
    std::vector<std::byte> raw(values.size_bytes());
    if (!values.empty()) std::memcpy(raw.data(), values.data(), values.size_bytes());
    return TensorData(dtype, std::move(shape), std::move(raw));
}

TensorData TensorData::from_f32(std::vector<std::uint64_t> shape, std::span<const float> values) {
    return make_tensor(Dtype::F32, std::move(shape), values);
}

TensorData TensorData::from_f64(std::vector<std::uint64_t> shape, std::span<const double> values) {
    return make_tensor(Dtype::F64, std::move(shape), values);
}

TensorData TensorData::from_i64(std::vector<std::uint64_t> shape, std::span<const std::int64_t> values) {
    return make_tensor(Dtype::I64, std::move(shape), values);
}

std::uint64_t TensorData::numel() const { return checked_numel(shape_); }

std::span<const float> TensorData::as_f32() const {
    if (dtype_ != Dtype::F32) throw ValidationError("tensor is not F32");
    return {reinterpret_cast<const float*>(raw_.data()), raw_.size() / 4};
}

std::span<const double> TensorData::as_f64() const {
    if (dtype_ != Dtype::F64) throw ValidationError("tensor is not F64");
    return {reinterpret_cast<const double*>(raw_.data()), raw_.size() / 8};
}

std::span<const std::int64_t> TensorData::as_i64() const {
    if (dtype_ != Dtype::I64) throw ValidationError("tensor is not I64");
    return {reinterpret_cast<const std::int64_t*>(raw_.data()), raw_.size() / 8};
}

double TensorData::element_as_double(std::size_t i) const {
    switch (dtype_) {
        case Dtype::F32: return as_f32()[i];
        case Dtype::F64: return as_f64()[i];
        case Dtype::I64: break;
    }
    throw ValidationError("element_as_double on non-floating tensor");
}

bool TensorData::bitwise_equal(const TensorData& other) const {
    return dtype_ == other.dtype_ && shape_ == other.shape_ && raw_ == other.raw_;
}

void Checkpoint::add(std::string name, TensorData tensor) {
    if (name.empty()) throw ValidationError("tensor name must be non-empty");
    auto [it, inserted] = tensors_.emplace(std::move(name), std::move(tensor));
    if (!inserted) throw ValidationError("duplicate tensor name '" + it->first + "'");
}

void Checkpoint::set_metadata(std::string key, std::string value) {
    metadata_[std::move(key)] = std::move(value);
}

const TensorData& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UnknownTensorError("no tensor named '" + name + "'");
    return it->second;
}

void write_checkpoint(const Checkpoint& cp, const std::filesystem::path& destination) {
    ordered_json header = ordered_json::object();
    if (!cp.metadata().empty()) {
        ordered_json meta = ordered_json::object();
        for (const auto& [k, v] : cp.metadata()) meta[k] = v;
        header[std::string(kMetadataKey)] = std::move(meta);
    }

    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : cp.tensors()) {
        if (name == kMetadataKey) {
            throw ValidationError("'__metadata__' is reserved and cannot name a tensor");
        }
        ordered_json entry = ordered_json::object();
        entry["dtype"] = std::string(dtype_name(tensor.dtype()));
        entry["shape"] = tensor.shape();
        std::uint64_t end = offset + tensor.raw().size();
        entry["data_offsets"] = {offset, end};
        header[name] = std::move(entry);
        offset = end;
    }

    std::string header_text = header.dump();

    std::ofstream out(destination, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + destination.string() + "' for writing");
    write_le_u64(header_text.size(), out);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : cp.tensors()) {
        out.write(reinterpret_cast<const char*>(tensor.raw().data()),
                  static_cast<std::streamsize>(tensor.raw().size()));
    }
    out.flush();
    if (!out) throw IoError("write to '" + destination.string() + "' failed");
}

namespace {

/// Parses the header JSON, rejecting duplicate keys (nlohmann would
/// silently keep the last occurrence otherwise).
ordered_json parse_header_json(const std::string& text) {
    std::vector<std::set<std::string>> key_stack;
    auto callback = [&key_stack](int, ordered_json::parse_event_t event, ordered_json& parsed) {
        switch (event) {
            case ordered_json::parse_event_t::object_start:
                key_stack.emplace_back();
                break;
            case ordered_json::parse_event_t::object_end:
                key_stack.pop_back();
                break;
            case ordered_json::parse_event_t::key: {
                auto key = parsed.get<std::string>();
                if (!key_stack.back().insert(key).second) {
                    throw MalformedHeaderError("duplicate header key '" + key + "'");
                }
                break;
            }
            default:
                break;
        }
        return true;
    };
    try {
        return ordered_json::parse(text, callback);
    } catch (const ordered_json::parse_error& e) {
        throw MalformedHeaderError(std::string("header is not valid JSON: ") + e.what());
    }
}

TensorSpec parse_tensor_entry(const std::string& name, const ordered_json& entry) {
    if (!entry.is_object()) {
        throw MalformedHeaderError("entry for '" + name + "' is not an object");
    }
    for (const auto& [key, _] : entry.items()) {
        if (key != "dtype" && key != "shape" && key != "data_offsets") {
            throw MalformedHeaderError("entry for '" + name + "' has unknown field '" + key + "'");
        }
    }
    if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets")) {
        throw MalformedHeaderError("entry for '" + name + "' is missing a required field");
    }

    TensorSpec spec;
    spec.name = name;
    if (!entry["dtype"].is_string()) {
        throw MalformedHeaderError("dtype of '" + name + "' is not a string");
    }
    spec.dtype = dtype_from_name(entry["dtype"].get<std::string>());

    if (!entry["shape"].is_array()) {
        throw MalformedHeaderError("shape of '" + name + "' is not an array");
    }
    for (const auto& extent : entry["shape"]) {
        if (!extent.is_number_unsigned()) {
            throw MalformedHeaderError("shape of '" + name + "' has a non-integer or negative extent");
        }
        spec.shape.push_back(extent.get<std::uint64_t>());
    }

    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned()) {
        throw MalformedHeaderError("data_offsets of '" + name + "' must be two non-negative integers");
    }
    spec.begin = offsets[0].get<std::uint64_t>();
    spec.end = offsets[1].get<std::uint64_t>();

    if (spec.end < spec.begin) {
        throw OffsetError("byte range of '" + name + "' ends before it begins");
    }
    std::uint64_t expected = checked_numel(spec.shape) * dtype_width(spec.dtype);
    if (spec.end - spec.begin != expected) {
        throw OffsetError("byte range of '" + name + "' has " +
                          std::to_string(spec.end - spec.begin) + " bytes, shape requires " +
                          std::to_string(expected));
    }
    return spec;
}

}  // namespace

CheckpointRef CheckpointRef::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    if (file_size < 8) throw TruncatedFileError("'" + path.string() + "' is too small to hold a header length");
    unsigned char len_buf[8];
    in.read(reinterpret_cast<char*>(len_buf), 8);
    if (!in) throw IoError("read from '" + path.string() + "' failed");
    std::uint64_t header_len = read_le_u64(len_buf);
    if (header_len > file_size - 8) {
        throw TruncatedFileError("declared header length " + std::to_string(header_len) +
                                 " exceeds file size");
    }

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("read from '" + path.string() + "' failed");

    ordered_json header = parse_header_json(header_text);
    if (!header.is_object()) throw MalformedHeaderError("header is not a JSON object");

    CheckpointRef ref;
    ref.source_ = path.string();
    ref.path_ = path;
    ref.data_begin_ = 8 + header_len;
    std::uint64_t data_size = file_size - ref.data_begin_;

    for (const auto& [key, value] : header.items()) {
        if (key == kMetadataKey) {
            if (!value.is_object()) throw MalformedHeaderError("__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) throw MalformedHeaderError("__metadata__ values must be strings");
                ref.metadata_[mk] = mv.get<std::string>();
            }
            continue;
        }
        if (key.empty()) throw MalformedHeaderError("tensor name must be non-empty");
        ref.specs_.push_back(parse_tensor_entry(key, value));
    }

    std::sort(ref.specs_.begin(), ref.specs_.end(),
              [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });

    // Tensors must tile the data region exactly, in lexicographic name order.
    std::uint64_t expected_begin = 0;
    for (const TensorSpec& spec : ref.specs_) {
        if (spec.begin != expected_begin) {
            throw OffsetError("tensor '" + spec.name + "' begins at offset " +
                              std::to_string(spec.begin) + ", expected " +
                              std::to_string(expected_begin) +
                              " (ranges must be contiguous in lexicographic name order)");
        }
        expected_begin = spec.end;
    }
    if (expected_begin > data_size) {
        throw TruncatedFileError("data region holds " + std::to_string(data_size) +
                                 " bytes but tensors require " + std::to_string(expected_begin));
    }
    if (expected_begin < data_size) {
        throw OffsetError("data region has " + std::to_string(data_size - expected_begin) +
                          " trailing bytes not covered by any tensor");
    }

    for (std::size_t i = 0; i < ref.specs_.size(); ++i) ref.index_[ref.specs_[i].name] = i;
    return ref;
}

CheckpointRef CheckpointRef::from_memory(std::shared_ptr<const Checkpoint> cp, std::string label) {
    CheckpointRef ref;
    ref.source_ = std::move(label);
    ref.memory_ = std::move(cp);
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : ref.memory_->tensors()) {
        TensorSpec spec;
        spec.name = name;
        spec.dtype = tensor.dtype();
        spec.shape = tensor.shape();
        spec.begin = offset;
        spec.end = offset + tensor.raw().size();
        offset = spec.end;
        ref.index_[name] = ref.specs_.size();
        ref.specs_.push_back(std::move(spec));
    }
    ref.metadata_ = ref.memory_->metadata();
    return ref;
}

const TensorSpec& CheckpointRef::spec(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UnknownTensorError("no tensor named '" + name + "' in " + source_);
    return specs_[it->second];
}

bool CheckpointRef::contains(const std::string& name) const {
    return index_.find(name) != index_.end();
}

TensorData CheckpointRef::read(const std::string& name) const {
    const TensorSpec& s = spec(name);
    if (memory_) return memory_->tensor(name);

    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path_.string() + "'");
    in.seekg(static_cast<std::streamoff>(data_begin_ + s.begin));
    std::vector<std::byte> raw(s.end - s.begin);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw IoError("read of tensor '" + name + "' from '" + path_.string() + "' failed");
    return TensorData(s.dtype, s.shape, std::move(raw));
}

Checkpoint CheckpointRef::load_all() const {
    Checkpoint cp;
    for (const TensorSpec& s : specs_) cp.add(s.name, read(s.name));
    for (const auto& [k, v] : metadata_) cp.set_metadata(k, v);
    return cp;
}

CheckpointRef open_checkpoint(const std::filesystem::path& path) {
    return CheckpointRef::from_file(path);
}

TensorData read_tensor(const CheckpointRef& ref, const std::string& name) {
    return ref.read(name);
}

}  // namespace xavg
