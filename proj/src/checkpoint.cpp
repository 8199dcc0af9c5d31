#include "picotab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "picotab/errors.hpp"

namespace picotab {
namespace {

constexpr char kMagic[4] = {'T', 'P', 'F', 'N'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint: " + path);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void CheckpointContainer::set_header(const std::string& key, const std::string& value) {
    for (auto& [k, v] : header_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    header_.emplace_back(key, value);
}

bool CheckpointContainer::has_header(const std::string& key) const {
    for (const auto& [k, v] : header_)
        if (k == key) return true;
    return false;
}

const std::string& CheckpointContainer::header_value(const std::string& key) const {
    for (const auto& [k, v] : header_)
        if (k == key) return v;
    throw DataError("checkpoint header key missing: " + key);
}

std::string CheckpointContainer::header_or(const std::string& key,
                                           const std::string& fallback) const {
    return has_header(key) ? header_value(key) : fallback;
}

void CheckpointContainer::set_tensor(const std::string& name, Tensor t) {
    for (auto& [k, v] : tensors_) {
        if (k == name) {
            v = std::move(t);
            return;
        }
    }
    tensors_.emplace_back(name, std::move(t));
}

bool CheckpointContainer::has_tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors_)
        if (k == name) return true;
    return false;
}

const Tensor& CheckpointContainer::tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors_)
        if (k == name) return v;
    throw DataError("checkpoint tensor missing: " + name);
}

void save_checkpoint(const CheckpointContainer& container, const std::string& path) {
    std::string header_text;
    for (const auto& [k, v] : container.header_entries()) {
        header_text += k;
        header_text += " = ";
        header_text += v;
        header_text += '\n';
    }

    std::string index;
    std::string payload;
    put_u32(index, static_cast<uint32_t>(container.tensor_entries().size()));
    for (const auto& [name, t] : container.tensor_entries()) {
        put_u32(index, static_cast<uint32_t>(name.size()));
        index += name;
        put_u32(index, static_cast<uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u64(index, static_cast<uint64_t>(t.dim(d)));
        put_u64(index, payload.size());
        payload.reserve(payload.size() + t.numel() * 4);
        for (size_t i = 0; i < t.numel(); ++i) put_f32(payload, static_cast<float>(t[i]));
    }

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, CheckpointContainer::kFormatVersion);
    put_u64(out, header_text.size());
    out += header_text;
    out += index;
    put_u64(out, payload.size());
    out += payload;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write on checkpoint: " + path);
}

CheckpointContainer load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf, 0, path};
    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw DataError("bad magic, not a checkpoint: " + path);
    }
    const uint32_t version = r.u32();
    if ((version >> 16) > (CheckpointContainer::kFormatVersion >> 16)) {
        throw DataError("checkpoint written by a newer major format version: " + path);
    }

    CheckpointContainer container;
    const uint64_t header_bytes = r.u64();
    const std::string header_text = r.bytes(header_bytes);
    size_t start = 0;
    while (start < header_text.size()) {
        size_t eol = header_text.find('\n', start);
        if (eol == std::string::npos) eol = header_text.size();
        const std::string line = header_text.substr(start, eol - start);
        start = eol + 1;
        const size_t sep = line.find(" = ");
        if (sep != std::string::npos) {
            container.set_header(line.substr(0, sep), line.substr(sep + 3));
        }
    }

    struct IndexedTensor {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
    };
    const uint32_t n_tensors = r.u32();
    std::vector<IndexedTensor> index;
    index.reserve(n_tensors);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        IndexedTensor it;
        it.name = r.bytes(r.u32());
        const uint32_t ndim = r.u32();
        if (ndim > 8) throw DataError("corrupt tensor index in checkpoint: " + path);
        for (uint32_t d = 0; d < ndim; ++d) it.shape.push_back(static_cast<int>(r.u64()));
        it.offset = r.u64();
        index.push_back(std::move(it));
    }

    const uint64_t payload_bytes = r.u64();
    r.need(payload_bytes);
    const size_t payload_start = r.pos;

    for (const auto& it : index) {
        Tensor t(it.shape);
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * 4;
        if (it.offset + bytes > payload_bytes) {
            throw DataError("tensor '" + it.name + "' exceeds payload in checkpoint: " + path);
        }
        const char* src = buf.data() + payload_start + it.offset;
        for (size_t i = 0; i < t.numel(); ++i) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<uint32_t>(static_cast<uint8_t>(src[i * 4 + b])) << (8 * b);
            float v;
            std::memcpy(&v, &bits, 4);
            t[i] = static_cast<double>(v);
        }
        container.set_tensor(it.name, std::move(t));
    }
    return container;
}

void quantize_to_f32(Tensor& t) {
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

}  // namespace picotab
