#include "hiergen/container.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace hiergen {

namespace {

constexpr char k_magic[4] = {'M', 'N', 'D', 'H'};
constexpr uint32_t k_version = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t x) {
    out.push_back(static_cast<uint8_t>(x & 0xff));
    out.push_back(static_cast<uint8_t>(x >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((x >> (8 * i)) & 0xff));
}

struct reader {
    const std::vector<uint8_t>& buf;
    size_t off = 0;

    void need(size_t n, const std::string& what) const {
        if (off + n > buf.size())
            throw format_error("container truncated at byte " + std::to_string(off) +
                               " while reading " + what);
    }
    uint8_t u8(const std::string& what) {
        need(1, what);
        return buf[off++];
    }
    uint16_t u16(const std::string& what) {
        need(2, what);
        uint16_t x = static_cast<uint16_t>(buf[off] | (buf[off + 1] << 8));
        off += 2;
        return x;
    }
    uint32_t u32(const std::string& what) {
        need(4, what);
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(buf[off + i]) << (8 * i);
        off += 4;
        return x;
    }
    void bytes(void* dst, size_t n, const std::string& what) {
        need(n, what);
        std::memcpy(dst, buf.data() + off, n);
        off += n;
    }
};

} // namespace

container_entry& container::add_f32(const std::string& name, std::vector<int> shape,
                                    const std::vector<real>& values) {
    if (find(name) != nullptr) throw data_error("duplicate tensor name '" + name + "'");
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw dim_error("container entry '" + name + "': extent/value count mismatch");
    container_entry e;
    e.name = name;
    e.dtype = dtype_tag::f32;
    e.shape = std::move(shape);
    e.f.reserve(values.size());
    for (real x : values) e.f.push_back(static_cast<float>(x));
    entries.push_back(std::move(e));
    return entries.back();
}

container_entry& container::add_i32(const std::string& name, std::vector<int> shape,
                                    std::vector<int32_t> values) {
    if (find(name) != nullptr) throw data_error("duplicate tensor name '" + name + "'");
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw dim_error("container entry '" + name + "': extent/value count mismatch");
    container_entry e;
    e.name = name;
    e.dtype = dtype_tag::i32;
    e.shape = std::move(shape);
    e.i = std::move(values);
    entries.push_back(std::move(e));
    return entries.back();
}

const container_entry* container::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const container_entry& container::at(const std::string& name) const {
    const container_entry* e = find(name);
    if (!e) throw key_error("container has no tensor named '" + name + "'");
    return *e;
}

tptr container::tensor_at(const std::string& name) const {
    const container_entry& e = at(name);
    if (e.dtype != dtype_tag::f32)
        throw data_error("tensor '" + name + "' is not f32");
    std::vector<real> vals(e.f.begin(), e.f.end());
    return from_values(e.shape, std::move(vals));
}

void save_container(const std::string& path, const container& c) {
    std::set<std::string> seen;
    for (const auto& e : c.entries) {
        if (!seen.insert(e.name).second)
            throw data_error("duplicate tensor name '" + e.name + "'");
        if (e.name.size() > 0xffff)
            throw data_error("tensor name too long: '" + e.name.substr(0, 32) + "...'");
        size_t n = static_cast<size_t>(shape_numel(e.shape));
        size_t have = e.dtype == dtype_tag::f32 ? e.f.size() : e.i.size();
        if (n != have)
            throw dim_error("tensor '" + e.name + "': payload does not match extents");
        if (e.dtype == dtype_tag::f32)
            for (float x : e.f)
                if (!std::isfinite(x))
                    throw numeric_error("tensor '" + e.name + "': non-finite value");
    }

    std::vector<uint8_t> out;
    out.insert(out.end(), k_magic, k_magic + 4);
    put_u32(out, k_version);
    put_u32(out, static_cast<uint32_t>(c.entries.size()));
    for (const auto& e : c.entries) {
        put_u16(out, static_cast<uint16_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.push_back(static_cast<uint8_t>(e.dtype));
        out.push_back(static_cast<uint8_t>(e.shape.size()));
        for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
        size_t byte_count = static_cast<size_t>(shape_numel(e.shape)) * 4;
        size_t at = out.size();
        out.resize(at + byte_count);
        if (e.dtype == dtype_tag::f32)
            std::memcpy(out.data() + at, e.f.data(), byte_count);
        else
            std::memcpy(out.data() + at, e.i.data(), byte_count);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw data_error("write failed for '" + path + "'");
}

container load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open '" + path + "'");
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    reader r{buf};
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, k_magic, 4) != 0)
        throw format_error("bad magic at byte 0: not a tensor container");
    uint32_t version = r.u32("version");
    if (version != k_version)
        throw format_error("unsupported container version " + std::to_string(version) +
                           " at byte 4");
    uint32_t count = r.u32("tensor count");

    container c;
    std::set<std::string> seen;
    for (uint32_t t = 0; t < count; ++t) {
        std::string which = "tensor " + std::to_string(t);
        uint16_t name_len = r.u16("name length of " + which);
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "name of " + which);
        if (!seen.insert(name).second)
            throw format_error("duplicate tensor name '" + name + "' at byte " +
                               std::to_string(r.off - name_len));
        size_t dtype_off = r.off;
        uint8_t dt = r.u8("dtype of '" + name + "'");
        if (dt > 1)
            throw format_error("unknown dtype tag " + std::to_string(dt) + " for '" + name +
                               "' at byte " + std::to_string(dtype_off));
        uint8_t rank = r.u8("rank of '" + name + "'");
        container_entry e;
        e.name = name;
        e.dtype = static_cast<dtype_tag>(dt);
        int64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            uint32_t ext = r.u32("extent of '" + name + "'");
            e.shape.push_back(static_cast<int>(ext));
            n *= ext;
        }
        size_t byte_count = static_cast<size_t>(n) * 4;
        if (e.dtype == dtype_tag::f32) {
            e.f.resize(static_cast<size_t>(n));
            r.bytes(e.f.data(), byte_count, "payload of '" + name + "'");
        } else {
            e.i.resize(static_cast<size_t>(n));
            r.bytes(e.i.data(), byte_count, "payload of '" + name + "'");
        }
        c.entries.push_back(std::move(e));
    }
    if (r.off != buf.size())
        throw format_error(std::to_string(buf.size() - r.off) + " trailing bytes at byte " +
                           std::to_string(r.off));
    return c;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open '" + path + "' for hashing");
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(buf.data(), buf.size());
}

} // namespace hiergen
