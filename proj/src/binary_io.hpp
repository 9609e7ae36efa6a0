// Little-endian helpers shared by the dataset and checkpoint formats.

#ifndef POLYNET_BINARY_IO_HPP
#define POLYNET_BINARY_IO_HPP

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace polynet::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class U>
void put(std::ostream& out, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put(out, bits);
}

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put(out, bits);
}

class Reader {
public:
    Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

    template <class U>
    U get() {
        unsigned char bytes[sizeof(U)];
        read(bytes, sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
        return v;
    }
    float get_f32() {
        const auto bits = get<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double get_f64() {
        const auto bits = get<std::uint64_t>();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    void read(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": truncated file");
    }
    void expect_magic(const char (&magic)[5]) {
        char got[4];
        read(got, 4);
        if (std::memcmp(got, magic, 4) != 0) throw FormatError(what_ + ": bad magic");
    }
    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes after payload");
    }

private:
    std::istream& in_;
    std::string what_;
};

}  // namespace polynet::io

#endif  // POLYNET_BINARY_IO_HPP
