#pragma once

// Client for the perceptual-loss sidecar: a local TCP service that answers
// structural and semantic loss requests with a gradient image.
//
// Every message is a frame [u32 length][payload], little-endian.
//   request:   u8 type (0 handshake, 1 structural, 2 semantic), u32 width,
//              u32 height, f32 target[3wh], f32 render[3wh] (RGB, row-major,
//              interleaved; a handshake carries width = height = 0)
//   loss ok:   u8 0, f32 loss, f32 grad[3wh]
//   hello ok:  u8 0, u32 version, u32 count, count x (u32 length, bytes)
//   error:     u8 1, u32 length, utf-8 message

#include "sketch3d/losses.hpp"

#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

namespace sketch3d {

namespace wire {

inline constexpr std::uint32_t protocol_version = 1;
inline constexpr std::uint32_t max_frame_bytes = 1u << 30;

enum class MessageType : std::uint8_t { handshake = 0, structural = 1, semantic = 2 };
enum class Status : std::uint8_t { ok = 0, error = 1 };

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string &s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    const std::vector<std::uint8_t> &bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("sidecar: truncated message");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Splits "host:port"; a bare port means 127.0.0.1.
inline std::pair<std::string, std::string> split_address(const std::string &addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) return {"127.0.0.1", addr};
    return {addr.substr(0, colon), addr.substr(colon + 1)};
}

inline void send_all(int fd, const std::uint8_t *data, std::size_t n) {
    while (n > 0) {
        const auto w = ::send(fd, data, n, MSG_NOSIGNAL);
        if (w < 0 && errno == EINTR) continue;
        if (w <= 0) throw IoError(std::string("sidecar: send failed: ") + std::strerror(errno));
        data += w;
        n -= static_cast<std::size_t>(w);
    }
}

inline void recv_all(int fd, std::uint8_t *data, std::size_t n) {
    while (n > 0) {
        const auto r = ::recv(fd, data, n, 0);
        if (r < 0 && errno == EINTR) continue;
        if (r == 0) throw IoError("sidecar: connection closed");
        if (r < 0) throw IoError(std::string("sidecar: receive failed: ") + std::strerror(errno));
        data += r;
        n -= static_cast<std::size_t>(r);
    }
}

inline void send_frame(int fd, const std::vector<std::uint8_t> &payload) {
    Writer header;
    header.u32(static_cast<std::uint32_t>(payload.size()));
    send_all(fd, header.bytes().data(), 4);
    send_all(fd, payload.data(), payload.size());
}

inline std::vector<std::uint8_t> recv_frame(int fd) {
    std::uint8_t header[4];
    recv_all(fd, header, 4);
    const auto n = Reader(header).u32();
    if (n > max_frame_bytes) throw IoError("sidecar: frame too large");
    std::vector<std::uint8_t> payload(n);
    recv_all(fd, payload.data(), n);
    return payload;
}

} // namespace wire

struct SidecarInfo {
    std::uint32_t version = 0;
    std::vector<std::string> model_ids;
};

/// Perceptual backend served by the sidecar. One connection, one request
/// in flight; renders are sent as gray replicated to RGB and the returned
/// RGB gradient is summed back to gray.
class SidecarBackend final : public PerceptualBackend {
public:
    explicit SidecarBackend(const std::string &address, double timeout_seconds = 300.0) {
        const auto [host, port] = wire::split_address(address);
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo *res = nullptr;
        if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
            throw IoError("sidecar: cannot resolve " + address + ": " + ::gai_strerror(rc));
        }
        for (auto *ai = res; ai != nullptr; ai = ai->ai_next) {
            fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd_ < 0) continue;
            if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
            ::close(fd_);
            fd_ = -1;
        }
        ::freeaddrinfo(res);
        if (fd_ < 0) throw IoError("sidecar: cannot connect to " + address);
        timeval tv{};
        tv.tv_sec = static_cast<long>(timeout_seconds);
        tv.tv_usec = static_cast<long>((timeout_seconds - static_cast<double>(tv.tv_sec)) * 1e6);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        try {
            info_ = handshake();
        } catch (...) {
            ::close(fd_);
            throw;
        }
    }

    ~SidecarBackend() override {
        if (fd_ >= 0) ::close(fd_);
    }
    SidecarBackend(const SidecarBackend &) = delete;
    SidecarBackend &operator=(const SidecarBackend &) = delete;

    const SidecarInfo &info() const { return info_; }
    std::string name() const override { return "sidecar"; }
    int max_concurrency() const override { return 1; }

    LossValue structural(const TargetImage &target, const ImageBuffer &render) override {
        return request(wire::MessageType::structural, target, render);
    }
    LossValue semantic(const TargetImage &target, const ImageBuffer &render) override {
        return request(wire::MessageType::semantic, target, render);
    }

private:
    [[noreturn]] static void remote_error(wire::Reader &r) {
        throw Error("sidecar error: " + r.str());
    }

    SidecarInfo handshake() {
        wire::Writer w;
        w.u8(static_cast<std::uint8_t>(wire::MessageType::handshake));
        w.u32(0);
        w.u32(0);
        wire::send_frame(fd_, w.bytes());
        const auto payload = wire::recv_frame(fd_);
        wire::Reader r(payload);
        if (r.u8() != static_cast<std::uint8_t>(wire::Status::ok)) remote_error(r);
        SidecarInfo info;
        info.version = r.u32();
        const auto n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) info.model_ids.push_back(r.str());
        if (info.version != wire::protocol_version) {
            throw IoError("sidecar: unsupported protocol version " + std::to_string(info.version));
        }
        return info;
    }

    LossValue request(wire::MessageType type, const TargetImage &target, const ImageBuffer &render) {
        require_same_shape(target.gray, render, "sidecar request");
        const std::size_t n = render.size();
        wire::Writer w;
        w.u8(static_cast<std::uint8_t>(type));
        w.u32(static_cast<std::uint32_t>(render.width()));
        w.u32(static_cast<std::uint32_t>(render.height()));
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                w.f32(target.rgb.empty() ? static_cast<float>(target.gray[i]) : target.rgb[3 * i + c]);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(render[i]));
        }
        wire::send_frame(fd_, w.bytes());

        const auto payload = wire::recv_frame(fd_);
        wire::Reader r(payload);
        if (r.u8() != static_cast<std::uint8_t>(wire::Status::ok)) remote_error(r);
        LossValue out{static_cast<double>(r.f32()), ImageBuffer(render.width(), render.height())};
        if (r.remaining() != 12 * n) throw IoError("sidecar: gradient size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            double g = 0.0;
            for (int c = 0; c < 3; ++c) g += r.f32();
            out.grad[i] = g;
        }
        if (!std::isfinite(out.value)) throw NumericalAbort("sidecar returned a non-finite loss", -1);
        return out;
    }

    int fd_ = -1;
    SidecarInfo info_;
};

} // namespace sketch3d
