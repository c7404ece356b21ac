#include "adcsl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "adcsl/errors.hpp"

namespace adcsl {

void Endpoint::send(const Packet& packet) {
    pending_iteration_ = packet.iteration;
    send_frame(serialize(packet));
}

Packet Endpoint::receive() { return deserialize(receive_frame()); }

std::string Endpoint::context() const { return " (pending iteration " + std::to_string(pending_iteration_) + ")"; }

// ---- in-process ---------------------------------------------------------------

namespace {

struct Queue {
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<std::vector<std::uint8_t>> frames;
    bool closed = false;
};

class InProcessEndpoint final : public Endpoint {
public:
    InProcessEndpoint(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out) : in_(std::move(in)), out_(std::move(out)) {}
    ~InProcessEndpoint() override { close(); }

    void send_frame(const std::vector<std::uint8_t>& frame) override {
        std::lock_guard<std::mutex> lock(out_->mutex);
        if (out_->closed) throw TransportError("in-process peer closed" + context());
        out_->frames.push_back(frame);
        out_->ready.notify_one();
    }

    std::vector<std::uint8_t> receive_frame() override {
        std::unique_lock<std::mutex> lock(in_->mutex);
        in_->ready.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
        if (in_->frames.empty()) throw TransportError("in-process peer closed" + context());
        auto frame = std::move(in_->frames.front());
        in_->frames.pop_front();
        return frame;
    }

    void close() override {
        for (auto* q : {in_.get(), out_.get()}) {
            std::lock_guard<std::mutex> lock(q->mutex);
            q->closed = true;
            q->ready.notify_all();
        }
    }

private:
    std::shared_ptr<Queue> in_, out_;
};

}  // namespace

std::pair<EndpointPtr, EndpointPtr> inprocess_pair() {
    auto a_to_b = std::make_shared<Queue>();
    auto b_to_a = std::make_shared<Queue>();
    return {std::make_unique<InProcessEndpoint>(b_to_a, a_to_b), std::make_unique<InProcessEndpoint>(a_to_b, b_to_a)};
}

// ---- TCP ----------------------------------------------------------------------

Address Address::parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 == text.size()) {
        throw ContractError("address must be host:port, got '" + text + "'");
    }
    Address a;
    a.host = text.substr(0, colon);
    if (a.host.empty()) a.host = "127.0.0.1";
    const std::string port = text.substr(colon + 1);
    std::size_t used = 0;
    unsigned long value = 0;
    try {
        value = std::stoul(port, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != port.size() || value > 65535) throw ContractError("invalid port in address '" + text + "'");
    a.port = static_cast<std::uint16_t>(value);
    return a;
}

std::string Address::to_string() const { return host + ":" + std::to_string(port); }

namespace {

std::string errno_text() { return std::strerror(errno); }

addrinfo* resolve(const Address& address, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* result = nullptr;
    const std::string port = std::to_string(address.port);
    if (int rc = getaddrinfo(address.host.c_str(), port.c_str(), &hints, &result); rc != 0) {
        throw TransportError("cannot resolve " + address.to_string() + ": " + gai_strerror(rc));
    }
    return result;
}

class TcpEndpoint final : public Endpoint {
public:
    explicit TcpEndpoint(int fd) : fd_(fd) {
        int one = 1;
        setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    ~TcpEndpoint() override { close(); }

    void send_frame(const std::vector<std::uint8_t>& frame) override {
        if (fd_ < 0) throw TransportError("socket closed" + context());
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError("send failed: " + errno_text() + context());
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::vector<std::uint8_t> receive_frame() override {
        std::vector<std::uint8_t> frame(4);
        read_exact(frame.data(), 4);
        std::uint32_t length = 0;
        std::memcpy(&length, frame.data(), 4);
        if (length > kMaxFrameBytes) throw ProtocolError("frame length " + std::to_string(length) + " exceeds limit");
        frame.resize(4 + static_cast<std::size_t>(length));
        read_exact(frame.data() + 4, length);
        return frame;
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    void read_exact(std::uint8_t* out, std::size_t size) {
        if (fd_ < 0) throw TransportError("socket closed" + context());
        std::size_t got = 0;
        while (got < size) {
            const ssize_t n = ::recv(fd_, out + got, size - got, 0);
            if (n == 0) throw TransportError("connection closed by peer" + context());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError("receive failed: " + errno_text() + context());
            }
            got += static_cast<std::size_t>(n);
        }
    }

    int fd_;
};

}  // namespace

TcpListener::TcpListener(const Address& address) {
    addrinfo* info = resolve(address, true);
    fd_ = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
    if (fd_ < 0) {
        freeaddrinfo(info);
        throw TransportError("socket: " + errno_text());
    }
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    const int rc = ::bind(fd_, info->ai_addr, info->ai_addrlen);
    freeaddrinfo(info);
    if (rc != 0 || ::listen(fd_, 4) != 0) {
        const std::string why = errno_text();
        close();
        throw TransportError("cannot listen on " + address.to_string() + ": " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

EndpointPtr TcpListener::accept() {
    while (true) {
        if (fd_ < 0) throw TransportError("listener closed");
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) return std::make_unique<TcpEndpoint>(fd);
        if (errno != EINTR) throw TransportError("accept failed: " + errno_text());
    }
}

EndpointPtr tcp_connect(const Address& address, int retry_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(retry_ms);
    while (true) {
        addrinfo* info = resolve(address, false);
        const int fd = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
        if (fd < 0) {
            freeaddrinfo(info);
            throw TransportError("socket: " + errno_text());
        }
        const int rc = ::connect(fd, info->ai_addr, info->ai_addrlen);
        const int err = errno;
        freeaddrinfo(info);
        if (rc == 0) return std::make_unique<TcpEndpoint>(fd);
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline) {
            throw TransportError("cannot connect to " + address.to_string() + ": " + std::strerror(err));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

}  // namespace adcsl
