#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adcsl/protocol.hpp"

namespace adcsl {

/// One side of an ordered, reliable, blocking frame channel.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    /// Serialises and sends; TransportError on a broken channel.
    void send(const Packet& packet);
    /// Blocks for the next frame; TransportError on a closed channel, ProtocolError on a
    /// malformed frame.
    Packet receive();

    virtual void send_frame(const std::vector<std::uint8_t>& frame) = 0;
    virtual std::vector<std::uint8_t> receive_frame() = 0;
    virtual void close() = 0;

protected:
    /// Iteration of the last packet sent, quoted in transport errors.
    std::uint32_t pending_iteration_ = 0;
    std::string context() const;
};

using EndpointPtr = std::unique_ptr<Endpoint>;

/// In-memory pair; closing either side wakes and fails the peer's pending receive.
std::pair<EndpointPtr, EndpointPtr> inprocess_pair();

struct Address {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port"
    static Address parse(const std::string& text);
    std::string to_string() const;
};

class TcpListener {
public:
    /// Port 0 binds an ephemeral port; see port().
    explicit TcpListener(const Address& address);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    EndpointPtr accept();
    void close();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

/// Connects, retrying refused connections for up to `retry_ms`.
EndpointPtr tcp_connect(const Address& address, int retry_ms = 0);

}  // namespace adcsl
