"""Live probe transports.

Both transports degrade to a clean TransportUnavailable error when the
environment cannot support them (no raw-socket privilege, resolver library
missing), so the engine stays usable in simulator-only setups.
"""

from __future__ import annotations

import os
import socket
import struct
import time

from .probing import ResolverFailure, TransportUnavailable


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    total = (total >> 16) + (total & 0xFFFF)
    total += total >> 16
    return ~total & 0xFFFF


class LiveIcmpProber:
    """Blocking ICMP echo prober over a raw socket; requires privileges."""

    def __init__(self, timeout_seconds: float = 1.0):
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.getprotobyname("icmp"))
        except PermissionError as exc:
            raise TransportUnavailable("raw ICMP sockets require elevated privileges") from exc
        except OSError as exc:
            raise TransportUnavailable(f"cannot open raw ICMP socket: {exc}") from exc
        self._sock.settimeout(timeout_seconds)
        self._ident = os.getpid() & 0xFFFF
        self._seq = 0

    def __call__(self, ip: str, _minute: int) -> bool:
        self._seq = (self._seq + 1) & 0xFFFF
        header = struct.pack("!BBHHH", 8, 0, 0, self._ident, self._seq)
        payload = struct.pack("!d", time.time())
        checksum = _checksum(header + payload)
        packet = struct.pack("!BBHHH", 8, 0, checksum, self._ident, self._seq) + payload
        try:
            self._sock.sendto(packet, (ip, 0))
            deadline = time.monotonic() + self._sock.gettimeout()
            while time.monotonic() < deadline:
                data, addr = self._sock.recvfrom(2048)
                if addr[0] != ip or len(data) < 28:
                    continue
                icmp_type, _, _, ident, _ = struct.unpack("!BBHHH", data[20:28])
                if icmp_type == 0 and ident == self._ident:
                    return True
        except socket.timeout:
            return False
        except OSError:
            return False
        return False

    def close(self) -> None:
        self._sock.close()


class LiveRdnsResolver:
    """PTR lookups sent straight to the zone's authoritative server so answers
    are fresh rather than cached."""

    def __init__(self, timeout_seconds: float = 2.0):
        try:
            import dns.message  # noqa: F401
            import dns.query  # noqa: F401
            import dns.resolver  # noqa: F401
            import dns.reversename  # noqa: F401
        except ImportError as exc:
            raise TransportUnavailable(
                "live rDNS lookups need dnspython (install the 'live' extra)"
            ) from exc
        self._timeout = timeout_seconds
        self._ns_cache: dict[str, str] = {}

    def _authoritative_address(self, query_name) -> str:
        import dns.resolver

        zone = str(dns.resolver.zone_for_name(query_name))
        cached = self._ns_cache.get(zone)
        if cached is not None:
            return cached
        ns_names = sorted(str(record.target) for record in dns.resolver.resolve(zone, "NS"))
        address = str(dns.resolver.resolve(ns_names[0], "A")[0])
        self._ns_cache[zone] = address
        return address

    def __call__(self, ip: str, _minute: int) -> str | None:
        import dns.exception
        import dns.flags
        import dns.message
        import dns.query
        import dns.rcode
        import dns.rdatatype
        import dns.reversename

        query_name = dns.reversename.from_address(ip)
        try:
            server = self._authoritative_address(query_name)
            query = dns.message.make_query(query_name, dns.rdatatype.PTR)
            query.flags &= ~dns.flags.RD
            response = dns.query.udp(query, server, timeout=self._timeout)
        except dns.exception.Timeout as exc:
            raise ResolverFailure("timeout") from exc
        except dns.exception.DNSException as exc:
            raise ResolverFailure("servfail") from exc
        if response.rcode() == dns.rcode.NXDOMAIN:
            return None
        if response.rcode() != dns.rcode.NOERROR:
            raise ResolverFailure("servfail")
        values = sorted(
            str(item).rstrip(".").lower()
            for rrset in response.answer
            if rrset.rdtype == dns.rdatatype.PTR
            for item in rrset
        )
        return values[0] if values else None
