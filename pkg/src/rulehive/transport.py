"""TCP transport between platforms: one encoded message per line.

The listener accepts connections and feeds decoded messages into the
platform's router; malformed lines are logged and skipped — one bad peer
must not wedge the socket.  Outbound connections are cached per address
and re-established once on failure.
"""

from __future__ import annotations

import logging
import socket
import threading

from .acl import decode_message
from .errors import RulehiveError

log = logging.getLogger(__name__)


class TcpListener:
    def __init__(self, platform, host: str, port: int):
        self.platform = platform
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(16)
        self.host, self.port = self._sock.getsockname()
        self._closing = False
        self._thread = threading.Thread(target=self._accept_loop,
                                        name=f"listener:{self.port}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def shutdown(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, peer = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn, peer),
                             name=f"peer:{peer[0]}:{peer[1]}", daemon=True).start()

    def _serve(self, conn: socket.socket, peer) -> None:
        with conn:
            reader = conn.makefile("rb")
            for line in reader:
                if self._closing:
                    return
                try:
                    self.platform.route_incoming(decode_message(line))
                except RulehiveError as exc:
                    log.warning("dropping bad message from %s: %s", peer, exc)


class ConnectionPool:
    """Cached outbound line-oriented connections, keyed by ``host:port``."""

    def __init__(self, connect_timeout: float = 3.0):
        self._timeout = connect_timeout
        self._lock = threading.Lock()
        self._conns: dict[str, socket.socket] = {}

    def _connect(self, address: str) -> socket.socket:
        host, _, port_text = address.rpartition(":")
        try:
            port = int(port_text)
        except ValueError:
            raise OSError(f"bad address {address!r}; expected host:port") from None
        return socket.create_connection((host or "127.0.0.1", port),
                                        timeout=self._timeout)

    def send(self, address: str, data: bytes) -> None:
        with self._lock:
            sock = self._conns.get(address)
            try:
                if sock is None:
                    sock = self._connect(address)
                    self._conns[address] = sock
                sock.sendall(data)
            except OSError:
                # stale cached connection: reconnect once, then give up
                self._drop(address)
                sock = self._connect(address)
                self._conns[address] = sock
                sock.sendall(data)

    def _drop(self, address: str) -> None:
        sock = self._conns.pop(address, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def close(self) -> None:
        with self._lock:
            for address in list(self._conns):
                self._drop(address)
