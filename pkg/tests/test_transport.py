"""Message delivery between two platforms over TCP."""

import socket
import struct
import time

import pytest

from rulehive.acl import (
    AclMessage,
    AgentId,
    Performative,
    encode_message,
)
from rulehive.runtime import DIRECTORY_AGENT_NAME, Platform
from rulehive.transport import ConnectionPool


def wait_until(check, timeout=5.0, interval=0.005):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if check():
            return True
        time.sleep(interval)
    return False


@pytest.fixture
def pair():
    """Two platforms on ephemeral ports, one agent each."""

    left = Platform(port=0)
    right = Platform(port=0)
    left.register_agent("lefty")
    right.register_agent("righty")
    left.start()
    right.start()
    yield left, right
    left.stop()
    right.stop()


def addressed(sender_platform, sender, receiver_platform, receiver, **kw):
    defaults = dict(
        performative=Performative.INFORM,
        sender=AgentId(sender, sender_platform.address),
        receivers=(AgentId(receiver, receiver_platform.address),),
        conversation_id="conv-x",
        content="over the wire",
    )
    defaults.update(kw)
    return AclMessage(**defaults)


class TestRemoteDelivery:
    def test_message_crosses_platforms(self, pair):
        left, right = pair
        message = addressed(left, "lefty", right, "righty")
        left.agent("lefty").send(message)

        inbox = right.agent("righty").queue
        assert wait_until(lambda: len(inbox) > 0)
        got = inbox.take()
        assert got == message   # the codec round-trips the whole message

    def test_replies_travel_back(self, pair):
        left, right = pair
        left.agent("lefty").send(addressed(
            left, "lefty", right, "righty",
            performative=Performative.REQUEST, reply_with="rw-1"))

        righty = right.agent("righty")
        assert wait_until(lambda: len(righty.queue) > 0)
        request = righty.queue.take()
        righty.send(AclMessage(
            performative=Performative.INFORM,
            sender=righty.id,
            receivers=(request.sender,),
            conversation_id=request.conversation_id,
            in_reply_to=request.reply_with,
            content="done",
        ))

        lefty_inbox = left.agent("lefty").queue
        assert wait_until(lambda: len(lefty_inbox) > 0)
        reply = lefty_inbox.take()
        assert reply.in_reply_to == "rw-1"
        assert reply.content == "done"

    def test_unknown_remote_agent_failure_comes_back(self, pair):
        left, right = pair
        left.agent("lefty").send(addressed(
            left, "lefty", right, "missing-agent",
            performative=Performative.REQUEST, reply_with="rw-2"))

        inbox = left.agent("lefty").queue
        assert wait_until(lambda: len(inbox) > 0)
        failure = inbox.take()
        assert failure.performative is Performative.FAILURE
        assert failure.sender.name == DIRECTORY_AGENT_NAME
        assert "missing-agent" in failure.content
        assert failure.in_reply_to == "rw-2"

    def test_unreachable_address_bounces_locally(self, pair):
        left, _ = pair
        # a port nobody listens on
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        dead_port = probe.getsockname()[1]
        probe.close()

        left.agent("lefty").send(AclMessage(
            performative=Performative.REQUEST,
            sender=AgentId("lefty", left.address),
            receivers=(AgentId("anyone", f"127.0.0.1:{dead_port}"),),
            conversation_id="conv-dead",
        ))
        inbox = left.agent("lefty").queue
        assert wait_until(lambda: len(inbox) > 0)
        assert inbox.take().performative is Performative.FAILURE


class TestBadInput:
    def test_garbage_line_is_skipped_and_stream_continues(self, pair):
        left, right = pair
        good = addressed(left, "lefty", right, "righty")

        host, _, port = right.address.rpartition(":")
        with socket.create_connection((host, int(port))) as raw:
            raw.sendall(b"this is not a message\n")
            raw.sendall(b'{"half": "json"}\n')
            raw.sendall(encode_message(good))
            inbox = right.agent("righty").queue
            assert wait_until(lambda: len(inbox) > 0)
            assert inbox.take().content == "over the wire"

class TestConnectionPool:
    def test_reconnect_after_peer_reset(self):
        server = socket.socket()
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind(("127.0.0.1", 0))
        server.listen(4)
        server.settimeout(5.0)
        address = "127.0.0.1:%d" % server.getsockname()[1]

        pool = ConnectionPool()
        try:
            pool.send(address, b"one\n")
            conn1, _ = server.accept()
            assert conn1.recv(4) == b"one\n"
            # slam the connection shut (RST, not FIN) so the pool's very
            # next sendall errors instead of writing into a dead socket
            conn1.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER,
                             struct.pack("ii", 1, 0))
            conn1.close()
            time.sleep(0.05)

            pool.send(address, b"two\n")   # must drop + reconnect internally
            conn2, _ = server.accept()
            conn2.settimeout(2.0)
            assert conn2.recv(4) == b"two\n"
            conn2.close()
        finally:
            pool.close()
            server.close()
    def test_bad_address_shape(self):
        pool = ConnectionPool()
        with pytest.raises(OSError, match="expected host:port"):
            pool.send("no-port-here", b"x\n")
        pool.close()

    def test_connections_are_cached(self):
        server = socket.socket()
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind(("127.0.0.1", 0))
        server.listen(4)
        address = "127.0.0.1:%d" % server.getsockname()[1]

        pool = ConnectionPool()
        try:
            pool.send(address, b"a\n")
            conn, _ = server.accept()
            pool.send(address, b"b\n")   # reuses the socket: no second accept
            server.settimeout(0.2)
            with pytest.raises(TimeoutError):
                server.accept()
            conn.settimeout(2.0)
            assert conn.recv(4) == b"a\nb\n"
            conn.close()
        finally:
            pool.close()
            server.close()
