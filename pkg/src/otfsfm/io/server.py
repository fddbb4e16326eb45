"""TCP ingest: concurrent agent connections feeding one bounded queue.

Each accepted message is acknowledged with a single status byte. Frames are
put on the queue before the acknowledgment is sent, so a full queue delays
the ack and throttles the sender.
"""
from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading

from ..errors import ProtocolError
from .wire import (MSG_BYE, MSG_FRAME, MSG_HELLO, STATUS_CLOSED, STATUS_OK, encode_message,
                   read_message)

log = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: IngestServer = self.server.ingest
        agent = None
        while True:
            try:
                msg = read_message(self.rfile)
            except ProtocolError as exc:
                log.warning("dropping connection from %s: %s", self.client_address, exc)
                self._ack(exc.status)
                return
            if msg is None:
                return
            msg_type, body = msg
            if msg_type == MSG_HELLO:
                agent = body
            elif msg_type == MSG_FRAME:
                if server.closed.is_set():
                    self._ack(STATUS_CLOSED)
                    return
                server.queue.put(body)  # blocks while full: backpressure
                server.count(agent)
            self._ack(STATUS_OK)
            if msg_type == MSG_BYE:
                return

    def _ack(self, status: int):
        try:
            self.wfile.write(bytes([status]))
            self.wfile.flush()
        except OSError:
            pass


class _TCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class IngestServer:
    """Listener bound to `address`; frames land on `self.queue` in arrival order."""

    def __init__(self, address=("127.0.0.1", 0), queue_size: int = 64):
        self.queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self.closed = threading.Event()
        self.frames_by_agent: dict = {}
        self._lock = threading.Lock()
        self._server = _TCPServer(address, _Handler)
        self._server.ingest = self
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def count(self, agent):
        with self._lock:
            self.frames_by_agent[agent] = self.frames_by_agent.get(agent, 0) + 1

    def start(self) -> "IngestServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.closed.set()
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(address, queue_size: int = 64) -> IngestServer:
    return IngestServer(address, queue_size).start()


class AgentClient:
    """Blocking client that sends messages and returns each status byte."""

    def __init__(self, address, agent_id: int = 0, timeout: float = 30.0):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.agent_id = agent_id

    def _send(self, data: bytes) -> int:
        self.sock.sendall(data)
        b = self.sock.recv(1)
        if not b:
            raise ProtocolError("server closed the connection", STATUS_CLOSED)
        return b[0]

    def hello(self) -> int:
        return self._send(encode_message(MSG_HELLO, self.agent_id))

    def send_frame(self, packet) -> int:
        return self._send(encode_message(MSG_FRAME, packet))

    def send_raw(self, data: bytes) -> int:
        return self._send(data)

    def bye(self) -> int:
        return self._send(encode_message(MSG_BYE))

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def send_packets(address, packets, agent_id: int = 0) -> list:
    """Hello, every packet, bye; returns the status bytes received."""
    with AgentClient(address, agent_id) as c:
        acks = [c.hello()]
        acks += [c.send_frame(p) for p in packets]
        acks.append(c.bye())
    return acks
