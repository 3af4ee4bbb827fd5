"""O-TEE client, plain and aggressor servers, and offline token verification.

Sessions are sans-IO: ``start()`` and ``receive(data)`` return the bytes to
put on the wire. ``run_loopback`` pumps a client and a server in memory;
``make_tcp_server`` and ``connect_tcp`` drive the same objects over sockets.
"""
from __future__ import annotations

import enum
import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import elligator, ppet
from .device import DEFAULT_OMEGA, DeviceSim, MeasurementContext, Network, Omega, ProcessImage
from .group import CURVE, NotInGroup, Scalar, default_rng
from .handshake import (
    CERT_PLACEHOLDER,
    ODT_TOKEN_SIZE,
    ClientHello,
    FrameBuffer,
    FrameType,
    HeartbeatMessage,
    HeartbeatType,
    MacMismatch,
    DegenerateShare,
    MalformedFrame,
    ODTToken,
    ServerHello,
    SessionSecrets,
    Finished,
    check_finished,
    derive_secrets,
    dh_keygen,
    dh_shared,
    encode_frame,
    finished_mac,
)
from .primitives import SigKeyPair, hash256, hkdf_derive, sign, verify
from .witness import (
    DEFAULT_LOCATIONS,
    MeasureResult,
    Witness,
    compute_witness,
    measure,
    select_addresses,
)

log = logging.getLogger(__name__)


class HandshakeAborted(RuntimeError):
    pass


class Verdict(str, enum.Enum):
    PROTECTED = "Protected"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class VerificationOutcome:
    signature_ok: bool
    equality_ok: bool

    @property
    def verdict(self) -> Verdict:
        # a failed check never proves the device unprotected
        if self.signature_ok and self.equality_ok:
            return Verdict.PROTECTED
        return Verdict.INCONCLUSIVE


INCONCLUSIVE = VerificationOutcome(False, False)


@dataclass(frozen=True)
class OteeIdentity:
    keys: SigKeyPair
    device: str

    @classmethod
    def generate(cls, device: str, rng=None) -> "OteeIdentity":
        return cls(SigKeyPair.generate(rng), device)


class Registry:
    """Public keys of certified O-TEEs, mapped to their device."""

    def __init__(self):
        self._devices: dict[bytes, str] = {}

    def register(self, identity: OteeIdentity) -> None:
        self.register_key(identity.keys.pk, identity.device)

    def register_key(self, pk: bytes, device: str) -> None:
        self._devices[bytes(pk)] = device

    def __len__(self):
        return len(self._devices)

    def __iter__(self):
        return iter(self._devices)

    def signer_of(self, msg: bytes, sig: bytes) -> Optional[str]:
        for pk, device in self._devices.items():
            if verify(pk, msg, sig):
                return device
        return None

    def to_json(self) -> str:
        return json.dumps({pk.hex(): dev for pk, dev in self._devices.items()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Registry":
        reg = cls()
        for pk_hex, dev in json.loads(text).items():
            reg.register_key(bytes.fromhex(pk_hex), dev)
        return reg


def odt_message(y: bytes, z: bytes, k: bytes) -> bytes:
    return y + z + hash256(k)


def verify_odt(token: ODTToken, k: bytes, s: Scalar, registry: Registry) -> VerificationOutcome:
    """Offline check of a stored token against the session key and commitment."""
    signature_ok = registry.signer_of(odt_message(token.y, token.z, k), token.sigma) is not None
    try:
        y, z = CURVE.from_bytes(token.y), CURVE.from_bytes(token.z)
    except NotInGroup:
        return VerificationOutcome(signature_ok, False)
    return VerificationOutcome(signature_ok, CURVE.exp(y, s) == z)


@dataclass
class Otee:
    identity: OteeIdentity
    device: DeviceSim
    m: int = DEFAULT_LOCATIONS
    omega: Omega = DEFAULT_OMEGA

    def connect(self, process: ProcessImage, rng=None) -> "ClientSession":
        return ClientSession(rng, otee=self, process=process)


class _State(enum.Enum):
    START = "start"
    WAIT_SERVER_HELLO = "wait server hello"
    WAIT_CERT = "wait cert"
    WAIT_FINISHED = "wait finished"
    WAIT_HEARTBEAT = "wait heartbeat"
    OPEN = "open"
    DONE = "done"
    ABORTED = "aborted"


class _Session:
    def __init__(self, rng):
        self.rng = default_rng(rng)
        self.state = _State.START
        self.transcript: list[tuple[str, FrameType, bytes]] = []
        self.secrets: Optional[SessionSecrets] = None
        self._buffer = FrameBuffer()
        self._handshake = b""

    def _send(self, frame: bytes, handshake: bool = True) -> bytes:
        self.transcript.append(("out", FrameType(frame[0]), frame))
        if handshake:
            self._handshake += frame
        return frame

    def receive(self, data: bytes) -> bytes:
        if self.state in (_State.DONE, _State.ABORTED):
            return b""
        out = b""
        try:
            for ftype, body in self._buffer.feed(data):
                frame = encode_frame(ftype, body)
                self.transcript.append(("in", ftype, frame))
                out += self._on_frame(ftype, body, frame)
        except (MalformedFrame, MacMismatch, DegenerateShare) as exc:
            self.state = _State.ABORTED
            raise HandshakeAborted(str(exc)) from exc
        return out

    def _unexpected(self, ftype: FrameType):
        state, self.state = self.state, _State.ABORTED
        raise HandshakeAborted(f"unexpected {ftype.name} in state {state.value}")

    def shape(self) -> list[tuple[str, int, int]]:
        """Direction, frame type and length of every frame, in order."""
        return [(d, int(t), len(f)) for d, t, f in self.transcript]


class ClientSession(_Session):
    """A TLS client. With an O-TEE attached it emits a token on every handshake."""

    def __init__(self, rng=None, otee: Optional[Otee] = None, process: Optional[ProcessImage] = None):
        super().__init__(rng)
        if otee is not None and process is None:
            raise ValueError("an O-TEE client needs the process it measures")
        self.otee = otee
        self.process = process
        self.u = None
        self.context: Optional[MeasurementContext] = None
        self.measurement: Optional[MeasureResult] = None
        self.witness: Optional[Witness] = None
        self.token: Optional[ODTToken] = None
        self._heartbeat: Optional[HeartbeatMessage] = None

    @property
    def done(self) -> bool:
        return self.state == _State.DONE

    def start(self) -> bytes:
        if self.otee is not None:
            self.u = ppet.prover_init(self.rng)
            n0 = CURVE.to_bytes(self.u)
        else:
            n0 = self.rng.getrandbits(256).to_bytes(32, "little")
        self._x, share = dh_keygen(self.rng)
        self.state = _State.WAIT_SERVER_HELLO
        return self._send(ClientHello(n0, share).encode())

    def _on_frame(self, ftype, body, frame) -> bytes:
        if self.state == _State.WAIT_SERVER_HELLO and ftype == FrameType.SERVER_HELLO:
            self.server_hello = ServerHello.decode_body(body)
            self._handshake += frame
            hs = dh_shared(self._x, self.server_hello.key_share)
            self.secrets = derive_secrets(hs, self._handshake)
            self.state = _State.WAIT_CERT
            return b""
        if self.state == _State.WAIT_CERT and ftype == FrameType.CERT:
            self._handshake += frame
            self.state = _State.WAIT_FINISHED
            return b""
        if self.state == _State.WAIT_FINISHED and ftype == FrameType.FINISHED:
            check_finished(self.secrets, self._handshake, Finished.decode_body(body).mac)
            self._handshake += frame
            out = self._send(Finished(finished_mac(self.secrets, self._handshake)).encode())
            if self.otee is None:
                self.state = _State.DONE
                return out
            self.token = self._make_token(self.server_hello.random)
            self._heartbeat = HeartbeatMessage.request(self.token.to_bytes(), self.rng)
            self.state = _State.WAIT_HEARTBEAT
            return out + self._send(self._heartbeat.encode(), handshake=False)
        if self.state == _State.WAIT_HEARTBEAT and ftype == FrameType.HEARTBEAT:
            hb = HeartbeatMessage.decode_body(body)
            if hb.hb_type == HeartbeatType.RESPONSE and hb.payload == self._heartbeat.payload:
                self.state = _State.DONE
            return b""
        self._unexpected(ftype)

    def _make_token(self, n1: bytes) -> ODTToken:
        otee, k = self.otee, self.secrets.k
        self.context = otee.device.new_session()
        addrs = select_addresses(k, otee.m, otee.omega)
        self.measurement = measure(otee.device.view(self.process, self.context), addrs)
        self.witness = compute_witness(self.measurement)
        v = elligator.decode_uniform(n1)
        resp = ppet.prover_respond(self.u, v, self.witness.scalar, self.rng)
        y, z = CURVE.to_bytes(resp.y), CURVE.to_bytes(resp.z)
        return ODTToken(y, z, sign(otee.identity.keys.sk, odt_message(y, z, k)))


@dataclass
class ServerRecord:
    session_id: int
    mode: str
    k: Optional[bytes] = None
    token: Optional[ODTToken] = None
    outcome: Optional[VerificationOutcome] = None
    aborted: bool = False
    commitment: Optional[ppet.VerifierState] = field(default=None, repr=False)

    def to_json(self) -> dict:
        tok = self.token
        return {
            "session_id": self.session_id,
            "y": tok.y.hex() if tok else None,
            "z": tok.z.hex() if tok else None,
            "sigma": tok.sigma.hex() if tok else None,
            "k_hash": hash256(self.k).hex() if self.k else None,
            "outcome": self.outcome.verdict.value if self.outcome else None,
        }


class ServerSession(_Session):
    """A standard server: random nonce, echoes heartbeats, never inspects them."""

    mode = "plain"

    def __init__(self, session_id: int = 0, rng=None):
        super().__init__(rng)
        self.session_id = session_id
        self._record: Optional[ServerRecord] = None

    def server_random(self, hello: ClientHello, k: bytes) -> bytes:
        return self.rng.getrandbits(256).to_bytes(32, "little")

    def on_heartbeat(self, hb: HeartbeatMessage) -> None:
        pass

    def _on_frame(self, ftype, body, frame) -> bytes:
        if self.state == _State.START and ftype == FrameType.CLIENT_HELLO:
            hello = ClientHello.decode_body(body)
            self._handshake += frame
            y, share = dh_keygen(self.rng)
            hs = dh_shared(y, hello.key_share)
            n1 = self.server_random(hello, hkdf_derive(hs))
            out = self._send(ServerHello(n1, share).encode())
            self.secrets = derive_secrets(hs, self._handshake)
            out += self._send(encode_frame(FrameType.CERT, CERT_PLACEHOLDER))
            out += self._send(Finished(finished_mac(self.secrets, self._handshake)).encode())
            self.state = _State.WAIT_FINISHED
            return out
        if self.state == _State.WAIT_FINISHED and ftype == FrameType.FINISHED:
            check_finished(self.secrets, self._handshake, Finished.decode_body(body).mac)
            self._handshake += frame
            self.state = _State.OPEN
            return b""
        if self.state == _State.OPEN and ftype == FrameType.HEARTBEAT:
            hb = HeartbeatMessage.decode_body(body)
            if hb.hb_type != HeartbeatType.REQUEST:
                return b""
            self.on_heartbeat(hb)
            return self._send(hb.response(self.rng).encode(), handshake=False)
        self._unexpected(ftype)

    def close(self) -> ServerRecord:
        """End the session; later calls return the same record."""
        if self._record is None:
            self._record = self._close()
        return self._record

    def _close(self) -> ServerRecord:
        aborted = self.state != _State.OPEN
        self.state = _State.DONE if not aborted else _State.ABORTED
        return ServerRecord(
            self.session_id, self.mode, self.secrets.k if self.secrets else None, aborted=aborted
        )


class AggressorSession(ServerSession):
    """Hides a commitment to the expected witness in ServerHello.random and
    keeps the token from the first heartbeat for offline verification."""

    mode = "aggressor"

    def __init__(
        self,
        expected_image: ProcessImage,
        registry: Registry,
        session_id: int = 0,
        rng=None,
        m: int = DEFAULT_LOCATIONS,
        omega: Omega = DEFAULT_OMEGA,
    ):
        super().__init__(session_id, rng)
        self.expected_image = expected_image
        self.registry = registry
        self.m = m
        self.omega = omega
        self.commitment: Optional[ppet.VerifierState] = None
        self.token: Optional[ODTToken] = None

    def server_random(self, hello: ClientHello, k: bytes) -> bytes:
        try:
            u = CURVE.from_bytes(hello.random)
        except NotInGroup:
            u = CURVE.random_element(self.rng)
        addrs = select_addresses(k, self.m, self.omega)
        # only a clean measurement is ever acceptable; gaps in the
        # reconstruction stay zero and will simply fail to match
        words = measure(self.expected_image, addrs).words
        expected = compute_witness(MeasureResult(1, words))
        self.commitment = ppet.verifier_commit(
            u, expected.scalar, self.rng, require_encodable=True
        )
        return self.commitment.nonce

    def on_heartbeat(self, hb: HeartbeatMessage) -> None:
        if self.token is None and len(hb.payload) == ODT_TOKEN_SIZE:
            self.token = ODTToken.from_bytes(hb.payload)

    def _close(self) -> ServerRecord:
        record = super()._close()
        record.mode = self.mode
        record.commitment = self.commitment
        if self.token is None or record.aborted:
            record.outcome = INCONCLUSIVE
        else:
            record.token = self.token
            record.outcome = verify_odt(self.token, record.k, self.commitment.s, self.registry)
        return record


class Server:
    """Session factory for one listener; numbering is shared and thread-safe."""

    def __init__(
        self,
        mode: str = "plain",
        expected_image: Optional[ProcessImage] = None,
        registry: Optional[Registry] = None,
        rng=None,
        m: int = DEFAULT_LOCATIONS,
        omega: Omega = DEFAULT_OMEGA,
    ):
        if mode not in ("plain", "aggressor"):
            raise ValueError(f"unknown server mode {mode!r}")
        if mode == "aggressor" and expected_image is None:
            raise ValueError("an aggressor needs the expected agent image")
        self.mode = mode
        self.expected_image = expected_image
        self.registry = registry if registry is not None else Registry()
        self.rng = default_rng(rng)
        self.m, self.omega = m, omega
        self.records: list[ServerRecord] = []
        self._next_id = 0
        self._lock = threading.Lock()

    def new_session(self) -> ServerSession:
        with self._lock:
            self._next_id += 1
            sid = self._next_id
        if self.mode == "plain":
            return ServerSession(sid, self.rng)
        return AggressorSession(
            self.expected_image, self.registry, sid, self.rng, self.m, self.omega
        )

    def finish(self, session: ServerSession) -> ServerRecord:
        record = session.close()
        with self._lock:
            self.records.append(record)
        return record


def run_loopback(client: ClientSession, server: ServerSession) -> ServerRecord:
    """Run one connection in memory until neither side has anything to say."""
    data = client.start()
    while data:
        data = server.receive(data)
        if not data:
            break
        data = client.receive(data)
    return server.close()


def client_for(
    network: Network,
    process: ProcessImage,
    otees: dict[str, Otee],
    rng=None,
) -> ClientSession:
    """Client that terminates a connection opened by ``process``, after routing."""
    device, fronting = network.resolve_endpoint(process)
    otee = otees.get(device.id) if device.has_otee else None
    if otee is None:
        return ClientSession(rng)
    return otee.connect(fronting, rng)


def otee_connect(
    network: Network,
    process: ProcessImage,
    otees: dict[str, Otee],
    server: ServerSession,
    rng=None,
) -> tuple[ClientSession, ServerRecord]:
    client = client_for(network, process, otees, rng)
    record = run_loopback(client, server)
    return client, record


# --- sockets -----------------------------------------------------------------

def _recv_some(sock: socket.socket) -> bytes:
    data = sock.recv(65536)
    if not data:
        raise ConnectionError("peer closed the connection")
    return data


def connect_tcp(client: ClientSession, address: tuple[str, int], timeout: float = 10.0) -> ClientSession:
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.sendall(client.start())
        while not client.done:
            out = client.receive(_recv_some(sock))
            if out:
                sock.sendall(out)
    return client


def make_tcp_server(
    server: Server,
    address: tuple[str, int],
    on_record: Optional[Callable[[ServerRecord], None]] = None,
) -> socketserver.ThreadingTCPServer:
    """Threaded listener; one session per connection, recorded on close."""

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            session = server.new_session()
            try:
                while True:
                    data = self.request.recv(65536)
                    if not data:
                        break
                    out = session.receive(data)
                    if out:
                        self.request.sendall(out)
            except (HandshakeAborted, OSError) as exc:
                log.info("session %d aborted: %s", session.session_id, exc)
            record = server.finish(session)
            if on_record is not None:
                on_record(record)

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    tcp = socketserver.ThreadingTCPServer(address, Handler)
    tcp.daemon_threads = True
    return tcp
