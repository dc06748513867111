"""Alice/Bob post-processing session over a framed byte stream.

Message order (A = Alice, B = Bob)::

    A<->B HELLO        version + digest of the shared configuration
    B->A  DETECTIONS   single-click rounds: index, code (0 Z, 1 D1, 2 D2)
    A->B  DETECTIONS   per record: sent state 0..3, or 4 for a Z state (bit withheld)
    B->A  ESTIMATE     sample positions + Bob's bits
    A->B  ESTIMATE     Alice's bits at those positions (sample then discarded)
    per frame:
      B->A SHUFFLE_SEED frame index, start, length, per-round seeds
      B->A PARITY_REQ / A->B PARITY_RESP   as often as Cascade needs
    B->A  VERIFY       64-bit tag of the corrected key, masked by 64 reserved bits
    A->B  VERIFY       1 = match
    A->B  PA_SEED      m = l, Toeplitz seed bits
    A->B  CONFIRM      tag seed + tag of the final key
    B->A  CONFIRM      1 = match
    A->B  OTP_BLOB     flag, key offset, ciphertext (flag 0: nothing to send)

Any failure sends ABORT (reason code + text) when possible and leaves both
sides without key material.  The classical channel is assumed authenticated.
A MAC object can be plugged in; each frame is then followed by ``mac.size``
tag bytes over the raw frame.  The default :class:`NoopMac` adds nothing and
leaves a warning entry at the head of the transcript.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import math
import socket
import struct
import threading
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import wire
from .cascade import AliceParityServer, CascadeConfig, reconcile
from .channel import ChannelParams, CountsRecord, RoundLog, sample_log
from .core import ProtocolParams, SecurityParams, SentState
from .finite_key import AnalysisSettings, KeyLengthReport, analyze
from .optics import D1, D2
from .otp import InsufficientKey, KeyStore, otp_decrypt, otp_encrypt
from .prng import XorShift64Star
from .privacy import pa_extract, toeplitz_hash
from .wire import Tag

PROTOCOL_VERSION = 1
WITHHELD = 4  # Alice's sift answer for a Z state: basis revealed, bit not


class Phase(str, Enum):
    HELLO = "HELLO"
    SIFT = "SIFT"
    ESTIMATE = "ESTIMATE"
    CASCADE = "CASCADE"
    VERIFY = "VERIFY"
    PA = "PA"
    CONFIRM = "CONFIRM"
    OTP = "OTP"
    DONE = "DONE"
    ABORT = "ABORT"


ABORT_CODES = {
    "timeout": 1,
    "framing_error": 2,
    "verify_mismatch": 3,
    "negotiation_mismatch": 4,
    "version_mismatch": 5,
    "confirm_mismatch": 6,
    "protocol_violation": 7,
    "insufficient_key": 8,
    "io_error": 9,
}
ABORT_NAMES = {v: k for k, v in ABORT_CODES.items()}


class SessionAbort(Exception):
    def __init__(self, reason: str, detail: str = "", from_peer: bool = False):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
        self.from_peer = from_peer


@dataclass(frozen=True)
class SessionConfig:
    """Everything both endpoints must agree on (hashed into HELLO)."""

    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    security: SecurityParams = field(default_factory=SecurityParams)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    N: int = 10**7
    channel_seed: int = 0
    sample_fraction: float = 0.01
    verify_bits: int = 64
    cascade_K: float = 0.73
    cascade_rounds: int = 3
    cascade_frame_bits: int = 1 << 20
    cascade_growth: float = 1.0
    refined: bool = False
    timeout_s: float = wire.DEFAULT_TIMEOUT_S
    version: int = PROTOCOL_VERSION

    def shared_dict(self) -> dict:
        d = {
            "protocol": self.protocol.to_dict(),
            "channel": self.channel.to_dict(),
            "security": self.security.to_dict(),
            "analysis": self.analysis.to_dict(),
        }
        for k in ("N", "channel_seed", "sample_fraction", "verify_bits", "cascade_K",
                  "cascade_rounds", "cascade_frame_bits", "cascade_growth", "refined"):
            d[k] = getattr(self, k)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.shared_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def cascade(self, seeds=()) -> CascadeConfig:
        return CascadeConfig(K=self.cascade_K, rounds=self.cascade_rounds,
                             frame_bits=self.cascade_frame_bits, growth=self.cascade_growth,
                             shuffle_seeds=tuple(seeds))


@dataclass
class SessionReport:
    role: str
    success: bool
    phase: str
    abort_reason: str | None = None
    abort_detail: str = ""
    abort_from_peer: bool = False
    final_key: np.ndarray | None = None
    l: int = 0
    counts: dict | None = None
    key_report: dict | None = None
    n_sifted: int = 0
    sample_bits: int = 0
    sample_errors: int = 0
    parity_bits: int = 0
    tag_bits: int = 0
    confirm_bits: int = 0  # sent after hashing, so outside leak_ec
    disclosed_bits: int = 0
    leak_ec: int = 0
    transcript: list = field(default_factory=list)
    transcript_hash: str = ""
    authenticated: bool = False
    otp_plaintext: bytes | None = None
    otp_offset: int | None = None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("final_key")
        d.pop("otp_plaintext")
        d["final_key_sha256"] = (hashlib.sha256(np.packbits(self.final_key).tobytes()).hexdigest()
                                 if self.final_key is not None else None)
        return d


logger = logging.getLogger(__name__)

NOOP_MAC_WARNING = "UNAUTHENTICATED CHANNEL: no MAC applied; security assumes an authenticated link"


class NoopMac:
    """Placeholder MAC: empty tags, always verifies."""

    size = 0
    authenticates = False

    def tag(self, data: bytes) -> bytes:
        return b""

    def verify(self, data: bytes, tag: bytes) -> bool:
        return True


class HmacSha256:
    """Example keyed MAC; the key must come from a pre-shared secret."""

    size = 32
    authenticates = True

    def __init__(self, key: bytes):
        self.key = bytes(key)

    def tag(self, data: bytes) -> bytes:
        return hmac.new(self.key, data, hashlib.sha256).digest()

    def verify(self, data: bytes, tag: bytes) -> bool:
        return hmac.compare_digest(self.tag(data), tag)


class _Link:
    """Frame I/O plus transcript bookkeeping."""

    def __init__(self, transport, report: SessionReport, mac=None):
        self.t = transport
        self.report = report
        self.mac = mac if mac is not None else NoopMac()
        self._hash = hashlib.sha256()
        report.authenticated = bool(self.mac.authenticates)
        if not report.authenticated:
            report.transcript.append({"dir": "local", "warning": NOOP_MAC_WARNING})
            logger.warning("%s (%s)", NOOP_MAC_WARNING, report.role)

    def _log(self, direction: str, frame: wire.WireFrame, raw: bytes):
        self._hash.update(direction.encode() + raw)
        self.report.transcript.append({
            "dir": direction, "tag": frame.tag.name, "len": frame.length,
            "sha256": hashlib.sha256(frame.payload).hexdigest()[:16],
        })

    def send(self, tag: Tag, payload: bytes = b""):
        raw = wire.write_frame(self.t, tag, payload)
        if self.mac.size:
            self.t.send(self.mac.tag(raw))
        self._log("tx", wire.WireFrame(tag, payload), raw)

    def recv(self, *expected: Tag) -> wire.WireFrame:
        frame, raw = wire.read_frame(self.t)
        if self.mac.size and not self.mac.verify(raw, self.t.recv_exact(self.mac.size)):
            raise SessionAbort("protocol_violation", "MAC check failed")
        self._log("rx", frame, raw)
        if frame.tag is Tag.ABORT:
            code = frame.payload[0] if frame.payload else 0
            raise SessionAbort(ABORT_NAMES.get(code, "protocol_violation"),
                               frame.payload[1:].decode(errors="replace"), from_peer=True)
        if expected and frame.tag not in expected:
            raise SessionAbort("protocol_violation", f"got {frame.tag.name}, expected "
                               + "/".join(t.name for t in expected))
        return frame

    def digest(self) -> str:
        return self._hash.hexdigest()


def expand_seed(seed: int, nbits: int) -> np.ndarray:
    """Deterministic bit stream from the shared xorshift64* generator, MSB first."""
    gen = XorShift64Star(seed, 0x7A6)
    words = np.array([gen.next() for _ in range((nbits + 63) // 64)], dtype=">u8")
    return np.unpackbits(words.view(np.uint8))[:nbits]


def _tag(key: np.ndarray, seed: int, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    return toeplitz_hash(key, expand_seed(seed, len(key) + m - 1), m)


def _u8(data: bytes, i: int = 0) -> int:
    if len(data) <= i:
        raise wire.TruncatedFrame("missing byte")
    return data[i]


def _counts_from_sift(cfg: SessionConfig, bob_codes: np.ndarray, alice_codes: np.ndarray,
                      n_z: int) -> CountsRecord:
    def c(bcode, acode):
        return int(np.count_nonzero((bob_codes == bcode) & (alice_codes == acode)))

    p = cfg.protocol
    return CountsRecord(
        N=cfg.N, mu=p.mu, n_z=n_z, E_z=None,
        n_00_D0=c(0, SentState.VAC_VAC),
        n_00_D1=c(1, SentState.VAC_VAC), n_00_D2=c(2, SentState.VAC_VAC),
        n_0a_D1=c(1, SentState.VAC_ALPHA), n_0a_D2=c(2, SentState.VAC_ALPHA),
        n_a0_D1=c(1, SentState.ALPHA_VAC), n_a0_D2=c(2, SentState.ALPHA_VAC),
        n_aa_D1=c(1, SentState.ALPHA_ALPHA), n_aa_D2=c(2, SentState.ALPHA_ALPHA),
        P_00=p.p_0, P_aa=p.p_alpha_alpha, distance_km=cfg.channel.distance_km,
    )


def _key_length(cfg: SessionConfig, counts: CountsRecord, n_key: int, leak: int,
                sample_bits: int, sample_errors: int) -> KeyLengthReport:
    e = sample_errors / sample_bits if sample_bits else 0.0
    # the finite-key bound applies to the bits that actually enter hashing
    c = replace(counts, n_z=n_key, E_z=e)
    if n_key == 0:
        return analyze(replace(c, n_z=0), cfg.security, cfg.analysis, cfg.refined, leak_bits=leak)
    return analyze(c, cfg.security, cfg.analysis, cfg.refined, leak_bits=leak)


def simulate_views(cfg: SessionConfig, log: RoundLog | None = None):
    """(alice_rounds, alice_states), (bob_rounds, bob_codes, bob_bits) from the shared simulation."""
    log = log or sample_log(cfg.channel, cfg.protocol, cfg.N, cfg.channel_seed)
    r = log.records
    alice = (r["round"].copy(), r["state"].copy())
    single = r["bob_basis"] != 255
    code = np.where(r["mask"] == D1, 1, np.where(r["mask"] == D2, 2, 0)).astype(np.uint8)
    bob = (r["round"][single].copy(), code[single], r["bob_bit"][single].copy())
    return alice, bob


def _hello(link: _Link, cfg: SessionConfig, role: str):
    mine = {"version": cfg.version, "role": role, "digest": cfg.digest()}
    link.send(Tag.HELLO, json.dumps(mine, sort_keys=True).encode())
    frame = link.recv(Tag.HELLO)
    try:
        peer = json.loads(frame.payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise SessionAbort("framing_error", "HELLO payload is not JSON") from None
    if peer.get("version") != cfg.version:
        raise SessionAbort("version_mismatch", f"peer version {peer.get('version')}")
    if peer.get("role") == role:
        raise SessionAbort("negotiation_mismatch", "both endpoints claim the same role")
    if peer.get("digest") != mine["digest"]:
        raise SessionAbort("negotiation_mismatch", "configuration digests differ")


def _alice(link: _Link, cfg: SessionConfig, seed: int, report: SessionReport,
           send_data: bytes | None, views):
    rng = np.random.default_rng([seed, 1])
    (a_rounds, a_states) = views
    report.phase = Phase.HELLO.value
    _hello(link, cfg, "alice")

    report.phase = Phase.SIFT.value
    payload = link.recv(Tag.DETECTIONS).payload
    rounds, off = wire.unpack_u64s(payload)
    codes, _ = wire.unpack_u8s(payload, off)
    if len(codes) != len(rounds) or (codes > 2).any():
        raise SessionAbort("protocol_violation", "malformed detection list")
    idx = np.searchsorted(a_rounds, rounds)
    ok = (idx < len(a_rounds)) & (a_rounds[np.minimum(idx, len(a_rounds) - 1)] == rounds)
    states = np.zeros(len(rounds), dtype=np.uint8)  # rounds outside our log: nothing was sent
    states[ok] = a_states[idx[ok]]
    is_z_state = (states == SentState.VAC_ALPHA) | (states == SentState.ALPHA_VAC)
    answer = np.where((codes == 0) & is_z_state, WITHHELD, states).astype(np.uint8)
    link.send(Tag.DETECTIONS, wire.pack_u8s(answer))
    key_sel = answer == WITHHELD
    key = (states[key_sel] == SentState.ALPHA_VAC).astype(np.uint8)
    counts = _counts_from_sift(cfg, codes, answer, int(key_sel.sum()))
    report.n_sifted = len(key)

    report.phase = Phase.ESTIMATE.value
    payload = link.recv(Tag.ESTIMATE).payload
    pos, off = wire.unpack_u32s(payload)
    bob_bits, _ = wire.unpack_bits(payload, off)
    if len(bob_bits) != len(pos) or (pos >= len(key)).any() or len(np.unique(pos)) != len(pos):
        raise SessionAbort("protocol_violation", "bad sample positions")
    mine = key[pos]
    link.send(Tag.ESTIMATE, wire.pack_bits(mine))
    report.sample_bits = len(pos)
    report.sample_errors = int(np.count_nonzero(mine != bob_bits))
    key = np.delete(key, pos)

    report.phase = Phase.CASCADE.value
    server = None
    frame_start = 0
    while True:
        frame = link.recv(Tag.SHUFFLE_SEED, Tag.PARITY_REQ, Tag.VERIFY)
        if frame.tag is Tag.SHUFFLE_SEED:
            fidx, frame_start, flen = struct.unpack_from(">III", frame.payload)
            seeds, _ = wire.unpack_u64s(frame.payload, 12)
            if frame_start + flen > len(key) or len(seeds) != cfg.cascade_rounds:
                raise SessionAbort("protocol_violation", "bad frame announcement")
            server = AliceParityServer(key[frame_start:frame_start + flen],
                                       cfg.cascade([int(s) for s in seeds]))
        elif frame.tag is Tag.PARITY_REQ:
            if server is None:
                raise SessionAbort("protocol_violation", "parity request before shuffle seed")
            q = _decode_queries(frame.payload)
            try:
                ans = server(q)
            except ValueError as exc:
                raise SessionAbort("protocol_violation", str(exc)) from None
            link.send(Tag.PARITY_RESP, wire.pack_bits(ans))
            report.parity_bits += len(ans)
        else:
            break

    report.phase = Phase.VERIFY.value
    vseed = struct.unpack_from(">Q", frame.payload)[0]
    btag, _ = wire.unpack_bits(frame.payload, 8)
    body, reserved = _split_reserved(key, cfg.verify_bits)
    mtag = min(cfg.verify_bits, len(body))
    if len(btag) != mtag:
        raise SessionAbort("protocol_violation", "verification tag has the wrong length")
    mytag = _tag(body, vseed, mtag) ^ reserved[:mtag]
    report.tag_bits += mtag
    if not np.array_equal(mytag, btag):
        raise SessionAbort("verify_mismatch", "corrected keys differ")
    link.send(Tag.VERIFY, b"\x01")

    report.phase = Phase.PA.value
    leak = report.parity_bits + mtag
    krep = _key_length(cfg, counts, len(body), leak, report.sample_bits, report.sample_errors)
    l = krep.l
    pa_seed = rng.integers(0, 2, len(body) + l - 1 if l else 0, dtype=np.uint8)
    link.send(Tag.PA_SEED, struct.pack(">I", l) + wire.pack_bits(pa_seed))
    final = pa_extract(body, l, pa_seed)

    report.phase = Phase.CONFIRM.value
    cseed = int(rng.integers(0, 2**63))
    m = min(cfg.verify_bits, l)
    link.send(Tag.CONFIRM, struct.pack(">Q", cseed) + wire.pack_bits(_tag(final, cseed, m)))
    report.confirm_bits = m
    if _u8(link.recv(Tag.CONFIRM).payload) != 1:
        raise SessionAbort("confirm_mismatch", "peer reports different final key")

    report.phase = Phase.OTP.value
    if send_data is not None:
        store = KeyStore(final)
        try:
            ct, offset = otp_encrypt(store, send_data)
        except InsufficientKey as exc:
            raise SessionAbort("insufficient_key", str(exc)) from None
        link.send(Tag.OTP_BLOB, struct.pack(">BQI", 1, offset, len(ct)) + ct)
        report.otp_offset = offset
    else:
        link.send(Tag.OTP_BLOB, struct.pack(">BQI", 0, 0, 0))
    _finish(report, counts, krep, final)


def _bob(link: _Link, cfg: SessionConfig, seed: int, report: SessionReport, views):
    rng = np.random.default_rng([seed, 2])
    (b_rounds, b_codes, b_bits) = views
    report.phase = Phase.HELLO.value
    _hello(link, cfg, "bob")

    report.phase = Phase.SIFT.value
    link.send(Tag.DETECTIONS, wire.pack_u64s(b_rounds) + wire.pack_u8s(b_codes))
    answer, _ = wire.unpack_u8s(link.recv(Tag.DETECTIONS).payload)
    if len(answer) != len(b_rounds) or (answer > WITHHELD).any():
        raise SessionAbort("protocol_violation", "malformed sift answer")
    key_sel = (answer == WITHHELD) & (b_codes == 0)
    key = b_bits[key_sel].astype(np.uint8)
    counts = _counts_from_sift(cfg, b_codes, answer, int(key_sel.sum()))
    report.n_sifted = len(key)

    report.phase = Phase.ESTIMATE.value
    k = min(len(key), math.ceil(cfg.sample_fraction * len(key)))
    pos = np.sort(rng.choice(len(key), size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    link.send(Tag.ESTIMATE, wire.pack_u32s(pos) + wire.pack_bits(key[pos]))
    alice_bits, _ = wire.unpack_bits(link.recv(Tag.ESTIMATE).payload)
    if len(alice_bits) != k:
        raise SessionAbort("protocol_violation", "sample answer has the wrong length")
    report.sample_bits = k
    report.sample_errors = int(np.count_nonzero(alice_bits != key[pos]))
    key = np.delete(key, pos)
    # Laplace estimate: never zero, so block lengths stay finite
    e_est = (report.sample_errors + 1) / (k + 2)

    report.phase = Phase.CASCADE.value
    corrected = []
    for fidx, start in enumerate(range(0, len(key), cfg.cascade_frame_bits)):
        part = key[start:start + cfg.cascade_frame_bits]
        seeds = [int(s) for s in rng.integers(0, 2**63, cfg.cascade_rounds)]
        link.send(Tag.SHUFFLE_SEED, struct.pack(">III", fidx, start, len(part)) + wire.pack_u64s(seeds))

        def oracle(q, _fidx=fidx):
            link.send(Tag.PARITY_REQ, _encode_queries(_fidx, q))
            bits, _ = wire.unpack_bits(link.recv(Tag.PARITY_RESP).payload)
            if len(bits) != len(q):
                raise SessionAbort("protocol_violation", "parity answer has the wrong length")
            report.parity_bits += len(bits)
            return bits

        res = reconcile(part, oracle, e_est, cfg.cascade(seeds))
        corrected.append(res.corrected_key)
    key = np.concatenate(corrected) if corrected else key

    report.phase = Phase.VERIFY.value
    body, reserved = _split_reserved(key, cfg.verify_bits)
    mtag = min(cfg.verify_bits, len(body))
    vseed = int(rng.integers(0, 2**63))
    link.send(Tag.VERIFY, struct.pack(">Q", vseed) + wire.pack_bits(_tag(body, vseed, mtag) ^ reserved[:mtag]))
    report.tag_bits += mtag
    if _u8(link.recv(Tag.VERIFY).payload) != 1:
        raise SessionAbort("verify_mismatch", "peer rejected the verification tag")

    report.phase = Phase.PA.value
    leak = report.parity_bits + mtag
    krep = _key_length(cfg, counts, len(body), leak, report.sample_bits, report.sample_errors)
    payload = link.recv(Tag.PA_SEED).payload
    (l,) = struct.unpack_from(">I", payload)
    pa_seed, _ = wire.unpack_bits(payload, 4)
    if l != krep.l:
        raise SessionAbort("negotiation_mismatch", f"peer key length {l}, ours {krep.l}")
    if len(pa_seed) != (len(body) + l - 1 if l else 0):
        raise SessionAbort("protocol_violation", "privacy-amplification seed has the wrong length")
    final = pa_extract(body, l, pa_seed)

    report.phase = Phase.CONFIRM.value
    payload = link.recv(Tag.CONFIRM).payload
    cseed = struct.unpack_from(">Q", payload)[0]
    atag, _ = wire.unpack_bits(payload, 8)
    match = np.array_equal(atag, _tag(final, cseed, min(cfg.verify_bits, l)))
    report.confirm_bits = len(atag)
    link.send(Tag.CONFIRM, b"\x01" if match else b"\x00")
    if not match:
        raise SessionAbort("confirm_mismatch", "final keys differ")

    report.phase = Phase.OTP.value
    payload = link.recv(Tag.OTP_BLOB).payload
    flag, offset, n = struct.unpack_from(">BQI", payload)
    if flag:
        ct = payload[13:13 + n]
        if len(ct) != n:
            raise wire.TruncatedFrame("OTP blob shorter than declared")
        try:
            report.otp_plaintext = otp_decrypt(KeyStore(final), ct, offset)
        except (InsufficientKey, ValueError) as exc:
            raise SessionAbort("insufficient_key", str(exc)) from None
        report.otp_offset = offset
    _finish(report, counts, krep, final)


_QUERY_DTYPE = np.dtype([("round", "u1"), ("lo", ">u4"), ("hi", ">u4")])


def _encode_queries(frame_index: int, q: np.ndarray) -> bytes:
    rec = np.zeros(len(q), dtype=_QUERY_DTYPE)
    rec["round"], rec["lo"], rec["hi"] = q[:, 0], q[:, 1], q[:, 2]
    return struct.pack(">II", frame_index, len(q)) + rec.tobytes()


def _decode_queries(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise wire.TruncatedFrame("parity request header")
    _, n = struct.unpack_from(">II", payload)
    if len(payload) != 8 + n * _QUERY_DTYPE.itemsize:
        raise wire.TruncatedFrame("parity request body")
    rec = np.frombuffer(payload, dtype=_QUERY_DTYPE, offset=8)
    return np.stack([rec["round"].astype(np.int64), rec["lo"].astype(np.int64),
                     rec["hi"].astype(np.int64)], axis=1)


def _split_reserved(key: np.ndarray, nbits: int):
    r = min(nbits, len(key))
    return key[: len(key) - r], key[len(key) - r:]


def _finish(report: SessionReport, counts: CountsRecord, krep: KeyLengthReport, final: np.ndarray):
    report.counts = counts.to_dict()
    report.key_report = krep.to_dict()
    report.l = krep.l
    report.final_key = final
    report.leak_ec = report.parity_bits + report.tag_bits
    report.disclosed_bits = (report.parity_bits + report.sample_bits + report.tag_bits
                             + report.confirm_bits)
    report.success = True
    report.phase = Phase.DONE.value


def run_session(role: str, transport, config: SessionConfig, seed: int = 0,
                send_data: bytes | None = None, log: RoundLog | None = None,
                views=None, mac=None) -> SessionReport:
    """Run one endpoint to completion; never raises for protocol-level failures."""
    if role not in ("alice", "bob"):
        raise ValueError("role must be 'alice' or 'bob'")
    report = SessionReport(role=role, success=False, phase=Phase.HELLO.value)
    link = _Link(transport, report, mac)
    try:
        if views is None:
            a_view, b_view = simulate_views(config, log)
            views = a_view if role == "alice" else b_view
        if role == "alice":
            _alice(link, config, seed, report, send_data, views)
        else:
            _bob(link, config, seed, report, views)
    except SessionAbort as exc:
        _abort(link, report, exc.reason, exc.detail, exc.from_peer)
    except wire.TransportTimeout as exc:
        _abort(link, report, "timeout", str(exc))
    except wire.FrameError as exc:
        _abort(link, report, "framing_error", f"{exc.kind}: {exc}")
    except (wire.TransportClosed, OSError, struct.error) as exc:
        reason = "framing_error" if isinstance(exc, struct.error) else "io_error"
        _abort(link, report, reason, str(exc))
    report.transcript_hash = link.digest()
    return report


def _abort(link: _Link, report: SessionReport, reason: str, detail: str, from_peer: bool = False):
    report.success = False
    report.phase = Phase.ABORT.value
    report.abort_reason = reason
    report.abort_detail = detail
    report.abort_from_peer = from_peer
    report.final_key = None
    report.otp_plaintext = None
    if not from_peer:
        try:
            link.send(Tag.ABORT, bytes([ABORT_CODES.get(reason, 7)]) + detail.encode()[:200])
        except Exception:  # the peer may already be gone
            pass


def loopback(config: SessionConfig, seed: int = 0, send_data: bytes | None = None,
             wrap_bob=None, wrap_alice=None, log: RoundLog | None = None, mac=None):
    """Run both endpoints in threads over a socket pair; returns (alice, bob) reports."""
    sa, sb = socket.socketpair()
    ta = wire.SocketTransport(sa, config.timeout_s)
    tb = wire.SocketTransport(sb, config.timeout_s)
    if wrap_alice:
        ta = wrap_alice(ta)
    if wrap_bob:
        tb = wrap_bob(tb)
    a_view, b_view = simulate_views(config, log)
    out = {}

    def run(name, t, **kw):
        out[name] = run_session(name, t, config, seed, mac=mac, **kw)
        # closing our end unblocks a peer still waiting after our abort
        t.close() if hasattr(t, "close") else None

    th = threading.Thread(target=run, args=("alice", ta), kwargs={"send_data": send_data, "views": a_view})
    th.start()
    run("bob", tb, views=b_view)
    th.join()
    return out["alice"], out["bob"]
