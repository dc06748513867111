import hashlib
import socket
import struct
import threading
from dataclasses import replace

import numpy as np
import pytest

from cowqkd import wire
from cowqkd.cascade import block_lengths
from cowqkd.channel import ChannelParams
from cowqkd.core import ProtocolParams
from cowqkd.session import (ABORT_CODES, NOOP_MAC_WARNING, HmacSha256, SessionConfig, loopback,
                            run_session)
from cowqkd.wire import Tag

CFG_25 = SessionConfig(channel=ChannelParams(distance_km=25), protocol=ProtocolParams(mu=3.5e-3),
                       N=10**7, channel_seed=1)
CFG_KEY = SessionConfig(channel=ChannelParams(distance_km=0, z_flip_prob=0.005),
                        protocol=ProtocolParams(mu=8e-3), N=10**8, channel_seed=2)


class Tap:
    """Transport wrapper that records raw frames and can rewrite incoming ones."""

    def __init__(self, inner, mutate=None):
        self.inner, self.mutate = inner, mutate
        self.sent, self.received = [], []
        self._tag = None  # tag of the frame whose body comes next

    def send(self, data):
        self.sent.append(data)
        self.inner.send(data)

    def recv_exact(self, n):
        data = self.inner.recv_exact(n)
        if self._tag is None:
            length, tag = struct.unpack(">IB", data)
            if length == 0:
                self.received.append((tag, b""))
            else:
                self._tag = tag
            return data
        tag, self._tag = self._tag, None
        if self.mutate:
            data = self.mutate(tag, data)
        self.received.append((tag, data))
        return data

    def close(self):
        self.inner.close()


def frames(raw_list):
    out = []
    for raw in raw_list:
        f, _ = wire.decode_frame(raw)
        out.append(f)
    return out


def test_session_25km_identical_keys():
    a, b = loopback(CFG_25, seed=1)
    assert a.success and b.success
    assert np.array_equal(a.final_key, b.final_key)
    assert a.l == b.l and a.transcript_hash and a.authenticated is False


def test_session_with_key_material():
    a, b = loopback(CFG_KEY, seed=3)
    assert a.success and b.success and a.l > 10_000
    assert np.array_equal(a.final_key, b.final_key)
    assert a.disclosed_bits == b.disclosed_bits and a.leak_ec == b.leak_ec


def test_error_free_channel_top_level_parities_only():
    cfg = replace(CFG_KEY, channel=ChannelParams(distance_km=0, z_flip_prob=0.0,
                                                 dark_hz={"D0": 0, "D1": 0, "D2": 0}), N=3 * 10**7)
    a, b = loopback(cfg, seed=4)
    assert a.success and b.success and a.sample_errors == 0
    n = b.n_sifted - b.sample_bits
    e_est = 1 / (b.sample_bits + 2)
    frame_bits = cfg.cascade_frame_bits
    expected = 0
    for start in range(0, n, frame_bits):
        size = min(frame_bits, n - start)
        expected += sum(-(-size // k) for k in block_lengths(e_est, cfg.cascade(), size))
    assert b.parity_bits == expected
    assert np.array_equal(a.final_key, b.final_key)


def test_leak_accounting_matches_transcript():
    tap = {}

    def wrap(t):
        tap["bob"] = Tap(t)
        return tap["bob"]

    a, b = loopback(CFG_KEY, seed=5, wrap_bob=wrap)
    assert b.success
    t = tap["bob"]
    parity = sum(len(wire.unpack_bits(p)[0]) for tag, p in t.received if tag == Tag.PARITY_RESP)
    sample = sum(len(wire.unpack_bits(p)[0]) for tag, p in t.received if tag == Tag.ESTIMATE)
    sent = frames(t.sent)
    verify = sum(len(wire.unpack_bits(f.payload, 8)[0]) for f in sent if f.tag is Tag.VERIFY)
    confirm = sum(len(wire.unpack_bits(p, 8)[0]) for tag, p in t.received if tag == Tag.CONFIRM)
    assert b.parity_bits == parity and b.sample_bits == sample and b.tag_bits == verify
    assert b.disclosed_bits == parity + sample + verify + confirm
    assert b.leak_ec == parity + verify == b.key_report["leak_ec"]


def corrupt_first_parity(tag, data):
    if tag == Tag.PARITY_RESP and not getattr(corrupt_first_parity, "done", False):
        corrupt_first_parity.done = True
        data = bytearray(data)
        data[4] ^= 0x80
        return bytes(data)
    return data


def test_corrupted_parity_fails_closed():
    corrupt_first_parity.done = False
    a, b = loopback(CFG_25, seed=1, wrap_bob=lambda t: Tap(t, corrupt_first_parity))
    assert not a.success and not b.success
    assert a.abort_reason == b.abort_reason == "verify_mismatch"
    assert a.final_key is None and b.final_key is None
    assert b.summary()["final_key_sha256"] is None
    assert a.transcript[-1]["tag"] in ("ABORT", "VERIFY") or b.transcript[-1]["tag"] == "ABORT"


def test_otp_transfer():
    data = np.random.default_rng(0).bytes(1000)
    a, b = loopback(CFG_KEY, seed=6, send_data=data)
    assert b.otp_plaintext == data and a.otp_offset == b.otp_offset == 0


def test_otp_insufficient_key_aborts():
    a, b = loopback(CFG_25, seed=6, send_data=b"needs key")
    assert not a.success and a.abort_reason == "insufficient_key"
    assert b.abort_reason == "insufficient_key" and b.abort_from_peer


def test_determinism():
    runs = [loopback(CFG_KEY, seed=7) for _ in range(2)]
    (a1, b1), (a2, b2) = runs
    assert a1.transcript_hash == a2.transcript_hash and b1.transcript_hash == b2.transcript_hash
    assert a1.transcript == a2.transcript
    assert np.array_equal(a1.final_key, a2.final_key)
    a3, _ = loopback(CFG_KEY, seed=8)
    assert a3.transcript_hash != a1.transcript_hash


def _pair(cfg_a, cfg_b, **kw):
    sa, sb = socket.socketpair()
    out = {}
    ta = wire.SocketTransport(sa, 2.0)
    th = threading.Thread(target=lambda: out.setdefault("a", run_session("alice", ta, cfg_a, **kw)))
    th.start()
    out["b"] = run_session("bob", wire.SocketTransport(sb, 2.0), cfg_b)
    th.join()
    sa.close()
    sb.close()
    return out["a"], out["b"]


def test_negotiation_and_version_mismatch():
    a, b = _pair(CFG_25, replace(CFG_25, sample_fraction=0.02))
    assert a.abort_reason == "negotiation_mismatch" or b.abort_reason == "negotiation_mismatch"
    assert not a.success and not b.success
    a, b = _pair(CFG_25, replace(CFG_25, version=2))
    assert "version_mismatch" in (a.abort_reason, b.abort_reason)


def test_timeout_and_peer_gone():
    sa, sb = socket.socketpair()
    rep = run_session("bob", wire.SocketTransport(sb, 0.2), CFG_25)
    assert rep.abort_reason == "timeout" and rep.final_key is None
    sa.close()
    sa, sb = socket.socketpair()
    sa.close()
    rep = run_session("alice", wire.SocketTransport(sb, 0.2), CFG_25)
    assert rep.abort_reason == "io_error"


def test_garbage_frame_is_framing_error():
    sa, sb = socket.socketpair()
    sa.sendall(b"\x00\x00\x00\x01\x55\x00")
    rep = run_session("alice", wire.SocketTransport(sb, 0.5), CFG_25)
    assert rep.abort_reason == "framing_error"
    # the abort frame carries the documented code
    head = sa.recv(5)
    length, tag = struct.unpack(">IB", head)
    body = sa.recv(length)
    assert tag == Tag.HELLO or tag == Tag.ABORT
    if tag == Tag.HELLO:
        head = sa.recv(5)
        length, tag = struct.unpack(">IB", head)
        body = sa.recv(length)
    assert tag == Tag.ABORT and body[0] == ABORT_CODES["framing_error"]
    sa.close()


def test_summary_hides_key():
    a, _ = loopback(CFG_KEY, seed=9)
    s = a.summary()
    assert "final_key" not in s and s["final_key_sha256"] == hashlib.sha256(np.packbits(a.final_key).tobytes()).hexdigest()


@pytest.mark.slow
def test_keys_equal_over_seeded_sessions():
    cfg0 = SessionConfig(channel=ChannelParams(distance_km=0), protocol=ProtocolParams(mu=1e-2), N=3 * 10**7)
    with_key = 0
    for i in range(100):
        qber = (0.005, 0.01, 0.02, 0.03)[i % 4]
        cfg = replace(cfg0, channel=replace(cfg0.channel, z_flip_prob=qber), channel_seed=i)
        a, b = loopback(cfg, seed=i)
        if a.success and b.success:
            assert np.array_equal(a.final_key, b.final_key)
            with_key += a.l > 0
        else:
            assert a.final_key is None and b.final_key is None
    assert with_key >= 25


def test_noop_mac_leaves_warning():
    a, b = loopback(CFG_25, seed=1)
    for r in (a, b):
        assert r.transcript[0] == {"dir": "local", "warning": NOOP_MAC_WARNING}
        assert r.authenticated is False


def test_hmac_session_matches_unauthenticated_key():
    a0, _ = loopback(CFG_25, seed=1)
    a, b = loopback(CFG_25, seed=1, mac=HmacSha256(b"k" * 32))
    assert a.success and b.success and a.authenticated and b.authenticated
    assert np.array_equal(a.final_key, a0.final_key)
    assert all("warning" not in e for e in a.transcript)


def test_hmac_key_mismatch_aborts():
    sa, sb = socket.socketpair()
    out = {}

    def run(name, sock, key):
        t = wire.SocketTransport(sock, 5.0)
        out[name] = run_session(name, t, CFG_25, 1, mac=HmacSha256(key))
        t.close()

    th = threading.Thread(target=run, args=("alice", sa, b"a" * 32))
    th.start()
    run("bob", sb, b"b" * 32)
    th.join()
    assert not out["alice"].success and not out["bob"].success
    assert out["alice"].final_key is None and out["bob"].final_key is None
    assert "protocol_violation" in (out["alice"].abort_reason, out["bob"].abort_reason)
