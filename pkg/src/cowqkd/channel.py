"""Fiber channel and receiver model: expected counts, Monte Carlo runs, fixtures.

The Monte Carlo sampler is event-driven: every round is independent, so a
block of ``B`` rounds is sampled by first drawing how many rounds register a
click and where they sit, then the (sent state, click pattern) of each.  The
result is distributed exactly as a round-by-round simulation, but its cost
scales with the number of detections rather than with ``N``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import ProtocolParams, SentState
from .optics import D0E, D0L, D1, D2, CoherentSuperposition, OpticalPath, click_probabilities

# Insertion losses of the receiver elements (dB).  The quoted detector
# efficiencies already include them, so they are not applied by default.
ELEMENT_INSERTION_LOSS_DB = {
    "Cir 1->2": 0.51,
    "Cir 2->3": 0.47,
    "BS-70%": 0.2,
    "BS-30%": 0.37,
    "PC0": 0.1,
    "PC1": 0.08,
    "PC2": 0.17,
}
# which receiver arm each element sits on; anything else counts as common loss
ELEMENT_ARM = {
    "Cir 1->2": "x", "Cir 2->3": "x", "BS-70%": "x", "PC1": "x", "PC2": "x",
    "BS-30%": "z", "PC0": "z",
}


@dataclass(frozen=True)
class ChannelParams:
    distance_km: float = 0.0
    atten_db_per_km: float = 0.161
    eff: dict = field(default_factory=lambda: {"D0": 0.762, "D1": 0.46, "D2": 0.46})
    dark_hz: dict = field(default_factory=lambda: {"D0": 7.0, "D1": 1.0, "D2": 11.0})
    gate_s: float = 800e-12
    visibility: float = 0.99
    window_loss_db: float = 3.0
    insertion_losses_db: dict = field(default_factory=dict)
    d1_thinning: float = 0.0
    z_flip_prob: float = 0.002
    interferometer_phase: float = 0.0

    def __post_init__(self):
        if self.distance_km < 0 or self.atten_db_per_km < 0 or self.window_loss_db < 0:
            raise ValueError("distances and losses must be non-negative")
        if any(v < 0 for v in self.insertion_losses_db.values()):
            raise ValueError("insertion losses must be non-negative")
        if any(v < 0 for v in self.dark_hz.values()) or self.gate_s < 0:
            raise ValueError("dark rates and gate duration must be non-negative")
        for name, v in [("visibility", self.visibility), ("d1_thinning", self.d1_thinning),
                        ("z_flip_prob", self.z_flip_prob), *self.eff.items()]:
            if not 0 <= v <= 1:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def _arm_loss_db(self, arm: str) -> float:
        return sum(v for k, v in self.insertion_losses_db.items()
                   if ELEMENT_ARM.get(k, "common") == arm)

    def transmittance(self) -> float:
        """Common-path power transmission: fiber plus shared insertion loss."""
        db = self.atten_db_per_km * self.distance_km + self._arm_loss_db("common")
        return 10 ** (-db / 10)

    def optical_path(self, z_split: float) -> OpticalPath:
        z_extra = 10 ** (-self._arm_loss_db("z") / 10)
        x_extra = 10 ** (-(self.window_loss_db + self._arm_loss_db("x")) / 10)
        return OpticalPath(
            transmittance=self.transmittance(),
            interferometer_phase=self.interferometer_phase,
            visibility=self.visibility,
            detector_eff={"D0": self.eff["D0"] * z_extra, "D1": self.eff["D1"],
                          "D2": self.eff["D2"]},
            dark_prob={k: min(1.0, v * self.gate_s) for k, v in self.dark_hz.items()},
            z_split=z_split,
            x_arm_transmittance=x_extra,
            d1_thinning=self.d1_thinning,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        return cls(**d)


_COUNT_FIELDS = (
    "n_z", "n_00_D0", "n_00_D1", "n_00_D2", "n_0a_D1", "n_0a_D2",
    "n_a0_D1", "n_a0_D2", "n_aa_D1", "n_aa_D2",
)


@dataclass(frozen=True)
class CountsRecord:
    """Aggregate counts of one run.

    Counts are observed integers for real or sampled data and floats for
    expectations.  ``n_0a_*`` are interferometer clicks for ``|0>|a>``
    (Z bit 0), ``n_a0_*`` for ``|a>|0>`` (Z bit 1).  The ``*_prime`` fields
    hold published refined vacuum counts; ``original`` keeps the raw values
    replaced by :func:`cowqkd.finite_key.refine_counts`.
    """

    N: float
    mu: float
    n_z: float
    E_z: float | None
    n_00_D0: float
    n_00_D1: float
    n_00_D2: float
    n_0a_D1: float
    n_0a_D2: float
    n_a0_D1: float
    n_a0_D2: float
    n_aa_D1: float
    n_aa_D2: float
    P_00: float = 0.1
    P_aa: float = 0.1
    n_00_D1_prime: float | None = None
    n_00_D2_prime: float | None = None
    distance_km: float | None = None
    refined: bool = False
    original: dict | None = None

    def __post_init__(self):
        for name in _COUNT_FIELDS:
            v = getattr(self, name)
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"{name}={v} must be a finite non-negative count")
            if v > self.N:
                raise ValueError(f"{name}={v} exceeds N={self.N}")
        if self.E_z is not None and not 0 <= self.E_z <= 1:
            raise ValueError(f"E_z={self.E_z} outside [0, 1]")
        if not (0 < self.P_00 <= 1 and 0 < self.P_aa <= 1):
            raise ValueError("P_00 and P_aa must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None and not (k == "refined" and not v)}

    @classmethod
    def from_dict(cls, d: dict) -> "CountsRecord":
        jsonschema.validate(d, COUNTS_SCHEMA)
        return cls(**d)

    def scaled(self, factor: float) -> "CountsRecord":
        """Every count and N multiplied by ``factor`` (E_z and mu unchanged)."""
        upd = {k: getattr(self, k) * factor for k in _COUNT_FIELDS}
        return replace(self, N=self.N * factor, **upd)


_num = {"type": "number", "minimum": 0}
COUNTS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["N", "mu", "n_z", "E_z", *_COUNT_FIELDS[1:]],
    "properties": {
        "N": {"type": "number", "exclusiveMinimum": 0},
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "E_z": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        **{k: _num for k in _COUNT_FIELDS},
        "P_00": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "P_aa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "n_00_D1_prime": _num,
        "n_00_D2_prime": _num,
        "distance_km": _num,
        "refined": {"type": "boolean"},
        "original": {"type": "object"},
    },
}


class CountsSchemaError(ValueError):
    pass


def load_counts(path) -> CountsRecord:
    with open(path) as fh:
        raw = json.load(fh)
    try:
        return CountsRecord.from_dict(raw)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CountsSchemaError(f"{path}: field {where}: {exc.message}") from None
    except (TypeError, ValueError) as exc:
        raise CountsSchemaError(f"{path}: {exc}") from None


def store_counts(record: CountsRecord, path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=2) + "\n")


FIXTURE_DISTANCES = (25, 50, 75, 100)
# reconciliation leakage measured alongside the 100 km run (bits)
MEASURED_LEAK_BITS = {100: 74145}


def fixture_path(distance_km: int) -> Path:
    if distance_km not in FIXTURE_DISTANCES:
        raise KeyError(f"no bundled fixture for {distance_km} km")
    return Path(str(resources.files("cowqkd") / "data" / f"measured_{distance_km}km.json"))


def bundled_counts(distance_km: int) -> CountsRecord:
    return load_counts(fixture_path(distance_km))


# ---------------------------------------------------------------------------
# expected counts


def _state_stats(channel: ChannelParams, protocol: ProtocolParams):
    path = channel.optical_path(protocol.z_split)
    return {s: click_probabilities(CoherentSuperposition.sent(s, protocol.mu), path)
            for s in SentState}


def _apply_flip(e_raw: float, flip: float) -> float:
    return flip + (1 - 2 * flip) * e_raw


def expected_counts(channel: ChannelParams, protocol: ProtocolParams, N: float) -> CountsRecord:
    """Expected value of every count for ``N`` emitted pulse pairs.

    ``E_z`` is ``None`` when no Z-basis detection is expected.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    stats = _state_stats(channel, protocol)
    probs = protocol.state_probs()

    def n(state, bit):
        return N * probs[state] * stats[state].p_single(bit)

    z_ok = n(SentState.VAC_ALPHA, D0L) + n(SentState.ALPHA_VAC, D0E)
    z_bad = n(SentState.VAC_ALPHA, D0E) + n(SentState.ALPHA_VAC, D0L)
    n_z = z_ok + z_bad
    e_z = _apply_flip(z_bad / n_z, channel.z_flip_prob) if n_z > 0 else None
    return CountsRecord(
        N=N, mu=protocol.mu, n_z=n_z, E_z=e_z,
        n_00_D0=n(SentState.VAC_VAC, D0E) + n(SentState.VAC_VAC, D0L),
        n_00_D1=n(SentState.VAC_VAC, D1), n_00_D2=n(SentState.VAC_VAC, D2),
        n_0a_D1=n(SentState.VAC_ALPHA, D1), n_0a_D2=n(SentState.VAC_ALPHA, D2),
        n_a0_D1=n(SentState.ALPHA_VAC, D1), n_a0_D2=n(SentState.ALPHA_VAC, D2),
        n_aa_D1=n(SentState.ALPHA_ALPHA, D1), n_aa_D2=n(SentState.ALPHA_ALPHA, D2),
        P_00=protocol.p_0, P_aa=protocol.p_alpha_alpha,
        distance_km=channel.distance_km,
    )


# ---------------------------------------------------------------------------
# Monte Carlo

BASIS_NONE, BASIS_Z, BASIS_X = 255, 0, 1
NO_BIT = 255

ROUND_DTYPE = np.dtype([
    ("round", "<u8"),
    ("state", "u1"),  # SentState code
    ("mask", "u1"),  # registered click pattern, bits D0e=1 D0l=2 D1=4 D2=8
    ("bob_basis", "u1"),  # 0 Z, 1 X, 255 not a single click
    ("bob_bit", "u1"),  # Z single clicks only: early->1, late->0 (after flips)
    ("reserved", "<u4"),
])
assert ROUND_DTYPE.itemsize == 16

ROUNDLOG_MAGIC = b"COWRLOG\x01"
ROUNDLOG_HEADER = struct.Struct("<8sIIQQdQ")  # magic, version, rec size, count, N, mu, seed


@dataclass
class RoundLog:
    """Records of every round in which at least one detector registered.

    Rounds without any registered click are not stored; ``N`` gives the total.
    """

    records: np.ndarray
    N: int
    mu: float
    seed: int = 0

    def __len__(self):
        return len(self.records)

    def aggregate(self, P_00: float, P_aa: float) -> CountsRecord:
        r = self.records
        st, mask = r["state"], r["mask"]

        def cnt(state, bit):
            return int(np.count_nonzero((st == state) & (mask == bit)))

        zrows = (r["bob_basis"] == BASIS_Z) & np.isin(st, (SentState.VAC_ALPHA, SentState.ALPHA_VAC))
        alice_bit = (st[zrows] == SentState.ALPHA_VAC).astype(np.uint8)
        n_z = int(np.count_nonzero(zrows))
        errs = int(np.count_nonzero(alice_bit != r["bob_bit"][zrows]))
        return CountsRecord(
            N=self.N, mu=self.mu, n_z=n_z, E_z=errs / n_z if n_z else None,
            n_00_D0=cnt(SentState.VAC_VAC, D0E) + cnt(SentState.VAC_VAC, D0L),
            n_00_D1=cnt(SentState.VAC_VAC, D1), n_00_D2=cnt(SentState.VAC_VAC, D2),
            n_0a_D1=cnt(SentState.VAC_ALPHA, D1), n_0a_D2=cnt(SentState.VAC_ALPHA, D2),
            n_a0_D1=cnt(SentState.ALPHA_VAC, D1), n_a0_D2=cnt(SentState.ALPHA_VAC, D2),
            n_aa_D1=cnt(SentState.ALPHA_ALPHA, D1), n_aa_D2=cnt(SentState.ALPHA_ALPHA, D2),
            P_00=P_00, P_aa=P_aa,
        )

    def sifted(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(round indices, Alice bits, Bob bits) of same-basis Z single clicks."""
        r = self.records
        sel = (r["bob_basis"] == BASIS_Z) & np.isin(r["state"], (SentState.VAC_ALPHA, SentState.ALPHA_VAC))
        rows = r[sel]
        alice = (rows["state"] == SentState.ALPHA_VAC).astype(np.uint8)
        return rows["round"].copy(), alice, rows["bob_bit"].copy()

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(ROUNDLOG_HEADER.pack(ROUNDLOG_MAGIC, 1, ROUND_DTYPE.itemsize,
                                          len(self.records), self.N, self.mu, self.seed))
            fh.write(self.records.astype(ROUND_DTYPE, copy=False).tobytes())

    @classmethod
    def read(cls, path) -> "RoundLog":
        data = Path(path).read_bytes()
        if len(data) < ROUNDLOG_HEADER.size:
            raise ValueError("truncated round log header")
        magic, version, size, count, N, mu, seed = ROUNDLOG_HEADER.unpack_from(data)
        if magic != ROUNDLOG_MAGIC or version != 1 or size != ROUND_DTYPE.itemsize:
            raise ValueError("not a version-1 round log")
        body = data[ROUNDLOG_HEADER.size:]
        if len(body) != count * size:
            raise ValueError(f"round log body has {len(body)} bytes, expected {count * size}")
        recs = np.frombuffer(body, dtype=ROUND_DTYPE).copy()
        return cls(recs, N, mu, seed)


def _outcome_table(channel: ChannelParams, protocol: ProtocolParams) -> np.ndarray:
    """P(state, registered pattern) for one round, shape (4, 16)."""
    stats = _state_stats(channel, protocol)
    probs = protocol.state_probs()
    table = np.zeros((4, 16))
    for s in SentState:
        table[int(s)] = probs[s] * np.clip(stats[s].pattern, 0.0, 1.0)
    return table


def _bob_view(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    basis = np.full(mask.shape, BASIS_NONE, dtype=np.uint8)
    bit = np.full(mask.shape, NO_BIT, dtype=np.uint8)
    basis[(mask == D0E) | (mask == D0L)] = BASIS_Z
    basis[(mask == D1) | (mask == D2)] = BASIS_X
    bit[mask == D0E] = 1
    bit[mask == D0L] = 0
    return basis, bit


DEFAULT_BLOCK = 1 << 26
MAX_EVENTS = 50_000_000


def sample_log(channel: ChannelParams, protocol: ProtocolParams, N: int, seed: int,
               block: int = DEFAULT_BLOCK) -> RoundLog:
    """Seeded Monte Carlo run; block ``b`` uses the substream ``(seed, b)``."""
    N = int(N)
    if N <= 0:
        raise ValueError("N must be positive")
    table = _outcome_table(channel, protocol)
    table[:, 0] = 0.0  # rounds without any registered click are implicit
    p_any = float(table.sum())
    if N * p_any > MAX_EVENTS:
        raise ValueError(f"about {N * p_any:.3g} detection events; use sample_counts instead")
    cat_p = table.ravel() / p_any if p_any > 0 else None
    chunks = []
    for b, start in enumerate(range(0, N, block)):
        size = min(block, N - start)
        rng = np.random.default_rng([seed, b])
        k = int(rng.binomial(size, p_any)) if p_any > 0 else 0
        if k == 0:
            continue
        pos = np.sort(rng.choice(size, size=k, replace=False)).astype(np.uint64) + np.uint64(start)
        cat = rng.choice(64, size=k, p=cat_p)
        rec = np.zeros(k, dtype=ROUND_DTYPE)
        rec["round"] = pos
        rec["state"] = cat // 16
        rec["mask"] = cat % 16
        basis, bit = _bob_view(rec["mask"])
        flips = (basis == BASIS_Z) & (rng.random(k) < channel.z_flip_prob)
        bit[flips] ^= 1
        rec["bob_basis"] = basis
        rec["bob_bit"] = bit
        chunks.append(rec)
    recs = np.concatenate(chunks) if chunks else np.zeros(0, dtype=ROUND_DTYPE)
    return RoundLog(recs, N, protocol.mu, seed)


def sample_run(channel: ChannelParams, protocol: ProtocolParams, N: int, seed: int):
    """Returns (CountsRecord, RoundLog, alice_raw_key, bob_raw_key).

    The raw keys are the sifted Z-basis bits in round order.
    """
    log = sample_log(channel, protocol, N, seed)
    counts = log.aggregate(protocol.p_0, protocol.p_alpha_alpha)
    counts = replace(counts, distance_km=channel.distance_km)
    _, alice, bob = log.sifted()
    return counts, log, alice, bob


def sample_counts(channel: ChannelParams, protocol: ProtocolParams, N: int, seed: int) -> CountsRecord:
    """Aggregate-only sampling for any N: one multinomial over (state, pattern)."""
    table = _outcome_table(channel, protocol)
    table[:, 0] = 0.0
    p = table.ravel()
    rng = np.random.default_rng([seed, 0xA66])
    p_full = np.append(p, max(0.0, 1.0 - p.sum()))
    draws = rng.multinomial(int(N), p_full)[:64].reshape(4, 16)

    def cnt(state, bit):
        return int(draws[int(state), bit])

    ok = cnt(SentState.VAC_ALPHA, D0L) + cnt(SentState.ALPHA_VAC, D0E)
    bad = cnt(SentState.VAC_ALPHA, D0E) + cnt(SentState.ALPHA_VAC, D0L)
    # independent bit flips after detection
    flip_ok = int(rng.binomial(ok, channel.z_flip_prob)) if ok else 0
    flip_bad = int(rng.binomial(bad, channel.z_flip_prob)) if bad else 0
    n_z = ok + bad
    errors = bad - flip_bad + flip_ok
    return CountsRecord(
        N=int(N), mu=protocol.mu, n_z=n_z, E_z=errors / n_z if n_z else None,
        n_00_D0=cnt(SentState.VAC_VAC, D0E) + cnt(SentState.VAC_VAC, D0L),
        n_00_D1=cnt(SentState.VAC_VAC, D1), n_00_D2=cnt(SentState.VAC_VAC, D2),
        n_0a_D1=cnt(SentState.VAC_ALPHA, D1), n_0a_D2=cnt(SentState.VAC_ALPHA, D2),
        n_a0_D1=cnt(SentState.ALPHA_VAC, D1), n_a0_D2=cnt(SentState.ALPHA_VAC, D2),
        n_aa_D1=cnt(SentState.ALPHA_ALPHA, D1), n_aa_D2=cnt(SentState.ALPHA_ALPHA, D2),
        P_00=protocol.p_0, P_aa=protocol.p_alpha_alpha, distance_km=channel.distance_km,
    )


def counts_field_names() -> list[str]:
    return [f.name for f in fields(CountsRecord)]
