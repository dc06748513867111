"""Protocol constants, state encoding and small scalar helpers.

Everything here is pure and cheap; the other modules import from this one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

PROB_TOL = 1e-12

# Number of concentration-bound evaluations that share the secrecy budget:
# upper bounds for the four monitored counts, lower bounds for the two D1
# counts, and the expectation-to-observation step for phase errors.
N_EPS_USES = 7
EPS_USE_NAMES = (
    "upper_aa_D1",
    "upper_aa_D2",
    "upper_00_D1",
    "upper_00_D2",
    "lower_aa_D1",
    "lower_00_D1",
    "eps_2",
)


class Basis(str, Enum):
    Z = "Z"
    X = "X"


class XState(str, Enum):
    VACUUM_PAIR = "vacuum_pair"
    BRIGHT_PAIR = "bright_pair"


class SentState(int, Enum):
    """The four physically prepared pulse pairs, coded as used on disk and wire."""

    VAC_VAC = 0  # |0>|0>, X basis
    VAC_ALPHA = 1  # |0>|a>, Z basis bit 0
    ALPHA_VAC = 2  # |a>|0>, Z basis bit 1
    ALPHA_ALPHA = 3  # |a>|a>, X basis

    @property
    def basis(self) -> Basis:
        return Basis.Z if self in (SentState.VAC_ALPHA, SentState.ALPHA_VAC) else Basis.X

    @property
    def pattern(self) -> tuple[int, int]:
        """(early, late) occupation: 1 where the pulse carries amplitude alpha."""
        return _PATTERNS[self]


_PATTERNS = {
    SentState.VAC_VAC: (0, 0),
    SentState.VAC_ALPHA: (0, 1),
    SentState.ALPHA_VAC: (1, 0),
    SentState.ALPHA_ALPHA: (1, 1),
}


@dataclass(frozen=True)
class ProtocolParams:
    """Source configuration.

    ``p_z`` is the Z-basis probability; the X basis is split into the vacuum
    pair (``p_0``) and the bright pair (``p_alpha_alpha``).  The defaults are
    the 40/40/10/10 split used in the 100 km run.
    """

    mu: float = 2.43e-4
    p_z: float = 0.8
    p_0: float = 0.1
    p_alpha_alpha: float = 0.1
    z_split: float = 0.30
    repetition_hz: float = 5e8

    def __post_init__(self):
        if not self.mu > 0 or not math.isfinite(self.mu):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not 0 < self.z_split < 1:
            raise ValueError(f"z_split must lie in (0, 1), got {self.z_split}")
        if self.repetition_hz <= 0:
            raise ValueError("repetition_hz must be positive")
        probs = (self.p_z, self.p_0, self.p_alpha_alpha)
        if any(p < 0 for p in probs):
            raise ValueError(f"negative probability in {probs}")
        total = sum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"p_z + p_0 + p_alpha_alpha = {total!r}, expected 1")
        if total != 1.0:
            object.__setattr__(self, "p_z", self.p_z / total)
            object.__setattr__(self, "p_0", self.p_0 / total)
            object.__setattr__(self, "p_alpha_alpha", self.p_alpha_alpha / total)

    @property
    def p_x(self) -> float:
        return self.p_0 + self.p_alpha_alpha

    def state_probs(self) -> dict[SentState, float]:
        return {
            SentState.VAC_VAC: self.p_0,
            SentState.VAC_ALPHA: self.p_z / 2,
            SentState.ALPHA_VAC: self.p_z / 2,
            SentState.ALPHA_ALPHA: self.p_alpha_alpha,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        return cls(**d)


@dataclass(frozen=True)
class SecurityParams:
    """Correctness/secrecy targets and the per-use failure probabilities.

    ``eps_overrides`` maps names from ``EPS_USE_NAMES`` to explicit values;
    anything not overridden gets ``eps_sec / 7``.
    """

    eps_cor: float = 1e-15
    eps_sec: float = 1e-10
    eps_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eps_cor", "eps_sec"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for k, v in self.eps_overrides.items():
            if k not in EPS_USE_NAMES:
                raise ValueError(f"unknown epsilon use {k!r}")
            if not 0 < v < 1:
                raise ValueError(f"epsilon override {k}={v} outside (0, 1)")

    @property
    def eps_a_each(self) -> float:
        return self.eps_sec / N_EPS_USES

    @property
    def eps_2(self) -> float:
        return epsilon_budget(self)["eps_2"]

    def to_dict(self) -> dict:
        return {"eps_cor": self.eps_cor, "eps_sec": self.eps_sec,
                "eps_overrides": dict(self.eps_overrides)}

    @classmethod
    def from_dict(cls, d: dict) -> "SecurityParams":
        return cls(**d)

    def scaled(self, factor: float) -> "SecurityParams":
        """Same targets with every per-use epsilon multiplied by ``factor``."""
        budget = epsilon_budget(self)
        return replace(self, eps_overrides={k: v * factor for k, v in budget.items()})


@dataclass(frozen=True)
class LogicalRound:
    basis: Basis
    z_bit: int | None
    x_state: XState | None
    early_pulse: float
    late_pulse: float

    @property
    def sent_state(self) -> SentState:
        occ = (int(self.early_pulse > 0), int(self.late_pulse > 0))
        return {v: k for k, v in _PATTERNS.items()}[occ]


def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable in bits."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy undefined for {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def n_plus_minus(mu: float) -> tuple[float, float]:
    """Normalisation factors 2(1 +- e^-mu) of the virtual X-basis states."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    e = math.exp(-mu)
    # -expm1 keeps N_minus accurate for tiny mu
    return 2.0 * (1.0 + e), -2.0 * math.expm1(-mu)


def encode_round(basis: Basis | str, choice, mu: float = 1.0) -> LogicalRound:
    """Pulse intensities for one logical round.

    ``choice`` is the key bit (0/1) in the Z basis or an ``XState`` in the X
    basis.  Bit 0 puts the pulse in the late slot, bit 1 in the early slot.
    """
    basis = Basis(basis)
    if basis is Basis.Z:
        if choice not in (0, 1) or isinstance(choice, (XState, bool)):
            raise ValueError(f"Z basis needs bit 0 or 1, got {choice!r}")
        early, late = (0.0, mu) if choice == 0 else (mu, 0.0)
        return LogicalRound(basis, int(choice), None, early, late)
    try:
        xs = XState(choice)
    except ValueError:
        raise ValueError(f"X basis needs an XState, got {choice!r}") from None
    level = 0.0 if xs is XState.VACUUM_PAIR else mu
    return LogicalRound(basis, None, xs, level, level)


def epsilon_budget(sec: SecurityParams) -> dict[str, float]:
    """Per-use failure probabilities: equal split of eps_sec unless overridden."""
    each = sec.eps_sec / N_EPS_USES
    out = {name: each for name in EPS_USE_NAMES}
    out.update(sec.eps_overrides)
    return out
