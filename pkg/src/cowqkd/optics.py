"""Exact click statistics for superpositions of two-mode coherent states.

A state is a finite superposition of coherent branches ``c_i |a_i^e>|a_i^l>``
over the early and late time modes.  Bob's receiver is a passive, lossy
linear network followed by threshold detectors, so every detector mode ``d``
sees the amplitude ``b_d = T[d] @ a`` for a fixed complex transfer row
``T[d]``.

Threshold no-click on a set ``S`` of detector modes is the POVM element
``prod_d (1 - eta_d)^{n_d}``.  Pulled back through the lossy network (the
environment is traced out), its matrix element between two coherent branches
is::

    <a_i| E_S |a_j> = <a_i|a_j> * exp(-sum_{d in S} eta_d * conj(b_id) * b_jd)

which is the product of per-mode ``no_click_kernel`` values evaluated on the
detector modes, divided by their eta=0 values, times the full overlap.  In
particular loss never needs explicit environment modes: a loss ``t`` in front
of a detector is the same as evaluating the kernel at the pre-loss amplitude
with efficiency ``eta * t``.

Detector modes, in bit order of the pattern masks used throughout:
``D0e`` (Z arm, early slot), ``D0l`` (Z arm, late slot), ``D1`` and ``D2``
(the two outputs of the delay interferometer in the interference slot).
D1 is the constructive port for ``|a>|a>`` at zero phase.

Imperfect visibility ``V`` is a classical mixture of the interferometer at
phase ``phi`` (weight ``(1+V)/2``) and ``phi + pi`` (weight ``(1-V)/2``).
Dark counts are independent per detector gate.  Thinning of D1 discards each
registered D1 click with a fixed probability.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
import numpy as np

from .core import ProtocolParams, SentState, n_plus_minus

DETECTORS = ("D0e", "D0l", "D1", "D2")
D0E, D0L, D1, D2 = 1, 2, 4, 8  # pattern bits
ALL_MASK = 0b1111
NORM_TOL = 1e-10


def overlap(a, b) -> complex:
    """<a|b> for multimode coherent states given as amplitude sequences."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    expo = np.sum(-0.5 * np.abs(a) ** 2 - 0.5 * np.abs(b) ** 2 + np.conj(a) * b)
    return complex(np.exp(expo))


def no_click_kernel(a: complex, b: complex, eta: float) -> complex:
    """<a|(1-eta)^n|b> for single-mode coherent states."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency {eta} outside [0, 1]")
    return cmath.exp(-abs(a) ** 2 / 2 - abs(b) ** 2 / 2 + (1 - eta) * a.conjugate() * b)


@dataclass(frozen=True)
class CoherentSuperposition:
    """sum_i c_i |amp_early_i>|amp_late_i>, normalised on construction."""

    branches: tuple  # of (coef, amp_early, amp_late)

    def __post_init__(self):
        br = tuple((complex(c), complex(e), complex(l)) for c, e, l in self.branches)
        if not br:
            raise ValueError("empty superposition")
        object.__setattr__(self, "branches", br)

    @property
    def coefs(self) -> np.ndarray:
        return np.array([b[0] for b in self.branches])

    @property
    def amps(self) -> np.ndarray:
        """Shape (n_branches, 2): early and late amplitudes."""
        return np.array([[b[1], b[2]] for b in self.branches])

    def gram(self) -> np.ndarray:
        a = self.amps
        return np.array([[overlap(x, y) for y in a] for x in a])

    def norm2(self) -> float:
        c = self.coefs
        return float(np.real(np.conj(c) @ self.gram() @ c))

    def normalized(self) -> "CoherentSuperposition":
        s = math.sqrt(self.norm2())
        return CoherentSuperposition(tuple((c / s, e, l) for c, e, l in self.branches))

    # constructors -------------------------------------------------------
    @classmethod
    def coherent(cls, early: complex, late: complex) -> "CoherentSuperposition":
        return cls(((1.0, early, late),))

    @classmethod
    def vac_vac(cls) -> "CoherentSuperposition":
        return cls.coherent(0, 0)

    @classmethod
    def zero_z(cls, mu: float) -> "CoherentSuperposition":
        return cls.coherent(0, math.sqrt(mu))

    @classmethod
    def one_z(cls, mu: float) -> "CoherentSuperposition":
        return cls.coherent(math.sqrt(mu), 0)

    @classmethod
    def alpha_alpha(cls, mu: float) -> "CoherentSuperposition":
        a = math.sqrt(mu)
        return cls.coherent(a, a)

    @classmethod
    def zero_x(cls, mu: float) -> "CoherentSuperposition":
        n_plus, _ = n_plus_minus(mu)
        c = 1 / math.sqrt(n_plus)
        a = math.sqrt(mu)
        return cls(((c, 0, a), (c, a, 0)))

    @classmethod
    def one_x(cls, mu: float) -> "CoherentSuperposition":
        _, n_minus = n_plus_minus(mu)
        if n_minus == 0:
            raise ValueError("|1_x> does not exist at mu = 0")
        c = 1 / math.sqrt(n_minus)
        a = math.sqrt(mu)
        return cls(((c, 0, a), (-c, a, 0)))

    @classmethod
    def sent(cls, state: SentState, mu: float) -> "CoherentSuperposition":
        e, l = state.pattern
        a = math.sqrt(mu)
        return cls.coherent(a * e, a * l)


@dataclass(frozen=True)
class OpticalPath:
    """Bob's receiver as seen from the channel input.

    ``transmittance`` is the common loss (fiber plus shared insertion loss);
    ``x_arm_transmittance`` is extra loss on the interferometer arm only
    (time-window selection, interferometer insertion).  Efficiencies and dark
    probabilities are keyed ``D0``, ``D1``, ``D2``; D0 serves both Z slots.
    """

    transmittance: float = 1.0
    interferometer_phase: float = 0.0
    visibility: float = 1.0
    detector_eff: dict = field(default_factory=lambda: {"D0": 1.0, "D1": 1.0, "D2": 1.0})
    dark_prob: dict = field(default_factory=lambda: {"D0": 0.0, "D1": 0.0, "D2": 0.0})
    z_split: float = 0.30
    x_arm_transmittance: float = 1.0
    d1_thinning: float = 0.0

    def __post_init__(self):
        for name in ("transmittance", "visibility", "z_split", "x_arm_transmittance",
                     "d1_thinning"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for key in ("D0", "D1", "D2"):
            for m in (self.detector_eff, self.dark_prob):
                if not 0.0 <= m[key] <= 1.0:
                    raise ValueError(f"probability for {key} outside [0, 1]")

    def transfer(self, phase: float) -> np.ndarray:
        """Rows: D0e, D0l, D1, D2; columns: early, late input modes."""
        t = self.transmittance
        rz = math.sqrt(t * self.z_split)
        rx = math.sqrt(t * (1 - self.z_split) * self.x_arm_transmittance / 2)
        ph = cmath.exp(1j * phase)
        return np.array([
            [rz, 0],
            [0, rz],
            [rx, rx * ph],
            [rx, -rx * ph],
        ], dtype=complex)

    def etas(self) -> np.ndarray:
        e = self.detector_eff
        return np.array([e["D0"], e["D0"], e["D1"], e["D2"]], dtype=float)

    def darks(self) -> np.ndarray:
        d = self.dark_prob
        return np.array([d["D0"], d["D0"], d["D1"], d["D2"]], dtype=float)

    def phase_mixture(self) -> list[tuple[float, float]]:
        q = (1 + self.visibility) / 2
        out = [(q, self.interferometer_phase)]
        if q < 1:
            out.append((1 - q, self.interferometer_phase + math.pi))
        return out


@dataclass(frozen=True)
class ClickStats:
    """Probabilities of every registered click pattern for one input state.

    ``pattern[mask]`` is the probability that exactly the detector modes in
    ``mask`` register a click (bits D0e=1, D0l=2, D1=4, D2=8).
    """

    pattern: np.ndarray

    @property
    def p_none(self) -> float:
        return float(self.pattern[0])

    def p_click(self, bit: int) -> float:
        """Marginal probability that detector mode ``bit`` registers a click."""
        return float(sum(p for m, p in enumerate(self.pattern) if m & bit))

    def p_single(self, bit: int) -> float:
        """Only this detector mode clicks."""
        return float(self.pattern[bit])

    @property
    def p_x_both(self) -> float:
        return float(sum(p for m, p in enumerate(self.pattern) if m & D1 and m & D2))

    def as_dict(self) -> dict:
        return {
            "none": self.p_none,
            **{f"single_{name}": self.p_single(1 << i) for i, name in enumerate(DETECTORS)},
            **{f"click_{name}": self.p_click(1 << i) for i, name in enumerate(DETECTORS)},
            "x_both": self.p_x_both,
        }


def _pattern_probs_one_phase(state: CoherentSuperposition, path: OpticalPath,
                             phase: float) -> np.ndarray:
    c = state.coefs
    a = state.amps
    T = path.transfer(phase)
    eta = path.etas()
    dark = path.darks()
    b = a @ T.T  # (branches, detectors)
    gram = state.gram()
    weight = np.conj(c)[:, None] * c[None, :] * gram  # (i, j)
    # beta[i, j, d] = conj(b_id) * b_jd
    beta = np.conj(b)[:, None, :] * b[None, :, :]
    x = -eta[None, None, :] * beta
    f_none = (1 - dark) * np.exp(x)
    f_click = dark - (1 - dark) * np.expm1(x)
    keep = 1.0 - path.d1_thinning
    if keep < 1.0:
        # discarding D1 clicks moves weight from "click" to "none" on D1
        f_none[..., 2] = f_none[..., 2] + (1 - keep) * f_click[..., 2]
        f_click[..., 2] = keep * f_click[..., 2]
    out = np.empty(16)
    for mask in range(16):
        fac = np.ones_like(weight)
        for d in range(4):
            fac = fac * (f_click[..., d] if mask >> d & 1 else f_none[..., d])
        out[mask] = float(np.real(np.sum(weight * fac)))
    return out


def click_probabilities(state: CoherentSuperposition, path: OpticalPath) -> ClickStats:
    """Exact registered-click pattern probabilities for ``state`` through ``path``."""
    n2 = state.norm2()
    if abs(n2 - 1) > NORM_TOL:
        raise ValueError(f"state not normalised: norm^2 = {n2}")
    total = np.zeros(16)
    for w, phase in path.phase_mixture():
        total += w * _pattern_probs_one_phase(state, path, phase)
    return ClickStats(total)


def density_mixture_gap(mu: float) -> float:
    """Trace distance between the Z-basis and virtual X-basis mixtures.

    Both operators live in span{|0_z>, |1_z>}; they are expressed in that
    (non-orthogonal) basis and mapped to an orthonormal frame through the
    square root of the Gram matrix.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    n_plus, n_minus = n_plus_minus(mu)
    g = math.exp(-mu)  # <0_z|1_z>
    gram = np.array([[1.0, g], [g, 1.0]])
    w, v = np.linalg.eigh(gram)
    root = v @ np.diag(np.sqrt(w)) @ v.T
    rho_z = 0.5 * np.eye(2)
    vx0 = np.array([1.0, 1.0]) / math.sqrt(n_plus)
    vx1 = np.array([1.0, -1.0]) / math.sqrt(n_minus)
    rho_x = (n_plus * np.outer(vx0, vx0) + n_minus * np.outer(vx1, vx1)) / 4
    diff = root @ (rho_z - rho_x) @ root
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


_X_DETECTORS = {"D1": D1, "D2": D2}


def expected_counts_virtual(params: ProtocolParams, path: OpticalPath,
                            n_rounds: float) -> dict[str, float]:
    """Expected single-click counts at D1/D2 for the virtual X and real Z states.

    In the virtual picture the Z-basis rounds (``n_rounds * p_z`` of them)
    emit ``|0_x>`` with weight ``N+/4`` and ``|1_x>`` with weight ``N-/4``.
    Keys are ``n_0x_D1``, ``n_1x_D2``, ``n_0z_D1``, ... .
    """
    mu = params.mu
    n_plus, n_minus = n_plus_minus(mu)
    nz_rounds = n_rounds * params.p_z
    states = {
        "0x": (CoherentSuperposition.zero_x(mu), nz_rounds * n_plus / 4),
        "0z": (CoherentSuperposition.zero_z(mu), nz_rounds / 2),
        "1z": (CoherentSuperposition.one_z(mu), nz_rounds / 2),
    }
    if n_minus > 0:
        states["1x"] = (CoherentSuperposition.one_x(mu), nz_rounds * n_minus / 4)
    out = {}
    for label, (st, weight) in states.items():
        stats = click_probabilities(st, path)
        for name, bit in _X_DETECTORS.items():
            out[f"n_{label}_{name}"] = weight * stats.p_single(bit)
    for name in _X_DETECTORS:
        out.setdefault(f"n_1x_{name}", 0.0)
    return out
