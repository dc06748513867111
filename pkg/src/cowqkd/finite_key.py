"""Finite-key security calculus.

Pipeline: observed monitor counts -> Kato expectation bounds -> bounds on the
virtual-state clicks ``n_0x^{D1}`` (lower) and ``n_0x^{D2}`` (upper) -> phase
error bound -> key length.

Gain bounds
-----------
Write ``A = n_aa/P_aa`` and ``B = n_00/P_00`` (monitor counts rescaled to the
full run).  The virtual state ``|0x>`` splits as ``c1|aa> + c0|00> + r`` with
``c1 = e^{mu/2}/sqrt(N+)``, ``c0 = e^{-mu/2}/sqrt(N+)`` and
``|r|^2 = (N-)^2 e^mu / (4 N+)``.  For any click operator ``0 <= M <= 1`` the
triangle inequality then gives, per emitted ``|0x>`` and rescaled to counts,

    upper = p_z/4 (e^{mu/2} sqrt(A) + e^{-mu/2} sqrt(B))^2
            + p_z N-/4 (e^mu N- N/4 + e^mu sqrt(N A) + sqrt(N B))
    lower = p_z/4 (e^mu A + e^{-mu} B - 2 sqrt(A B))
            - p_z N-/4 (e^mu sqrt(N A) + sqrt(N B))

The ``p_z`` factor puts the bounds on the same footing as the Z-state counts
``n_0a``/``n_a0`` they are combined with.  Two other forms are available for
comparison: ``"literal"`` (the ``N-/(4N+)`` and ``(N-)^2/(4N+)`` prefactors on
raw counts, no ``p_z``) and ``"yield"`` (``"literal"`` evaluated on per-round
yields, then rescaled by the number of emitted virtual states).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import mpmath

from .channel import CountsRecord
from .core import SecurityParams, binary_entropy, epsilon_budget, n_plus_minus

KATO_DPS = 50
REFINE_FACTOR = 0.352
BOUND_FORMS = ("derived", "literal", "yield")
FLUCTUATION_MODES = ("bright", "all", "none")
PHASE_SCALES = ("n_z", "N")
DEFAULT_F = 1.10


@dataclass(frozen=True)
class KatoInput:
    gamma_k: float
    k: float
    eps: float

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not 0 <= self.gamma_k <= self.k:
            raise ValueError(f"gamma_k={self.gamma_k} outside [0, k={self.k}]")


@dataclass(frozen=True)
class KatoResult:
    a: float
    b: float
    delta: float
    bound: float


def _kato(inp: KatoInput, upper: bool) -> KatoResult:
    with mpmath.workdps(KATO_DPS):
        g, k = mpmath.mpf(inp.gamma_k), mpmath.mpf(inp.k)
        le = mpmath.log(mpmath.mpf(inp.eps))
        sk = mpmath.sqrt(k)
        var = 9 * g * (k - g) - 2 * k * le  # > 0 since le < 0, so Gamma in {0, k} is regular
        C = mpmath.sqrt(-k**2 * le * var)
        den = 4 * (9 * k - 8 * le) * var
        base = 72 * sk * g * (k - g) * le - 16 * k**1.5 * le**2
        skew = 9 * mpmath.sqrt(2) * (k - 2 * g) * C
        if upper:
            a = 3 * (base + skew) / den
            b = mpmath.sqrt(18 * a**2 * k - (16 * a**2 + 24 * a * sk + 9 * k) * le) / (3 * mpmath.sqrt(2 * k))
        else:
            a = -3 * (base - skew) / den
            b = mpmath.sqrt(18 * a**2 * k - (16 * a**2 - 24 * a * sk + 9 * k) * le) / (3 * mpmath.sqrt(2 * k))
        delta = (b + a * (2 * g / k - 1)) * sk
        # at the edges the width is zero up to rounding; pin it there
        if (not upper and g == 0) or (upper and g == k):
            delta = mpmath.mpf(0)
        bound = min(g + delta, k) if upper else max(g - delta, mpmath.mpf(0))
        return KatoResult(float(a), float(b), float(delta), float(bound))


def kato_upper(inp: KatoInput) -> KatoResult:
    """Upper confidence bound on the expectation of a sum of ``k`` bounded trials."""
    return _kato(inp, upper=True)


def kato_lower(inp: KatoInput) -> KatoResult:
    """Lower confidence bound, clamped at zero."""
    return _kato(inp, upper=False)


def kato_failure_prob(a: float, b: float, k: float, upper: bool) -> float:
    """Failure probability implied by a given (a, b) pair."""
    s = 1 + 4 * a / (3 * math.sqrt(k)) if upper else 1 - 4 * a / (3 * math.sqrt(k))
    if s == 0:
        return 0.0  # exponent diverges: the bound holds surely
    return math.exp(-2 * (b * b - a * a) / (s * s))


# ---------------------------------------------------------------------------


def refine_counts(counts: CountsRecord) -> CountsRecord:
    """Replace the interferometer vacuum counts by 0.352 * n_00^{D0}, rounded up.

    The untouched values are kept in ``original``.
    """
    if counts.n_00_D0 is None:
        raise ValueError("refinement needs n_00_D0")
    r = math.ceil(REFINE_FACTOR * counts.n_00_D0 - 1e-9)
    return replace(
        counts, n_00_D1=r, n_00_D2=r, n_00_D1_prime=r, n_00_D2_prime=r, refined=True,
        original={"n_00_D1": counts.n_00_D1, "n_00_D2": counts.n_00_D2},
    )


@dataclass(frozen=True)
class MonitorBounds:
    """Expectation bounds on the monitored counts (``upper_*``/``lower_*``)."""

    upper_aa_D1: float
    upper_aa_D2: float
    upper_00_D1: float
    upper_00_D2: float
    lower_aa_D1: float
    lower_00_D1: float
    deltas: dict = field(default_factory=dict)
    k: float = 0.0
    fluctuation: str = "bright"


def bound_monitor_expectations(counts: CountsRecord, sec: SecurityParams,
                               fluctuation: str = "bright", k: float | None = None) -> MonitorBounds:
    """Kato bounds on the expectations of the four monitored counts.

    ``fluctuation`` picks which counts get confidence widths: ``"bright"``
    (the |aa> counts only), ``"all"``, or ``"none"`` (asymptotic diagnostic).
    ``k`` defaults to ``N``, the number of rounds each count is summed over.
    """
    if fluctuation not in FLUCTUATION_MODES:
        raise ValueError(f"fluctuation must be one of {FLUCTUATION_MODES}")
    eps = epsilon_budget(sec)
    k = counts.N if k is None else k
    widen = {"aa": fluctuation in ("bright", "all"), "00": fluctuation == "all"}
    out, deltas = {}, {}
    for name, w, det, upper in [
        ("upper_aa_D1", "aa", "D1", True), ("upper_aa_D2", "aa", "D2", True),
        ("upper_00_D1", "00", "D1", True), ("upper_00_D2", "00", "D2", True),
        ("lower_aa_D1", "aa", "D1", False), ("lower_00_D1", "00", "D1", False),
    ]:
        obs = getattr(counts, f"n_{w}_{det}")
        if widen[w]:
            res = (kato_upper if upper else kato_lower)(KatoInput(obs, k, eps[name]))
            out[name], deltas[name] = res.bound, res.delta
        else:
            out[name], deltas[name] = float(obs), 0.0
    return MonitorBounds(**out, deltas=deltas, k=k, fluctuation=fluctuation)


@dataclass(frozen=True)
class GainBounds:
    lower_n0x_D1: float
    upper_n0x_D2: float
    lower_unclamped: float
    form: str


def bound_n0x(counts: CountsRecord, mb: MonitorBounds, p_z: float = 0.8,
              form: str = "derived") -> GainBounds:
    """Lower bound on ``n_0x^{D1}`` and upper bound on ``n_0x^{D2}`` (see module doc)."""
    if form not in BOUND_FORMS:
        raise ValueError(f"form must be one of {BOUND_FORMS}")
    if counts.P_00 <= 0 or counts.P_aa <= 0:
        raise ValueError("P_00 and P_aa must be positive")
    mu, N = counts.mu, counts.N
    n_plus, n_minus = n_plus_minus(mu)
    em, ep2, em2 = math.exp(mu), math.exp(mu / 2), math.exp(-mu / 2)
    Pa, P0 = counts.P_aa, counts.P_00

    if form == "yield":
        # per-round yields, rescaled by the number of emitted |0x> states
        norm, weight = N, N * p_z * n_plus / 4
        pre_low, pre_corr, n_eff = n_minus / (4 * n_plus), n_minus**2 / (4 * n_plus), 1.0
    elif form == "literal":
        norm, weight = 1.0, 1.0
        pre_low, pre_corr, n_eff = n_minus / (4 * n_plus), n_minus**2 / (4 * n_plus), N
    else:
        norm, weight = 1.0, p_z
        pre_low, pre_corr, n_eff = 0.25, n_minus / 4, N

    A_lo, A_up = mb.lower_aa_D1 / Pa / norm, mb.upper_aa_D1 / Pa / norm
    B_lo, B_up = mb.lower_00_D1 / P0 / norm, mb.upper_00_D1 / P0 / norm
    low = pre_low * (em * A_lo + B_lo / em - 2 * math.sqrt(A_up * B_up)) \
        - pre_corr * (em * math.sqrt(n_eff * A_up) + math.sqrt(n_eff * B_up))
    low *= weight

    A2, B2 = mb.upper_aa_D2 / Pa / norm, mb.upper_00_D2 / P0 / norm
    up = 0.25 * (ep2 * math.sqrt(A2) + em2 * math.sqrt(B2)) ** 2 \
        + n_minus / 4 * (em * n_minus / 4 * n_eff + em * math.sqrt(n_eff * A2) + math.sqrt(n_eff * B2))
    up *= weight
    return GainBounds(max(low, 0.0), up, low, form)


@dataclass(frozen=True)
class PhaseErrorBounds:
    lower_n0x_D1: float
    upper_n0x_D2: float
    Ex_star: float
    n_p_bar: float
    Ep_bar: float
    Ep_unclamped: float
    delta_p: float
    scale: str


def phase_error_upper(counts: CountsRecord, gains: GainBounds, sec: SecurityParams,
                      scale: str = "n_z") -> PhaseErrorBounds:
    """Phase-error rate bound, converted from expectation to observation.

    ``scale`` selects what multiplies the expected error rate: ``"n_z"``
    (default) or ``"N"``.
    """
    if scale not in PHASE_SCALES:
        raise ValueError(f"scale must be one of {PHASE_SCALES}")
    den = counts.n_0a_D1 + counts.n_0a_D2 + counts.n_a0_D1 + counts.n_a0_D2
    if den <= 0:
        raise ValueError("no interferometer clicks for Z-basis states")
    if counts.n_z <= 0:
        raise ValueError("n_z must be positive")
    ex = (gains.upper_n0x_D2 - gains.lower_n0x_D1 + counts.n_0a_D1 + counts.n_a0_D1) / den
    ex = min(max(ex, 0.0), 1.0)
    eps2 = epsilon_budget(sec)["eps_2"]
    delta_p = math.sqrt(0.5 * counts.n_z * math.log(1 / eps2))
    mult = counts.n_z if scale == "n_z" else counts.N
    n_p = mult * ex + delta_p
    ep_raw = n_p / counts.n_z
    return PhaseErrorBounds(gains.lower_n0x_D1, gains.upper_n0x_D2, ex, n_p,
                            min(max(ep_raw, 0.0), 0.5), ep_raw, delta_p, scale)


@dataclass(frozen=True)
class KeyLengthReport:
    l: int
    l_real: float
    leak_ec: float
    leak_mode: str
    Ep_bar: float
    E_z: float
    n_z: float
    N: float
    log_terms: float
    refined: bool = False
    monitor: dict | None = None
    gains: dict | None = None
    phase: dict | None = None
    settings: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def key_length(counts: CountsRecord, Ep_bar: float, sec: SecurityParams,
               leak_bits: float | None = None, f: float = DEFAULT_F) -> KeyLengthReport:
    """Final key length; ``leak_bits`` selects measured leakage, else ``f * n_z * h(E_z)``."""
    if leak_bits is not None:
        if leak_bits < 0:
            raise ValueError("leak_bits must be non-negative")
        leak, mode = float(leak_bits), "measured"
    else:
        if counts.E_z is None:
            raise ValueError("analytic leak needs E_z")
        leak, mode = f * counts.n_z * binary_entropy(min(counts.E_z, 1.0)), f"analytic(f={f})"
    logs = math.log2(2 / sec.eps_cor) + 2 * math.log2(5 / sec.eps_sec)
    ep = min(max(Ep_bar, 0.0), 0.5)
    l_real = counts.n_z * (1 - binary_entropy(ep)) - leak - logs
    l_int = max(0, min(int(math.floor(l_real)), int(counts.n_z))) if l_real > 0 else 0
    return KeyLengthReport(l=l_int, l_real=l_real, leak_ec=leak, leak_mode=mode, Ep_bar=ep,
                           E_z=counts.E_z if counts.E_z is not None else float("nan"),
                           n_z=counts.n_z, N=counts.N, log_terms=logs, refined=counts.refined)


def keyrate_bps(report: KeyLengthReport | int, N: float, repetition_hz: float = 5e8) -> float:
    if N <= 0 or repetition_hz <= 0:
        raise ValueError("N and repetition_hz must be positive")
    l = report.l if isinstance(report, KeyLengthReport) else report
    return l * repetition_hz / N


@dataclass(frozen=True)
class AnalysisSettings:
    """Interpretation switches of the pipeline; defaults are the calibrated choices."""

    form: str = "derived"
    fluctuation: str = "bright"
    phase_scale: str = "n_z"
    p_z: float = 0.8
    f: float = DEFAULT_F
    kato_k: str = "N"  # "N" or "NP" (rounds in which the monitored state was sent)

    def __post_init__(self):
        if self.form not in BOUND_FORMS:
            raise ValueError(f"form must be one of {BOUND_FORMS}")
        if self.fluctuation not in FLUCTUATION_MODES:
            raise ValueError(f"fluctuation must be one of {FLUCTUATION_MODES}")
        if self.phase_scale not in PHASE_SCALES:
            raise ValueError(f"phase_scale must be one of {PHASE_SCALES}")
        if self.kato_k not in ("N", "NP"):
            raise ValueError("kato_k must be 'N' or 'NP'")

    def to_dict(self) -> dict:
        return asdict(self)


def analyze(counts: CountsRecord, sec: SecurityParams | None = None,
            settings: AnalysisSettings | None = None, refined: bool = False,
            leak_bits: float | None = None) -> KeyLengthReport:
    """Counts in, full report out."""
    sec = sec or SecurityParams()
    settings = settings or AnalysisSettings()
    if refined and not counts.refined:
        counts = refine_counts(counts)
    k = None if settings.kato_k == "N" else counts.N * min(counts.P_aa, counts.P_00)
    mb = bound_monitor_expectations(counts, sec, settings.fluctuation, k)
    gains = bound_n0x(counts, mb, settings.p_z, settings.form)
    if counts.n_0a_D1 + counts.n_0a_D2 + counts.n_a0_D1 + counts.n_a0_D2 <= 0 or counts.n_z <= 0:
        pe = None
        ep = 0.5
    else:
        pe = phase_error_upper(counts, gains, sec, settings.phase_scale)
        ep = pe.Ep_bar
    if leak_bits is None and counts.E_z is None:
        leak_bits = 0.0
    rep = key_length(counts, ep, sec, leak_bits, settings.f)
    return replace(rep, monitor=asdict(mb), gains=asdict(gains),
                   phase=asdict(pe) if pe else None, settings=settings.to_dict())


def discrepancy_report(counts: CountsRecord, sec: SecurityParams | None = None,
                       refined: bool = True, leak_bits: float | None = None,
                       repetition_hz: float = 5e8) -> dict:
    """Key length under every interpretation switch, for audit.

    Names the default interpretation and lists what each alternative yields.
    """
    sec = sec or SecurityParams()
    rows = []
    for form in BOUND_FORMS:
        for fl in FLUCTUATION_MODES:
            for sc in PHASE_SCALES:
                st = AnalysisSettings(form=form, fluctuation=fl, phase_scale=sc)
                rep = analyze(counts, sec, st, refined=refined, leak_bits=leak_bits)
                rows.append({"form": form, "fluctuation": fl, "phase_scale": sc,
                             "Ep_bar": rep.Ep_bar, "l": rep.l,
                             "rate_bps": keyrate_bps(rep, counts.N, repetition_hz)})
    return {
        "default": AnalysisSettings().to_dict(),
        "refined": refined,
        "leak_bits": leak_bits,
        "distance_km": counts.distance_km,
        "notes": {
            "derived": "rigorous triangle-inequality bound, scaled by p_z",
            "literal": "N-/(4N+) and (N-)^2/(4N+) prefactors on raw counts",
            "yield": "literal prefactors on per-round yields, rescaled by N p_z N+/4",
            "bright": "Kato widths on |aa> counts only",
            "all": "Kato widths on every monitored count",
            "none": "no widths (asymptotic diagnostic)",
        },
        "variants": rows,
    }
