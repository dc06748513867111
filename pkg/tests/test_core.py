import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from cowqkd.core import (Basis, ProtocolParams, SecurityParams, SentState, XState, binary_entropy,
                         encode_round, epsilon_budget, n_plus_minus)


def test_entropy_fixed_points():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0


def test_entropy_quarter_against_mpmath():
    x = mpmath.mpf(1) / 4
    ref = -x * mpmath.log(x, 2) - (1 - x) * mpmath.log(1 - x, 2)
    assert binary_entropy(0.25) == pytest.approx(float(ref), abs=1e-12)
    assert binary_entropy(0.25) == pytest.approx(0.811278, abs=1e-6)


@pytest.mark.parametrize("x", [-1e-9, 1.0000001, float("nan")])
def test_entropy_domain(x):
    with pytest.raises(ValueError):
        binary_entropy(x)


unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@settings(max_examples=10_000, deadline=None)
@given(unit, unit)
def test_entropy_concave(a, b):
    assert binary_entropy((a + b) / 2) >= (binary_entropy(a) + binary_entropy(b)) / 2 - 1e-12


@given(unit)
def test_entropy_symmetric(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1 - x), abs=1e-12)


def test_n_plus_minus_examples():
    assert n_plus_minus(0.0) == (4.0, 0.0)
    npl, nmi = n_plus_minus(math.log(2))
    assert npl == pytest.approx(3.0, abs=1e-15) and nmi == pytest.approx(1.0, abs=1e-15)
    mu = 2.43e-4
    taylor = 2 * mu * (1 - mu / 2 + mu * mu / 6)
    assert n_plus_minus(mu)[1] == pytest.approx(taylor, abs=1e-9)
    assert n_plus_minus(mu)[1] == pytest.approx(4.85941e-4, abs=1e-9)


mus = st.floats(min_value=1e-12, max_value=30.0)


@given(mus, mus)
def test_n_plus_minus_ranges(m1, m2):
    p1, n1 = n_plus_minus(m1)
    assert 0 < n1 < 2 < p1 < 4
    assert p1 + n1 == pytest.approx(4.0, abs=1e-15)
    lo, hi = sorted((m1, m2))
    assert n_plus_minus(lo)[1] <= n_plus_minus(hi)[1]
    assert n_plus_minus(lo)[0] >= n_plus_minus(hi)[0]


def test_encode_round_examples():
    r = encode_round("Z", 1, mu=0.5)
    assert (r.early_pulse, r.late_pulse) == (0.5, 0.0)
    assert (encode_round("Z", 0, 0.5).early_pulse, encode_round("Z", 0, 0.5).late_pulse) == (0.0, 0.5)
    assert (encode_round(Basis.X, XState.VACUUM_PAIR, 0.5).early_pulse,
            encode_round(Basis.X, XState.VACUUM_PAIR, 0.5).late_pulse) == (0.0, 0.0)
    bright = encode_round(Basis.X, "bright_pair", 0.5)
    assert (bright.early_pulse, bright.late_pulse) == (0.5, 0.5)


def test_encode_round_bijection():
    choices = [("Z", 0), ("Z", 1), ("X", XState.VACUUM_PAIR), ("X", XState.BRIGHT_PAIR)]
    states = {encode_round(b, c).sent_state for b, c in choices}
    assert states == set(SentState)


@pytest.mark.parametrize("bad", [("Z", 2), ("Z", XState.BRIGHT_PAIR), ("X", 1), ("Y", 0)])
def test_encode_round_rejects(bad):
    with pytest.raises(ValueError):
        encode_round(*bad)


def test_protocol_defaults_and_validation():
    p = ProtocolParams()
    probs = p.state_probs()
    assert [probs[s] for s in SentState] == [0.1, 0.4, 0.4, 0.1]
    assert p.z_split == 0.3 and p.repetition_hz == 5e8
    q = ProtocolParams(p_z=0.8 + 5e-13)  # renormalised within tolerance
    assert q.p_z + q.p_0 + q.p_alpha_alpha == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        ProtocolParams(p_z=0.7)
    with pytest.raises(ValueError):
        ProtocolParams(mu=0)
    with pytest.raises(ValueError):
        ProtocolParams(z_split=1.0)


def test_epsilon_budget():
    b = epsilon_budget(SecurityParams())
    assert len(b) == 7 and all(v == pytest.approx(1e-10 / 7) for v in b.values())
    b = epsilon_budget(SecurityParams(eps_overrides={"eps_2": 1e-12}))
    assert b["eps_2"] == 1e-12 and b["upper_aa_D1"] == pytest.approx(1e-10 / 7)
    for bad in ({"eps_sec": 0}, {"eps_cor": 1.0}, {"eps_overrides": {"nope": 0.1}}):
        with pytest.raises(ValueError):
            SecurityParams(**bad)
