import itertools
import math

import numpy as np
import pytest

from cowqkd.core import ProtocolParams, SentState
from cowqkd.optics import (D0E, D0L, D1, D2, CoherentSuperposition, OpticalPath, click_probabilities,
                           density_mixture_gap, expected_counts_virtual, no_click_kernel, overlap)

from fock_oracle import cap_for, no_click_fock, overlap_fock, two_mode_state, x_click_probs

CS = CoherentSuperposition


def x_only(eta1=1.0, eta2=1.0, **kw):
    """Everything routed to the interferometer, for comparison with the Fock reference."""
    return OpticalPath(z_split=0.0, detector_eff={"D0": 1.0, "D1": eta1, "D2": eta2}, **kw)


def test_overlap_examples():
    assert overlap([0, 0], [0, 0]) == 1
    mu = 0.7
    assert overlap([math.sqrt(mu)], [0]).real == pytest.approx(math.exp(-mu / 2), abs=1e-15)
    v = abs(overlap([1.0], [-1.0]))
    assert v == pytest.approx(math.exp(-2), abs=1e-12)
    assert v == pytest.approx(abs(overlap_fock(1.0, -1.0, cap=40)), abs=1e-12)


def test_no_click_kernel_examples():
    for eta in (0.0, 0.3, 1.0):
        assert no_click_kernel(0, 0, eta) == 1
    a = math.sqrt(0.8)
    assert no_click_kernel(a, a, 0.4) == pytest.approx(math.exp(-0.4 * 0.8), abs=1e-15)
    val = no_click_kernel(1.0, -1.0, 0.5)
    assert val == pytest.approx(math.exp(-1.5), abs=1e-12)
    assert val == pytest.approx(no_click_fock(1.0, -1.0, 0.5, cap=40), abs=1e-12)
    z = 0.3 + 0.4j
    assert no_click_kernel(z, z, 0.25).imag == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        no_click_kernel(0, 0, 1.5)


@pytest.mark.parametrize("mu", [1e-4, 1e-2, 0.5])
def test_constructors_normalised(mu):
    for st in (CS.zero_z(mu), CS.one_z(mu), CS.zero_x(mu), CS.one_x(mu), CS.alpha_alpha(mu), CS.vac_vac()):
        assert st.norm2() == pytest.approx(1.0, abs=1e-10)


def test_unnormalised_rejected():
    with pytest.raises(ValueError):
        click_probabilities(CS(((1.0, 0, 0), (1.0, 0.1, 0))), OpticalPath())


def test_vacuum_never_clicks():
    p = click_probabilities(CS.vac_vac(), OpticalPath())
    assert p.p_none == pytest.approx(1.0, abs=1e-15)


def test_bright_pair_ideal_interference():
    p = click_probabilities(CS.alpha_alpha(0.1), OpticalPath())
    assert p.p_click(D2) == pytest.approx(0.0, abs=1e-15)
    assert p.p_click(D1) > 0


@pytest.mark.parametrize("label,mu", [("0x", 1e-3), ("1x", 1e-3), ("aa", 0.2), ("0z", 0.05)])
@pytest.mark.parametrize("vis", [1.0, 0.99])
def test_x_arm_matches_fock(label, mu, vis):
    st = {"0x": CS.zero_x, "1x": CS.one_x, "aa": CS.alpha_alpha, "0z": CS.zero_z}[label](mu)
    dark = 1e-5
    path = x_only(0.46, 0.7, visibility=vis, dark_prob={"D0": 0.0, "D1": dark, "D2": 2 * dark})
    p = click_probabilities(st, path)
    fock = two_mode_state(st.branches, cap_for(mu))
    q = (1 + vis) / 2
    ref = {k: q * v for k, v in x_click_probs(fock, 0.46, 0.7, dark, 2 * dark).items()}
    if vis < 1:
        alt = x_click_probs(fock, 0.46, 0.7, dark, 2 * dark, phase=math.pi)
        ref = {k: ref[k] + (1 - q) * alt[k] for k in ref}
    assert p.p_single(D1) == pytest.approx(ref["D1"], abs=1e-9)
    assert p.p_single(D2) == pytest.approx(ref["D2"], abs=1e-9)
    assert p.p_x_both == pytest.approx(ref["both"], abs=1e-9)


def test_one_x_ideal_ratio():
    # D1 only sees the two-photon tail, so the ratio is of order mu
    mu = 1e-3
    p = click_probabilities(CS.one_x(mu), x_only())
    ratio = p.p_click(D1) / p.p_click(D2)
    assert ratio < mu
    fock = x_click_probs(two_mode_state(CS.one_x(mu).branches, cap_for(mu)), 1.0, 1.0)
    assert ratio == pytest.approx((fock["D1"] + fock["both"]) / (fock["D2"] + fock["both"]), rel=1e-9)


def test_probabilities_sum_and_range():
    path = OpticalPath(transmittance=0.3, visibility=0.97,
                       dark_prob={"D0": 1e-3, "D1": 2e-3, "D2": 3e-3},
                       detector_eff={"D0": 0.76, "D1": 0.46, "D2": 0.46})
    for s in SentState:
        p = click_probabilities(CS.sent(s, 0.3), path).pattern
        assert np.all(p >= -1e-15) and np.all(p <= 1)
        assert p.sum() == pytest.approx(1.0, abs=1e-10)


def test_monotone_in_transmittance_eff_dark():
    st = CS.zero_x(0.05)
    base = dict(transmittance=0.2, detector_eff={"D0": 0.5, "D1": 0.5, "D2": 0.5},
                dark_prob={"D0": 1e-4, "D1": 1e-4, "D2": 1e-4}, visibility=0.98)

    def clicks(**over):
        p = click_probabilities(st, OpticalPath(**{**base, **over}))
        return np.array([p.p_click(b) for b in (D0E, D0L, D1, D2)])

    ref = clicks()
    assert np.all(clicks(transmittance=0.4) >= ref - 1e-15)
    assert np.all(clicks(detector_eff={"D0": 0.8, "D1": 0.8, "D2": 0.8}) >= ref - 1e-15)
    assert np.all(clicks(dark_prob={"D0": 1e-3, "D1": 1e-3, "D2": 1e-3}) >= ref - 1e-15)


@pytest.mark.parametrize("mu", [0.5, 2.43e-4, 3.0, 1e-4, 1e-2])
def test_density_mixture_gap(mu):
    assert density_mixture_gap(mu) < 1e-12


def test_virtual_counts_dark_free_zero_light():
    v = expected_counts_virtual(ProtocolParams(mu=1e-3), OpticalPath(transmittance=0.0), 1e9)
    assert all(x == 0 for x in v.values())


GRID = list(itertools.product([1e-4, 1e-3, 1e-2, 0.1], [1.0, 0.1, 0.01], [1.0, 0.99]))


@pytest.mark.parametrize("mu,t,vis", GRID)
def test_click_identity(mu, t, vis):
    path = OpticalPath(transmittance=t, visibility=vis, dark_prob={"D0": 1e-6, "D1": 1e-6, "D2": 1e-6})
    v = expected_counts_virtual(ProtocolParams(mu=mu), path, 1e12)
    for d in ("D1", "D2"):
        lhs = v[f"n_0x_{d}"] + v[f"n_1x_{d}"]
        rhs = v[f"n_0z_{d}"] + v[f"n_1z_{d}"]
        assert abs(lhs - rhs) <= 1e-9 * rhs


def test_virtual_zero_x_bright_port():
    mu = 1e-3
    v = expected_counts_virtual(ProtocolParams(mu=mu), x_only(), 1e10)
    assert v["n_0x_D2"] < 1e-3 * v["n_0x_D1"]
    fock = x_click_probs(two_mode_state(CS.zero_x(mu).branches, cap_for(mu)), 1.0, 1.0)
    n_plus = 2 * (1 + math.exp(-mu))
    assert v["n_0x_D1"] == pytest.approx(1e10 * 0.8 * n_plus / 4 * fock["D1"], rel=1e-9)
