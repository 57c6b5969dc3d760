import dataclasses

import pytest
from hypothesis import given, strategies as st

from enaam_sim.power_model import (
    ConfigError,
    ControlAction,
    Mode,
    SiteConfig,
    gamma_min,
    max_site_energy,
    mec_energy,
    site_energy,
    step_buffer,
    tx_power,
    vm_count,
)

CFG = SiteConfig()
TX20 = SiteConfig(theta_tx_max=20.0)

fractions = st.floats(min_value=1e-6, max_value=1.0, allow_nan=False)
loads = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def test_default_constants():
    assert (CFG.theta0, CFG.theta_bh, CFG.theta_idle, CFG.theta_dyn_max) == (10.6, 50.0, 30.0, 472.3)
    assert (CFG.m_vms, CFG.b_min_vms, CFG.beta_max, CFG.l_max, CFG.l_low) == (27, 3, 490.0, 15.0, 4.0)
    assert CFG.beta_low == pytest.approx(0.3 * CFG.beta_max)


@pytest.mark.parametrize("field,value", [
    ("epsilon", 0.0), ("epsilon", 1.0), ("b_min_vms", 0), ("b_min_vms", 28),
    ("beta_low", 500.0), ("l_low", 20.0), ("theta0", -1.0), ("slot_seconds", 0.0),
])
def test_config_invariants(field, value):
    with pytest.raises(ConfigError) as exc:
        dataclasses.replace(CFG, **{field: value})
    assert exc.value.field


def test_config_from_dict_reports_field():
    with pytest.raises(ConfigError, match="m_vms"):
        SiteConfig.from_dict({"m_vms": 2.5})
    with pytest.raises(ConfigError, match="bogus"):
        SiteConfig.from_dict({"bogus": 1})
    assert SiteConfig.from_dict({"theta0": 11}).theta0 == 11.0


@pytest.mark.parametrize("gamma,expected", [(1.0, 27), (0.5, 14), (0.1111, 3)])
def test_vm_count_examples(gamma, expected):
    assert vm_count(gamma, 27) == expected


@given(fractions, fractions)
def test_vm_count_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 1 <= vm_count(lo, 27) <= vm_count(hi, 27) <= 27


def test_gamma_min_is_tight():
    g = gamma_min(CFG)
    assert vm_count(g, 27) == 3
    assert g == pytest.approx(2.5 / 27, abs=1e-12)
    below = g - 1e-12
    assert vm_count(below, 27) < 3


def test_tx_power_examples():
    assert tx_power(0.0, TX20) == 0.0
    assert tx_power(1.0, TX20) == 20.0
    assert tx_power(0.5, TX20) == pytest.approx(10.0)


def test_mec_energy_examples():
    assert mec_energy(1.0, CFG) == pytest.approx((30 + 472.3) * 3.6)
    assert mec_energy(1.0, CFG) == pytest.approx(1808.28)
    assert mec_energy(0.1111, CFG) == pytest.approx(296.9, abs=0.1)
    flat = dataclasses.replace(CFG, theta_dyn_max=0.0)
    assert mec_energy(0.2, flat) == mec_energy(0.9, flat) == pytest.approx(108.0)


def test_site_energy_examples():
    assert site_energy(ControlAction(Mode.ACTIVE, 1.0), 0.0, CFG) == pytest.approx(2026.44)
    e = site_energy(ControlAction(Mode.SAVING, 0.1111), 0.0, TX20)
    assert e == pytest.approx((0.3 * 10.6 + 50) * 3.6 + 296.9, abs=0.1)
    assert e == pytest.approx(488.3, abs=0.1)


def test_site_energy_sleep_tx_flag():
    a = ControlAction(Mode.SAVING, 0.5)
    scaled = site_energy(a, 1.0, TX20)
    unscaled = site_energy(a, 1.0, dataclasses.replace(TX20, sleep_scales_tx=False))
    assert unscaled - scaled == pytest.approx(0.7 * 20 * 3.6)


@given(fractions, fractions, loads, st.sampled_from(list(Mode)))
def test_site_energy_increasing_in_gamma(g1, g2, phi, mode):
    lo, hi = sorted((g1, g2))
    if hi - lo < 1e-9:
        return
    assert site_energy(ControlAction(mode, lo), phi, CFG) < site_energy(ControlAction(mode, hi), phi, CFG)


@given(fractions, loads, loads, st.sampled_from(list(Mode)))
def test_site_energy_affine_in_phi(g, p1, p2, mode):
    a = ControlAction(mode, g)
    mid = 0.5 * (p1 + p2)
    e1, e2, em = (site_energy(a, p, CFG) for p in (p1, p2, mid))
    assert em == pytest.approx(0.5 * (e1 + e2), rel=1e-12)
    if p1 <= p2:
        assert e1 <= e2 + 1e-9


@given(fractions, loads)
def test_saving_below_active(g, phi):
    assert site_energy(ControlAction(Mode.SAVING, g), phi, CFG) < site_energy(ControlAction(Mode.ACTIVE, g), phi, CFG)


def test_no_management_is_max():
    assert max_site_energy(CFG) == site_energy(ControlAction(Mode.ACTIVE, 1.0), 1.0, CFG)


def test_units_scale_with_slot():
    cfg = dataclasses.replace(TX20, slot_seconds=1000.0)
    a = ControlAction(Mode.ACTIVE, 0.4)
    watts = cfg.theta0 + 20 * 0.3 + cfg.theta_bh + cfg.theta_idle + 0.4 * cfg.theta_dyn_max
    assert site_energy(a, 0.3, cfg) == pytest.approx(watts)


@pytest.mark.parametrize("beta,h,d,expected", [
    (300, 50, 100, (250, 0, 0)),
    (480, 50, 10, (490, 0, 30)),
    (50, 0, 100, (0, 50, 0)),
])
def test_step_buffer_examples(beta, h, d, expected):
    assert step_buffer(beta, h, d, CFG) == pytest.approx(expected)


@given(st.floats(0, 490), st.floats(0, 3000), st.floats(0, 3000))
def test_step_buffer_conservation(beta, h, d):
    nxt, deficit, spill = step_buffer(beta, h, d, CFG)
    assert 0 <= nxt <= CFG.beta_max
    assert deficit == 0 or spill == 0
    assert nxt - beta == pytest.approx(h - d + deficit - spill, abs=1e-9)
    if deficit == 0 and spill == 0:
        assert nxt - beta == pytest.approx(h - d, abs=1e-9)


def test_control_action_validation():
    with pytest.raises(ValueError):
        ControlAction(Mode.ACTIVE, 0.0)
    with pytest.raises(ValueError):
        ControlAction(Mode.ACTIVE, 1.2)
    assert Mode.SAVING.zeta(CFG) == 0.3 and Mode.ACTIVE.zeta(CFG) == 1.0
