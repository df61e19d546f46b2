import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slosh.architecture import G
from slosh.plant import DEFAULT_PARAMS
from slosh.sim import Pulse, Scenario, simulate
from slosh.sysid import (IdentificationError, PulseRecord, RecordError, estimate_mr, estimate_ms_k, estimate_omega,
                         identify, read_record, reconstruct, record_from_result, write_record)
from slosh.uncertainty import nominal_sample

OMEGA = 4.4


def pulse_record(params=DEFAULT_PARAMS, amp=0.1, duration=1.5, kind="linear", total=9.0):
    scn = Scenario(excitation=Pulse(amp, duration), total_time=total, plant_kind=kind,
                   sample=nominal_sample(params), stroke_limit=None)
    return record_from_result(simulate(scn))


@pytest.fixture(scope="module")
def rec():
    return pulse_record()


def test_rigid_mass_from_jump(rec):
    assert estimate_mr(rec) == pytest.approx(750.0, rel=5e-3)


def test_zero_amplitude_has_no_jump(rec):
    flat = PulseRecord(rec.t, np.zeros_like(rec.t), rec.a_cmd * 0.0)
    with pytest.raises(IdentificationError):
        estimate_mr(flat)


def test_jump_under_sensor_noise(rec):
    rng = np.random.default_rng(1)
    errs = [abs(estimate_mr(PulseRecord(rec.t, rec.F_s + rng.standard_normal(rec.t.size), rec.a_cmd)) / 750 - 1)
            for _ in range(100)]
    assert max(errs) < 0.02


def test_needs_quiet_lead_in(rec):
    cut = PulseRecord(rec.t[400:], rec.F_s[400:], rec.a_cmd[400:])
    with pytest.raises(IdentificationError):
        estimate_mr(cut)


def test_frequency(rec):
    assert estimate_omega(rec) == pytest.approx(OMEGA, rel=5e-3)


def test_constant_force_has_no_frequency(rec):
    with pytest.raises(IdentificationError):
        estimate_omega(PulseRecord(rec.t, np.full_like(rec.t, 3.0), rec.a_cmd))


def test_frequency_with_second_harmonic(rec):
    t = rec.t
    free = t >= rec.t[rec.free_start]
    tau = t - rec.t[rec.free_start]
    F = np.where(free, 25 * np.cos(OMEGA * tau) + 1.25 * np.cos(2 * OMEGA * tau + 0.7), rec.F_s)
    assert estimate_omega(PulseRecord(t, F, rec.a_cmd)) == pytest.approx(OMEGA, rel=0.02)


def test_mass_and_stiffness(rec):
    m_s, k = estimate_ms_k(rec, estimate_omega(rec))
    assert m_s == pytest.approx(250.0, rel=0.01)
    assert k == pytest.approx(4840.0, rel=0.01)


def test_short_pulse_rejected(rec):
    with pytest.raises(IdentificationError):
        estimate_ms_k(rec, 1.0)   # half period 3.1 s against a 1.5 s pulse


def test_amplitude_scaling_leaves_estimates(rec):
    big = PulseRecord(rec.t, 2 * rec.F_s, 2 * rec.a_cmd)
    a, b = identify(rec), identify(big)
    for f in ("m_r_hat", "m_s_hat", "k_hat", "omega_hat", "residual"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), rel=1e-9)


def test_identify_round_trip(rec):
    res = identify(rec)
    assert res.m_r_hat == pytest.approx(750.0, rel=0.01)
    assert res.m_s_hat == pytest.approx(250.0, rel=0.01)
    assert res.k_hat == pytest.approx(4840.0, rel=0.01)
    assert res.omega_hat**2 == pytest.approx(res.k_hat / res.m_s_hat, rel=1e-9)
    assert 0.0 <= res.residual < 0.02


def test_truncated_record_rejected(rec):
    n = int(np.searchsorted(rec.t, rec.t[rec.free_start] + 1.2 * 2 * math.pi / OMEGA))
    with pytest.raises(IdentificationError):
        identify(PulseRecord(rec.t[:n], rec.F_s[:n], rec.a_cmd[:n]))


def test_model_output_fits_itself(rec):
    exact = PulseRecord(rec.t, reconstruct(rec, 750.0, 250.0, 4840.0), rec.a_cmd)
    res = identify(exact)
    assert 0.0 <= res.residual < 0.01
    assert res.m_r_hat == pytest.approx(750.0, rel=5e-3)


@settings(max_examples=6, deadline=None)
@given(k_rel=st.floats(-0.2, 0.2), mr_rel=st.floats(-0.2, 0.2))
def test_round_trip_over_uncertainty_box(k_rel, mr_rel):
    p = DEFAULT_PARAMS.replace(k=4840 * (1 + k_rel), m_r=750 * (1 + mr_rel))
    res = identify(pulse_record(p, total=10.0))   # room for four periods at the softest spring
    assert res.m_r_hat == pytest.approx(p.m_r, rel=0.01)
    assert res.m_s_hat == pytest.approx(p.m_s, rel=0.01)
    assert res.k_hat == pytest.approx(p.k, rel=0.01)


def test_pendulum_record_within_ten_percent():
    # a held acceleration of g*tan(10 deg) over 1.5 periods swings to ~20 deg
    w = OMEGA
    rec = pulse_record(amp=G * math.tan(math.radians(10.0)), duration=3 * math.pi / w, kind="pendulum", total=12.0)
    res = identify(rec)
    for est, true in ((res.m_r_hat, 750.0), (res.m_s_hat, 250.0), (res.k_hat, 4840.0)):
        assert est == pytest.approx(true, rel=0.10)


# -- files -------------------------------------------------------------------

def test_record_csv_round_trip(rec, tmp_path):
    path = tmp_path / "rec.csv"
    write_record(path, rec)
    back = read_record(path)
    np.testing.assert_allclose(back.F_s, rec.F_s, rtol=1e-11)
    assert identify(back).m_r_hat == pytest.approx(identify(rec).m_r_hat, rel=1e-9)


@pytest.mark.parametrize("text, line", [("", 1), ("t,F_s\n0,1\n", 1), ("t,F_s,a_cmd\n0,1,0\n0.1,x,0\n", 3),
                                        ("t,F_s,a_cmd\n", 2)])
def test_bad_files_report_lines(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(RecordError) as err:
        read_record(path)
    assert err.value.line == line


def test_non_uniform_time_rejected():
    t = np.array([0.0, 0.1, 0.25] + list(np.arange(0.3, 2.0, 0.1)))
    with pytest.raises(RecordError):
        PulseRecord(t, np.zeros_like(t), np.zeros_like(t))
