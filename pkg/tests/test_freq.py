import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slosh.architecture import ActuationChain
from slosh.freq import (EvaluationError, FreqGrid, close_loop, evalfr, freqresp, hinf_norm, is_stable,
                        spectral_abscissa, write_response_csv)
from slosh.lti import StateSpace, gain, lowpass, series, tf2ss
from slosh.plant import DEFAULT_PARAMS, build_plant
from slosh.synthesis import ControllerParams, WeightSpec, build_controller, weighted_loop
from slosh.uncertainty import nominal_sample

# 1 / (2 zeta sqrt(1 - zeta^2)), evaluated by hand
RESONANT_PEAK = {0.01: 50.00250018751562, 0.1: 5.02518907629606, 0.5: 1.1547005383792517}


def resonance(zeta, wn=4.4):
    return tf2ss([wn * wn], [1.0, 2 * zeta * wn, wn * wn])


def test_static_system_returns_feedthrough():
    sys = gain(3.5)
    for w in (0.0, 1.0, 1e3):
        assert evalfr(sys, w)[0, 0] == 3.5


def test_integrator_at_unit_frequency():
    integ = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    assert evalfr(integ, 1.0)[0, 0] == pytest.approx(-1j)
    with pytest.raises(EvaluationError):
        evalfr(integ, 0.0)


@pytest.mark.parametrize("zeta", sorted(RESONANT_PEAK))
def test_resonant_peak(zeta):
    assert hinf_norm(resonance(zeta), tol=1e-4) == pytest.approx(RESONANT_PEAK[zeta], rel=1e-4)


def test_lowpass_norm_is_dc_gain():
    assert hinf_norm(lowpass(7.0)) == pytest.approx(1.0, rel=1e-9)


def test_unstable_gives_inf():
    assert hinf_norm(tf2ss([1.0], [1.0, -0.5])) == math.inf
    assert hinf_norm(build_plant(DEFAULT_PARAMS)) == math.inf


def test_peak_matches_dense_grid():
    sys = series(resonance(0.03, 4.4), tf2ss([1.0, 0.2, 50.0], [1.0, 0.7, 50.0]))
    w = np.linspace(0.01, 20.0, 400001)
    dense = np.max(np.abs(freqresp(sys, w)[:, 0, 0]))
    assert hinf_norm(sys) == pytest.approx(dense, rel=1e-4)
    assert hinf_norm(sys) >= dense * (1 - 1e-9)


@settings(max_examples=25, deadline=None)
@given(zeta=st.floats(0.005, 0.9), wn=st.floats(0.1, 100.0), alpha=st.floats(-50.0, 50.0).filter(lambda a: abs(a) > 1e-3))
def test_norm_homogeneous_and_a_supremum(zeta, wn, alpha):
    sys = resonance(zeta, wn)
    n1 = hinf_norm(sys)
    n2 = hinf_norm(sys.scale_output(alpha))
    assert n2 == pytest.approx(abs(alpha) * n1, rel=1e-4)
    grid = FreqGrid.log(wn / 100, wn * 100, 300).points
    assert n1 >= np.max(np.abs(freqresp(sys, grid)[:, 0, 0])) * (1 - 1e-9)


def test_spectral_abscissa_examples():
    assert spectral_abscissa(StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])) == 0.0
    lam = np.sort(np.linalg.eigvals(build_plant(DEFAULT_PARAMS).A).real)
    assert lam[-1] == pytest.approx(0.0, abs=1e-7)
    assert lam[0] < 0
    assert not is_stable(build_plant(DEFAULT_PARAMS))


@pytest.fixture(scope="module")
def loop():
    return weighted_loop(nominal_sample(DEFAULT_PARAMS), ActuationChain(), WeightSpec())


def test_zero_controller_is_open_loop(loop):
    zero = build_controller(ControllerParams(V=0.0))
    cl = close_loop(loop, zero)
    w = np.logspace(-1, 2, 50)
    ref = freqresp(loop.P.select(list(loop.exogenous), list(loop.performance)), w)
    np.testing.assert_allclose(freqresp(cl, w), ref, rtol=1e-12, atol=1e-12)


def test_feedback_lowers_disturbance_peak(loop):
    p = ControllerParams()
    cl = close_loop(loop, build_controller(p))
    open_ = close_loop(loop, build_controller(ControllerParams(V=0.0)))
    w = np.logspace(0, 1, 2000)
    peak_cl = np.max(np.abs(freqresp(cl.select(["w_Fd"], ["p"]), w)))
    peak_ol = np.max(np.abs(freqresp(open_.select(["w_Fd"], ["p"]), w)))
    assert spectral_abscissa(cl) < 0
    assert peak_cl < peak_ol


def test_flipped_sign_destabilizes(loop):
    p = ControllerParams()
    flipped = ControllerParams(**{**p.as_dict(), "V": -p.V})
    assert spectral_abscissa(close_loop(loop, build_controller(flipped))) > 0


def test_series_response_is_product():
    a, b = resonance(0.2, 3.0), tf2ss([1.0, 1.0], [1.0, 10.0], "y", "z")
    w = np.logspace(-2, 2, 30)
    np.testing.assert_allclose(freqresp(series(a, b), w)[:, 0, 0],
                               freqresp(a, w)[:, 0, 0] * freqresp(b, w)[:, 0, 0], rtol=1e-10)


def test_grid_validation():
    with pytest.raises(ValueError):
        FreqGrid(np.array([1.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        FreqGrid(np.array([0.0, 1.0]))
    assert FreqGrid.log(0.1, 10.0).bounds == pytest.approx((0.1, 10.0))


def test_response_csv(tmp_path):
    path = tmp_path / "h.csv"
    write_response_csv(path, lowpass(2.0, "u", "y"), [1.0, 2.0])
    lines = path.read_text().splitlines()
    assert lines[0] == "channel,omega,magnitude,phase"
    mag = float(lines[2].split(",")[2])
    assert mag == pytest.approx(1 / math.sqrt(2), rel=1e-8)
