import numpy as np
import pytest

from slosh.freq import evalfr, freqresp
from slosh.lti import InterconnectionError, StateSpace, append, connect, gain, lowpass, series, summer, tf2ss


def test_dimension_mismatch_rejected():
    with pytest.raises(Exception):
        StateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), [[0.0]])


def test_label_count_mismatch_rejected():
    with pytest.raises(InterconnectionError):
        StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], ("a", "b"), ("y",))


def test_matrices_are_read_only():
    sys = lowpass(2.0)
    with pytest.raises(ValueError):
        sys.A[0, 0] = 1.0


def test_tf2ss_matches_polynomial_ratio():
    num, den = [2.0, 3.0, 1.0], [1.0, 0.4, 9.0]
    sys = tf2ss(num, den)
    for w in (0.1, 1.0, 3.0, 30.0):
        s = 1j * w
        assert evalfr(sys, w)[0, 0] == pytest.approx(np.polyval(num, s) / np.polyval(den, s), rel=1e-12)


def test_series_is_product():
    a = tf2ss([1.0, 2.0], [1.0, 5.0], "u", "m")
    b = lowpass(3.0, "m", "y")
    ab = series(a, b)
    w = np.logspace(-2, 2, 50)
    ref = freqresp(a, w)[:, 0, 0] * freqresp(b, w)[:, 0, 0]
    np.testing.assert_allclose(freqresp(ab, w)[:, 0, 0], ref, rtol=1e-10)


def test_connect_closes_feedback_loop():
    # y = G e, e = r - y with G = 1/(s+1)  ->  1/(s+2)
    G = tf2ss([1.0], [1.0, 1.0], "e", "y")
    loop = connect([G, summer(["r", "y"], "e", [1.0, -1.0])], ["r"], ["y"])
    assert loop.poles().real.max() == pytest.approx(-2.0)
    assert evalfr(loop, 0.0)[0, 0] == pytest.approx(0.5)


def test_connect_rejects_algebraic_loop():
    with pytest.raises(InterconnectionError):
        connect([gain(1.0, "e", "y"), summer(["r", "y"], "e", [1.0, 1.0])], ["r"], ["y"])


def test_append_and_select():
    sys = append(lowpass(1.0, "a", "x"), lowpass(2.0, "b", "y"))
    assert sys.nstates == 2
    sub = sys.select(["b"], ["y"])
    assert evalfr(sub, 2.0)[0, 0] == pytest.approx(2.0 / (2.0 + 2.0j))
