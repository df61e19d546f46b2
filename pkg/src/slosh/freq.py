"""Frequency-domain evaluation: responses, H-infinity norms, loop closure."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lti import InterconnectionError, StateSpace, connect

GRID_POINTS = 200
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FreqGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or np.any(pts <= 0) or np.any(np.diff(pts) <= 0):
            raise ValueError("frequency grid must be >= 2 strictly increasing positive points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def log(cls, lo: float, hi: float, n: int = GRID_POINTS) -> "FreqGrid":
        return cls(np.logspace(math.log10(lo), math.log10(hi), n))

    @property
    def bounds(self) -> tuple:
        return float(self.points[0]), float(self.points[-1])


def evalfr(sys: StateSpace, omega: float) -> np.ndarray:
    """Complex response matrix ``C (j w I - A)^-1 B + D`` at one frequency."""
    return freqresp(sys, np.array([omega], dtype=float))[0]


def freqresp(sys: StateSpace, omegas) -> np.ndarray:
    """Responses on a set of frequencies, shape ``(len(omegas), p, m)``."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    D = sys.D.astype(complex)
    if sys.nstates == 0:
        return np.broadcast_to(D, (w.size,) + D.shape).copy()
    n = sys.nstates
    R = 1j * w[:, None, None] * np.eye(n) - sys.A
    try:
        X = np.linalg.solve(R, np.broadcast_to(sys.B, (w.size,) + sys.B.shape))
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("resolvent is singular on the requested frequencies") from exc
    if not np.all(np.isfinite(X)):
        raise EvaluationError("resolvent is singular on the requested frequencies")
    return sys.C @ X + D


def _sigma_max(H: np.ndarray) -> np.ndarray:
    if H.shape[-1] == 1 or H.shape[-2] == 1:
        return np.sqrt(np.sum(np.abs(H) ** 2, axis=(-2, -1)))
    return np.linalg.norm(H, 2, axis=(-2, -1))


def spectral_abscissa(sys: StateSpace) -> float:
    """Largest real part of the poles; ``-inf`` for static systems."""
    if sys.nstates == 0:
        return -math.inf
    return float(np.max(np.linalg.eigvals(sys.A).real))


def is_stable(sys: StateSpace, margin: float = 0.0) -> bool:
    return spectral_abscissa(sys) < -margin


def _reference_frequency(poles: np.ndarray) -> float:
    mags = np.abs(poles)
    nz = mags > 1e-12
    if not np.any(nz):
        return 1.0
    # least damped pole dominates the peak
    zeta = -poles[nz].real / mags[nz]
    return float(mags[nz][np.argmin(zeta)])


class _Evaluator:
    """Fast repeated frequency evaluation of one system.

    Uses the modal form ``C V (jw - L)^-1 V^-1 B + D`` when the eigenvector
    basis is well conditioned, otherwise falls back to dense solves.
    """

    def __init__(self, sys: StateSpace):
        self.sys = sys
        self.modal = False
        lam, V = np.linalg.eig(sys.A)
        if np.linalg.cond(V) < 1e8:
            self.modal = True
            self.lam = lam
            self.CV = sys.C @ V
            self.WB = np.linalg.solve(V, sys.B.astype(complex))
            self.D = sys.D.astype(complex)

    def __call__(self, omegas) -> np.ndarray:
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        if not self.modal:
            return _sigma_max(freqresp(self.sys, w))
        r = 1.0 / (1j * w[:, None] - self.lam[None, :])              # (N, n)
        H = np.einsum("pn,Nn,nm->Npm", self.CV, r, self.WB) + self.D
        return _sigma_max(H)


def hinf_norm(sys: StateSpace, tol: float = 1e-4, omega_ref: float | None = None) -> float:
    """Peak gain over frequency; ``inf`` when the system is not asymptotically stable.

    A 200-point log grid over ``[omega_ref/100, 1000*omega_ref]`` (plus the
    damped frequencies of the poles falling inside it, plus DC and the
    high-frequency limit) is refined by golden-section search around the
    three largest grid peaks until the bracket is negligible against ``tol``.
    """
    if sys.nstates == 0:
        return float(_sigma_max(sys.D[None])[0])
    poles = np.linalg.eigvals(sys.A)
    scale = max(1.0, float(np.max(np.abs(poles))))
    if np.max(poles.real) >= -1e-12 * scale:
        return math.inf
    if omega_ref is None:
        omega_ref = _reference_frequency(poles)
    f = _Evaluator(sys)
    lo, hi = omega_ref / 100.0, omega_ref * 1000.0
    extra = np.abs(poles.imag)
    extra = extra[(extra > lo) & (extra < hi)]
    grid = np.unique(np.concatenate([np.logspace(math.log10(lo), math.log10(hi), GRID_POINTS), extra]))
    vals = f(grid)
    best = max(float(np.max(vals)), float(f([0.0])[0]), float(_sigma_max(sys.D[None])[0]))

    interior = (vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])
    peaks = list(np.nonzero(interior)[0] + 1)
    if vals[0] >= vals[1]:
        peaks.append(0)
    if vals[-1] >= vals[-2]:
        peaks.append(len(grid) - 1)
    peaks.sort(key=lambda i: (-vals[i], i))
    peaks = peaks[:3]
    if peaks:
        a = np.log(grid[[max(i - 1, 0) for i in peaks]])
        b = np.log(grid[[min(i + 1, len(grid) - 1) for i in peaks]])
        best = max(best, _golden_max(f, a, b, tol))
    return best


def _golden_max(f, a: np.ndarray, b: np.ndarray, tol: float) -> float:
    """Simultaneous golden-section maximization on several log-brackets."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    k = len(a)
    vals = f(np.exp(np.concatenate([c, d])))
    fc, fd = vals[:k], vals[k:]
    best = float(max(fc.max(), fd.max()))
    # a log-width of 1e-3*sqrt(tol) keeps the quadratic-peak error well below tol
    stop = 1e-3 * math.sqrt(tol)
    for _ in range(200):
        if np.all(b - a < stop):
            break
        left = fc >= fd
        # keep [a, d] when the left probe wins, else [c, b]
        a, b = np.where(left, a, c), np.where(left, d, b)
        c, d = np.where(left, b - GOLDEN * (b - a), d), np.where(left, c, a + GOLDEN * (b - a))
        fp = f(np.exp(np.where(left, c, d)))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        best = max(best, float(fp.max()))
    return best


@dataclass(frozen=True)
class WeightedLoop:
    """Generalized plant with exogenous inputs ``w``, weighted outputs ``z``,
    one measurement ``y`` (controller input) and one command ``u``
    (controller output).  ``P`` carries labels ``(*w, u)`` -> ``(*z, y)``.
    """

    P: StateSpace
    exogenous: tuple
    performance: tuple
    measurement: str = "F_hat"
    command: str = "xdd_cmd"

    def __post_init__(self):
        if tuple(self.P.input_labels) != tuple(self.exogenous) + (self.command,):
            raise InterconnectionError("P inputs must be exogenous inputs followed by the command")
        if tuple(self.P.output_labels) != tuple(self.performance) + (self.measurement,):
            raise InterconnectionError("P outputs must be performance outputs followed by the measurement")

    def channel(self, inp: str, out: str) -> StateSpace:
        return self.P.select([inp], [out])


def close_loop(loop: WeightedLoop, ctrl: StateSpace) -> StateSpace:
    """Lower LFT of the generalized plant with a SISO controller ``u = K y``."""
    if ctrl.ninputs != 1 or ctrl.noutputs != 1:
        raise InterconnectionError("controller must be SISO")
    d22 = loop.P.D[-1, -1]
    if abs(1.0 - d22 * ctrl.D[0, 0]) < 1e-12:
        raise InterconnectionError("ill-posed feedback: 1 - D22*Dk is singular")
    K = ctrl.relabel(inputs=[loop.measurement], outputs=[loop.command])
    return connect([loop.P, K], inputs=list(loop.exogenous), outputs=list(loop.performance))


def write_response_csv(path, sys: StateSpace, omegas, channels: Sequence[tuple] | None = None) -> None:
    """Dump ``omega, magnitude, phase`` rows per labeled channel."""
    omegas = np.asarray(omegas, dtype=float)
    H = freqresp(sys, omegas)
    if channels is None:
        channels = [(i, o) for o in sys.output_labels for i in sys.input_labels]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "omega", "magnitude", "phase"])
        for inp, out in channels:
            ii = sys.input_labels.index(inp)
            oo = sys.output_labels.index(out)
            h = H[:, oo, ii]
            phase = np.unwrap(np.angle(h))
            for om, mag, ph in zip(omegas, np.abs(h), phase):
                w.writerow([f"{inp}->{out}", f"{om:.6g}", f"{mag:.9g}", f"{ph:.9g}"])
