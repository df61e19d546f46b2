"""Closed-form identification of the slosh model from one pulse response.

The rigid mass comes from the force jump at pulse onset, the slosh
frequency from zero crossings of the free oscillation, and the slosh mass
from the size of the oscillation while the acceleration is held.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .architecture import hold_matrices

PRE_WINDOW = 0.5
JUMP_SAMPLES = 3
JUMP_SNR = 5.0
FREE_CYCLES = 3
ASSUMED_DAMPING = 0.002


class IdentificationError(ValueError):
    pass


class RecordError(ValueError):
    """Malformed record file; ``line`` is the 1-based offending line."""

    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class PulseRecord:
    t: np.ndarray
    F_s: np.ndarray
    a_cmd: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(x, dtype=float) for x in (self.t, self.F_s, self.a_cmd)]
        if arrs[0].ndim != 1 or any(a.shape != arrs[0].shape for a in arrs):
            raise RecordError("t, F_s and a_cmd must be 1-D and of equal length")
        if arrs[0].size < 10:
            raise RecordError("record too short")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise RecordError("record contains non-finite values")
        d = np.diff(arrs[0])
        if not (d[0] > 0 and np.allclose(d, d[0], rtol=1e-6, atol=0)):
            raise RecordError("time samples must be uniform and increasing")
        for name, a in zip(("t", "F_s", "a_cmd"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def onset(self) -> int:
        nz = np.nonzero(self.a_cmd != 0.0)[0]
        if nz.size == 0:
            raise IdentificationError("no pulse in the command record")
        return int(nz[0])

    @property
    def pulse_end(self) -> int:
        """Index of the first sample after the first constant segment."""
        i = self.onset
        a0 = self.a_cmd[i]
        j = i
        while j < len(self.a_cmd) and self.a_cmd[j] == a0:
            j += 1
        return j

    @property
    def pulse_amp(self) -> float:
        return float(self.a_cmd[self.onset])

    @property
    def pulse_duration(self) -> float:
        return (self.pulse_end - self.onset) * self.dt

    @property
    def free_start(self) -> int:
        """First sample after the whole excitation (all nonzero commands)."""
        return int(np.nonzero(self.a_cmd != 0.0)[0][-1]) + 1


@dataclass(frozen=True)
class IdentResult:
    m_r_hat: float
    m_s_hat: float
    k_hat: float
    omega_hat: float
    residual: float

    def as_dict(self) -> dict:
        return dict(m_r_hat=self.m_r_hat, m_s_hat=self.m_s_hat, k_hat=self.k_hat,
                    omega_hat=self.omega_hat, residual=self.residual)


def estimate_mr(rec: PulseRecord) -> float:
    """Force jump across the pulse onset divided by the pulse amplitude."""
    i = rec.onset
    n_pre = int(round(PRE_WINDOW / rec.dt))
    if i < n_pre:
        raise IdentificationError(f"need {PRE_WINDOW} s of quiescent data before the pulse")
    if i + JUMP_SAMPLES >= len(rec.t):
        raise IdentificationError("record ends at the pulse onset")
    pre = rec.F_s[i - n_pre:i]
    jump = float(np.mean(rec.F_s[i + 1:i + 1 + JUMP_SAMPLES]) - np.mean(pre))
    if rec.pulse_amp == 0.0 or abs(jump) == 0.0 or abs(jump) < JUMP_SNR * float(np.std(pre)):
        raise IdentificationError("no detectable force jump at pulse onset")
    return jump / rec.pulse_amp


def _crossings(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    s = np.signbit(y)
    idx = np.nonzero(s[:-1] != s[1:])[0]
    # linear interpolation between the bracketing samples
    return t[idx] - y[idx] * (t[idx + 1] - t[idx]) / (y[idx + 1] - y[idx])


def estimate_omega(rec: PulseRecord) -> float:
    """Mean zero-crossing spacing of the free oscillation, first three
    cycles only."""
    i = rec.free_start
    y, t = rec.F_s[i:], rec.t[i:]
    if y.size < 4:
        raise IdentificationError("no free oscillation after the pulse")
    c = _crossings(y - np.mean(y), t)
    if c.size >= 3:
        # re-center on the mean over the whole cycles that were found
        lo, hi = np.searchsorted(t, [c[0], c[min(c.size, 2 * FREE_CYCLES + 1) - 1]])
        c = _crossings(y - np.mean(y[lo:hi]), t)
    if c.size < 3:
        raise IdentificationError("fewer than three zero crossings in the free oscillation")
    c = c[:2 * FREE_CYCLES + 1]
    return math.pi / float(np.mean(np.diff(c)))


def estimate_ms_k(rec: PulseRecord, omega: float) -> tuple:
    """Slosh mass and stiffness from the oscillation under constant
    acceleration.

    The peak-to-peak swing is taken from a least-squares fit of
    ``F0 + exp(-zeta w t) (A cos(w t) + B sin(w t))`` over the
    constant-acceleration phase (``zeta`` the assumed light damping), which
    equals the sample peak-to-peak for clean data and is far less sensitive
    to sensor noise.
    """
    a = rec.pulse_amp
    if a == 0.0:
        raise IdentificationError("zero pulse amplitude")
    if not omega > 0:
        raise IdentificationError("frequency estimate must be positive")
    if rec.pulse_duration < math.pi / omega:
        raise IdentificationError("pulse shorter than half an oscillation period")
    i0, i1 = rec.onset, rec.pulse_end
    tau = rec.t[i0:i1] - rec.t[i0]
    decay = np.exp(-ASSUMED_DAMPING * omega * tau)
    X = np.column_stack([np.ones_like(tau), decay * np.cos(omega * tau), decay * np.sin(omega * tau)])
    coef, *_ = np.linalg.lstsq(X, rec.F_s[i0:i1], rcond=None)
    F_pp = 2.0 * math.hypot(coef[1], coef[2])
    m_s = F_pp / (2.0 * abs(a))
    return m_s, m_s * omega * omega


def reconstruct(rec: PulseRecord, m_r: float, m_s: float, k: float,
                zeta: float = ASSUMED_DAMPING) -> np.ndarray:
    """Load-cell force of the design model driven by the recorded
    acceleration (ideal drive), offset by the pre-onset level."""
    omega = math.sqrt(k / m_s)
    c = 2 * zeta * math.sqrt(k * m_s)
    A = np.array([[0.0, 1.0], [-omega * omega, -2 * zeta * omega]])
    B = np.array([[0.0], [-1.0]])
    Phi, G0, _ = hold_matrices(A, B, rec.dt, "zoh")
    x = np.zeros(2)
    out = np.empty(len(rec.t))
    for i, a in enumerate(rec.a_cmd):
        out[i] = k * x[0] + c * x[1] + m_r * a
        x = Phi @ x + G0[:, 0] * a
    n_pre = min(rec.onset, int(round(PRE_WINDOW / rec.dt)))
    base = float(np.mean(rec.F_s[rec.onset - n_pre:rec.onset])) if n_pre else 0.0
    return out + base


def identify(rec: PulseRecord) -> IdentResult:
    """Run the three estimators and score the fit.

    The residual is the RMS misfit of :func:`reconstruct` relative to the RMS
    measured force, over the pulse and three free cycles.
    """
    m_r = estimate_mr(rec)
    omega = estimate_omega(rec)
    m_s, k = estimate_ms_k(rec, omega)
    if not (m_r > 0 and m_s > 0 and k > 0):
        raise IdentificationError("non-physical estimates")
    end_t = rec.t[rec.free_start] + FREE_CYCLES * 2 * math.pi / omega
    if rec.t[-1] < end_t - 1e-9:
        raise IdentificationError("record must extend three oscillation periods past the pulse")
    i0 = rec.onset
    i1 = int(np.searchsorted(rec.t, end_t)) + 1
    F_hat = reconstruct(rec, m_r, m_s, k)
    err = F_hat[i0:i1] - rec.F_s[i0:i1]
    ref = float(np.sqrt(np.mean(rec.F_s[i0:i1] ** 2)))
    residual = float(np.sqrt(np.mean(err ** 2)) / ref) if ref > 0 else math.inf
    return IdentResult(m_r, m_s, k, omega, residual)


def record_from_result(res, measured: bool = False) -> PulseRecord:
    """Pulse record from an open-loop simulation; the ideal load-cell force
    unless ``measured`` asks for the filtered and delayed sensor signal."""
    F = res.series["F_s"] if measured else res.series["F_s_true"]
    return PulseRecord(res.series["t"], F, res.series["a_exc"])


def read_record(path) -> PulseRecord:
    """Parse a ``t,F_s,a_cmd`` CSV (header required)."""
    cols = ("t", "F_s", "a_cmd")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    missing = [c for c in cols if c not in header]
    if missing:
        raise RecordError(f"missing column(s) {missing}", 1)
    idx = [header.index(c) for c in cols]
    data = []
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not x.strip() for x in row):
            continue
        try:
            data.append([float(row[i]) for i in idx])
        except (ValueError, IndexError):
            raise RecordError(f"cannot parse {row!r}", n) from None
    if not data:
        raise RecordError("no data rows", 2)
    arr = np.array(data)
    return PulseRecord(arr[:, 0], arr[:, 1], arr[:, 2])


def write_record(path, rec: PulseRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "F_s", "a_cmd"])
        for row in zip(rec.t, rec.F_s, rec.a_cmd):
            w.writerow([f"{v:.12g}" for v in row])
