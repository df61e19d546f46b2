"""Layered damping controller.

One control tick runs: slosh-force estimate (load cell minus the modeled
rigid-body force) -> engagement gate -> discretized core controller ->
plus a slow tank-velocity loop -> magnitude and rate limits -> double
integration into the (position, velocity, acceleration) command triple.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.signal import cont2discrete

from .lti import StateSpace, lowpass, series
from .plant import ParameterError

G = 9.81
CONTROL_DT = 0.005
HOLDS = ("zoh", "predictive")


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActuationChain:
    """Drive and load-cell dynamics seen between command and measurement.

    ``lowpass_corner`` models the drive loop, ``sensor_corner`` the load-cell
    filter and ``delay_T`` the dead time used by the feed-forward model.
    """

    lowpass_corner: float = 40.0
    delay_T: float = 0.035
    sensor_corner: float = 200.0

    def __post_init__(self):
        if not self.lowpass_corner > 0 or not self.sensor_corner > 0:
            raise ParameterError("actuation lowpass corners must be positive")
        if not (self.delay_T >= 0 and math.isfinite(self.delay_T)):
            raise ParameterError("actuation delay must be non-negative")

    def realization(self) -> StateSpace:
        from .uncertainty import pade2

        sys = series(lowpass(self.lowpass_corner, "u", "a"), lowpass(self.sensor_corner, "a", "b"))
        return series(sys, pade2(self.delay_T, "b", "y")).relabel(["u"], ["y"])

    def as_dict(self) -> dict:
        return dict(lowpass_corner=self.lowpass_corner, delay_T=self.delay_T, sensor_corner=self.sensor_corner)


@dataclass(frozen=True)
class Limiter:
    accel_limit: float = 0.6 * G
    rate_limit: float = 50.0

    def __post_init__(self):
        if not (self.accel_limit > 0 and self.rate_limit > 0):
            raise ParameterError("limits must be positive")


@dataclass(frozen=True)
class OuterLoop:
    """Tank velocity feedback; ``gain`` in 1/s, ``bandwidth`` in rad/s."""

    gain: float = 0.8
    bandwidth: float = 0.44

    def __post_init__(self):
        if self.gain < 0 or not self.bandwidth > 0:
            raise ParameterError("outer loop needs gain >= 0 and bandwidth > 0")

    @classmethod
    def for_mode(cls, omega_o: float, gain: float = 0.8) -> "OuterLoop":
        return cls(gain, omega_o / 10.0)

    def check(self, omega_o: float) -> None:
        if self.bandwidth > omega_o / 5.0 * (1 + 1e-12):
            raise ParameterError(f"outer-loop bandwidth {self.bandwidth} exceeds omega_o/5 = {omega_o / 5}")


def apply_limits(u: float, lim: Limiter, prev_u: float, dt: float) -> float:
    """Clamp magnitude, then slew relative to ``prev_u``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = min(max(u, -lim.accel_limit), lim.accel_limit)
    step = lim.rate_limit * dt
    return min(max(u, prev_u - step), prev_u + step)


def outer_loop_cmd(v_tank: float, loop: OuterLoop, prev: float = 0.0, dt: float | None = None) -> float:
    """``-gain * v_tank`` passed through a first-order lag at the loop
    bandwidth; with ``dt=None`` the unfiltered steady-state value."""
    target = -loop.gain * v_tank
    if dt is None:
        return target
    alpha = 1.0 - math.exp(-loop.bandwidth * dt)
    return prev + alpha * (target - prev)


def hold_matrices(A, B, dt: float, hold: str = "zoh"):
    """Exact discretization for a held input.

    Returns ``(Phi, G0, G1)`` with ``x+ = Phi x + G0 u_k + G1 (u_k - u_{k-1})``.
    ``"zoh"`` keeps ``u_k`` constant over the interval; ``"predictive"``
    extrapolates the last slope, ``u(t_k + s) = u_k + (u_k - u_{k-1}) s/dt``.
    """
    if hold not in HOLDS:
        raise ParameterError(f"hold must be one of {HOLDS}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    M = np.zeros((n + 2 * m, n + 2 * m))
    M[:n, :n] = A * dt
    M[:n, n:n + m] = B * dt
    M[n:n + m, n + m:] = np.eye(m)
    E = expm(M)
    Phi, G0, G1 = E[:n, :n], E[:n, n:n + m], E[:n, n + m:]
    if hold == "zoh":
        G1 = np.zeros_like(G1)
    return Phi, G0, G1


class ChainModel:
    """Discrete copy of the actuation chain driven by the issued commands."""

    def __init__(self, chain: ActuationChain, dt: float, hold: str = "zoh"):
        sys = chain.realization()
        self.C = sys.C[0].copy()
        self.D = float(sys.D[0, 0])
        self.Phi, G0, G1 = hold_matrices(sys.A, sys.B, dt, hold)
        self.G0, self.G1 = G0[:, 0], G1[:, 0]
        self.reset()

    def reset(self):
        self.x = np.zeros(len(self.C))
        self.u_prev = 0.0
        self.u_prev2 = 0.0

    def advance(self, u_last: float) -> float:
        """Propagate over the interval in which ``u_last`` was applied and
        return the modeled chain output at the end of it."""
        self.x = self.Phi @ self.x + self.G0 * u_last + self.G1 * (u_last - self.u_prev)
        self.u_prev = u_last
        return float(self.C @ self.x) + self.D * u_last


def estimate_slosh_force(F_s_meas: float, u_last: float, model: ChainModel, m_r_model: float) -> float:
    """Measured force minus the rigid-body force the last commands induce."""
    return F_s_meas - m_r_model * model.advance(u_last)


class EngageLogic:
    """Starts the controller once, at a detected extremum of ``|F_hat|``.

    Policies: ``"max"`` waits for a local maximum above ``threshold`` times
    the running peak since arming; ``"zero"`` fires at the first sign change
    of ``F_hat``; ``"time"`` fires at ``forced_time``.  Nothing fires within
    ``refractory`` seconds of arming.
    """

    POLICIES = ("max", "zero", "time")

    def __init__(self, policy: str = "max", threshold: float = 0.1, refractory: float = 0.1,
                 forced_time: float | None = None):
        if policy not in self.POLICIES:
            raise ParameterError(f"unknown engage policy {policy!r}")
        if policy == "time" and forced_time is None:
            raise ParameterError("time policy needs forced_time")
        self.policy, self.threshold, self.refractory = policy, threshold, refractory
        self.forced_time = forced_time
        self.reset()

    def reset(self):
        self.armed = False
        self.engaged = False
        self.t_arm = None
        self.t_engage = None
        self._hist = []
        self._peak = 0.0

    def arm(self, t: float):
        if not self.armed and not self.engaged:
            self.armed = True
            self.t_arm = t
            self._hist = []
            self._peak = 0.0

    def update(self, t: float, f_hat: float) -> bool:
        if self.engaged or not self.armed:
            return self.engaged
        a = abs(f_hat)
        self._peak = max(self._peak, a)
        h = self._hist
        h.append(f_hat)
        if len(h) > 3:
            h.pop(0)
        if t - self.t_arm < self.refractory:
            return False
        fire = False
        if self.policy == "time":
            fire = t >= self.forced_time
        elif self.policy == "zero":
            fire = len(h) >= 2 and h[-2] != 0.0 and np.sign(h[-1]) != np.sign(h[-2])
        elif len(h) == 3:
            m0, m1, m2 = (abs(x) for x in h)
            fire = m1 > m0 and m2 <= m1 and m1 >= self.threshold * self._peak and m1 > 0
        if fire:
            self.engaged, self.armed = True, False
            self.t_engage = t
        return self.engaged


def discretize_controller(K: StateSpace, dt: float) -> tuple:
    Ad, Bd, Cd, Dd, _ = cont2discrete((K.A, K.B, K.C, K.D), dt, method="bilinear")
    return Ad, Bd[:, 0], Cd[0], float(Dd[0, 0])


TELEMETRY_COLUMNS = ("t", "F_s", "F_hat", "xdd_cmd", "xd_cmd", "x_cmd", "engage_flag")


@dataclass
class DampingController:
    """Stateful per-run controller; call :meth:`step` once per control tick."""

    core: StateSpace
    chain: ActuationChain = field(default_factory=ActuationChain)
    m_r_model: float = 750.0
    limiter: Limiter | None = field(default_factory=Limiter)
    outer: OuterLoop | None = field(default_factory=OuterLoop)
    engage: EngageLogic = field(default_factory=EngageLogic)
    dt: float = CONTROL_DT
    hold: str = "zoh"
    record: bool = True

    def __post_init__(self):
        if self.core.ninputs != 1 or self.core.noutputs != 1:
            raise ParameterError("core controller must be SISO")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        self._Ad, self._Bd, self._Cd, self._Dd = discretize_controller(self.core, self.dt)
        self._model = ChainModel(self.chain, self.dt, self.hold)
        self.initialized = False

    def reset(self):
        self._xk = np.zeros(self.core.nstates)
        self._model.reset()
        self.engage.reset()
        self.t = 0.0
        self.u = 0.0
        self.v_cmd = 0.0
        self.x_cmd = 0.0
        self._outer = 0.0
        self.telemetry = []
        self.initialized = True

    def arm(self):
        self.engage.arm(self.t)

    def step(self, F_s_meas: float) -> float:
        """Advance one tick at time ``self.t`` and return the new command."""
        if not self.initialized:
            raise UsageError("call reset() before stepping the controller")
        f_hat = estimate_slosh_force(F_s_meas, self.u, self._model, self.m_r_model)
        engaged = self.engage.update(self.t, f_hat)
        u = 0.0
        if engaged:
            core = float(self._Cd @ self._xk) + self._Dd * f_hat
            self._xk = self._Ad @ self._xk + self._Bd * f_hat
            if self.outer is not None and self.outer.gain > 0:
                self._outer = outer_loop_cmd(self.v_cmd, self.outer, self._outer, self.dt)
            u = core + self._outer
            if self.limiter is not None:
                u = apply_limits(u, self.limiter, self.u, self.dt)
        u_prev, v_prev = self.u, self.v_cmd
        self.v_cmd = v_prev + 0.5 * self.dt * (u_prev + u)
        self.x_cmd = self.x_cmd + 0.5 * self.dt * (v_prev + self.v_cmd)
        self.u = u
        if self.record:
            self.telemetry.append((self.t, F_s_meas, f_hat, u, self.v_cmd, self.x_cmd, int(engaged)))
        self.t += self.dt
        return u

    @property
    def command_triple(self) -> tuple:
        return self.x_cmd, self.v_cmd, self.u

    def write_telemetry(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TELEMETRY_COLUMNS)
            for row in self.telemetry:
                w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])


def step(ctrl: DampingController | None, F_s_meas: float, dt: float) -> float:
    """Functional form of :meth:`DampingController.step`."""
    if ctrl is None or not getattr(ctrl, "initialized", False):
        raise UsageError("controller state is not initialized")
    if abs(dt - ctrl.dt) > 1e-12:
        raise UsageError(f"controller was discretized at dt={ctrl.dt}, got {dt}")
    return ctrl.step(F_s_meas)
