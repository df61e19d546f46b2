"""Fixed-step closed-loop simulation of the rig.

The tank is driven by an acceleration-controlled drive (lowpass plus
multiplicative perturbation), carries either the linear spring-mass slosh
model or a nonlinear pendulum, and is measured by a load cell (lowpass,
dead time, perturbation).  The plant is integrated with RK4; the controller
runs on its own slower clock.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .architecture import G, HOLDS, ActuationChain, DampingController, EngageLogic
from .lti import lowpass, series
from .plant import ParameterError, PlantParams, build_plant
from .uncertainty import PlantSample, nominal_sample, pade2

DAMPED_FRACTION = 0.15
STROKE_LIMIT = 0.2
PLANT_KINDS = ("linear", "pendulum")


class SimulationError(RuntimeError):
    def __init__(self, msg, t_last=None):
        super().__init__(msg if t_last is None else f"{msg} (last valid t = {t_last:.4f} s)")
        self.t_last = t_last


# -- excitation --------------------------------------------------------------

@dataclass(frozen=True)
class Pulse:
    """Constant tank acceleration ``amp`` for ``duration`` seconds, optionally
    followed by an equal and opposite braking pulse that returns the tank
    to rest."""

    amp: float
    duration: float
    start: float = 0.5
    brake: bool = False

    def __post_init__(self):
        if not self.duration > 0 or self.start < 0:
            raise ParameterError("pulse needs a positive duration and non-negative start")

    @property
    def end(self) -> float:
        return self.start + self.duration * (2 if self.brake else 1)

    def accel(self, t: float) -> float:
        if t < self.start:
            return 0.0
        if t < self.start + self.duration:
            return self.amp
        if self.brake and t < self.start + 2 * self.duration:
            return -self.amp
        return 0.0

    def as_dict(self) -> dict:
        return dict(kind="pulse", amp=self.amp, duration=self.duration, start=self.start, brake=self.brake)


@dataclass(frozen=True)
class Sine:
    """``amp * cos(freq * (t - start))`` over a whole number of cycles, so
    the tank velocity returns to zero when the excitation stops."""

    amp: float
    freq: float
    duration: float
    start: float = 0.5

    def __post_init__(self):
        if not (self.duration > 0 and self.freq > 0) or self.start < 0:
            raise ParameterError("sine needs positive frequency and duration")

    @property
    def end(self) -> float:
        period = 2 * math.pi / self.freq
        return self.start + max(1, math.floor(self.duration / period)) * period

    def accel(self, t: float) -> float:
        if self.start <= t < self.end:
            return self.amp * math.cos(self.freq * (t - self.start))
        return 0.0

    def as_dict(self) -> dict:
        return dict(kind="sine", amp=self.amp, freq=self.freq, duration=self.duration, start=self.start)


def excitation_from_dict(d: dict | None):
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind")
    if kind == "pulse":
        return Pulse(**d)
    if kind == "sine":
        return Sine(**d)
    raise ParameterError(f"unknown excitation kind {kind!r}")


# -- pendulum surrogate ------------------------------------------------------

@dataclass(frozen=True)
class PendulumParams:
    L: float
    m_s: float
    m_r: float
    c_p: float = 0.0
    g: float = G

    def __post_init__(self):
        if not (self.L > 0 and self.m_s > 0 and self.m_r > 0 and self.g > 0 and self.c_p >= 0):
            raise ParameterError("pendulum needs positive L, masses, gravity and non-negative damping")

    @classmethod
    def from_plant(cls, params: PlantParams, g: float = G) -> "PendulumParams":
        """Same small-angle frequency, masses and damping as ``params``."""
        L = g * params.m_s / params.k
        return cls(L=L, m_s=params.m_s, m_r=params.m_r, c_p=params.c * L * L, g=g)

    @property
    def omega_o(self) -> float:
        return math.sqrt(self.g / self.L)


def pendulum_dynamics(state, xdd_h: float, p: PendulumParams):
    """Derivative of ``[theta, theta_dot, x_h, xd_h]`` and the load-cell force.

    The pivot moves with the tank; the horizontal rod force on the tank is
    ``-m_s`` times the bob's horizontal acceleration.
    """
    th, om = state[0], state[1]
    if not abs(th) < math.pi / 2:
        raise SimulationError(f"pendulum angle {th:.3f} rad left the admissible range")
    s, c = math.sin(th), math.cos(th)
    om_dot = -(p.g / p.L) * s - (xdd_h / p.L) * c - p.c_p / (p.m_s * p.L * p.L) * om
    xdd_s = xdd_h + p.L * (om_dot * c - om * om * s)
    F_s = p.m_r * xdd_h - p.m_s * xdd_s
    return np.array([om, om_dot, state[3], xdd_h]), F_s


def swing_delta(angle_deg: float, params: PlantParams) -> float:
    """Horizontal bob offset of the matched pendulum at ``angle_deg``."""
    return PendulumParams.from_plant(params).L * math.sin(math.radians(angle_deg))


# -- scenario and result -----------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """One simulation run.

    ``engage`` is ``"max"``, ``"zero"`` or a forced engagement time in
    seconds.  The controller is armed ``free_phase`` seconds after the
    excitation ends.  ``initial_delta`` displaces the slosh mass (metres,
    horizontal) at t=0.
    """

    name: str = "scenario"
    excitation: object = None
    free_phase: float = 1.0
    engage: object = "max"
    total_time: float = 15.0
    plant_kind: str = "linear"
    sample: PlantSample = field(default_factory=lambda: nominal_sample(PlantParams()))
    rig: ActuationChain = field(default_factory=ActuationChain)
    initial_delta: float = 0.0
    dt_plant: float = 1e-3
    dt_ctrl: float = 5e-3
    hold: str = "zoh"
    stroke_limit: float | None = STROKE_LIMIT
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.plant_kind not in PLANT_KINDS:
            raise ParameterError(f"plant_kind must be one of {PLANT_KINDS}")
        if self.hold not in HOLDS:
            raise ParameterError(f"hold must be one of {HOLDS}")
        if not (self.dt_plant > 0 and self.dt_ctrl > 0 and self.total_time > 0 and self.free_phase >= 0):
            raise ParameterError("time steps and durations must be positive")
        ratio = self.dt_ctrl / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9:
            raise ParameterError("control step must be a whole multiple of the plant step")
        if isinstance(self.engage, str):
            if self.engage not in ("max", "zero"):
                raise ParameterError(f"unknown engage policy {self.engage!r}")
        elif not float(self.engage) >= 0:
            raise ParameterError("forced engagement time must be non-negative")
        period = 2 * math.pi / self.sample.params.omega_o
        if self.total_time < self.arm_time + 4 * period - 1e-9:
            raise ParameterError("total_time must cover excitation, free phase and four slosh periods")

    @property
    def arm_time(self) -> float:
        end = self.excitation.end if self.excitation is not None else 0.0
        return end + self.free_phase

    def engage_logic(self) -> EngageLogic:
        if isinstance(self.engage, str):
            return EngageLogic(self.engage)
        return EngageLogic("time", forced_time=float(self.engage), refractory=0.0)

    def replace(self, **kw) -> "Scenario":
        from dataclasses import replace
        return replace(self, **kw)


SERIES = ("t", "x_h", "xd_h", "xdd_h", "slosh", "F_s", "F_s_true", "F_hat", "xdd_cmd", "a_exc", "engage_flag")


@dataclass
class SimResult:
    """Uniformly sampled series (plant rate) and derived metrics.

    ``slosh`` is the relative displacement for the linear plant and the
    pendulum angle (rad) for the surrogate.
    """

    series: dict
    metrics: dict
    t_arm: float
    t_engage: float | None
    events: list = field(default_factory=list)
    scenario: Scenario | None = None

    def __getattr__(self, name):
        series = self.__dict__.get("series", {})
        if name in series:
            return series[name]
        raise AttributeError(name)

    def write_csv(self, path) -> None:
        cols = [self.series[k] for k in SERIES]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES)
            for row in zip(*cols):
                w.writerow([f"{v:.9g}" for v in row])


# -- rig ---------------------------------------------------------------------

class _Rig:
    """Drive chain, tank and slosh, load cell as one RK4-integrable system."""

    def __init__(self, scn: Scenario):
        samp, rig = scn.sample, scn.rig
        self.kind = scn.plant_kind
        self.params = samp.params
        drive = series(lowpass(rig.lowpass_corner, "u", "a_lp"), samp.act_gain_pert.system("a_lp", "a"))
        sensor = series(series(lowpass(rig.sensor_corner, "F", "F_lp"), pade2(samp.delay_T, "F_lp", "F_del")),
                        samp.sens_gain_pert.system("F_del", "F_meas"))
        self.Ad, self.Bd, self.Cd, self.Dd = drive.A, drive.B[:, 0], drive.C[0], float(drive.D[0, 0])
        self.As, self.Bs, self.Cs, self.Ds = sensor.A, sensor.B[:, 0], sensor.C[0], float(sensor.D[0, 0])
        self.nd, self.ns = drive.nstates, sensor.nstates
        self.ip = self.nd
        self.isn = self.nd + 4
        if self.kind == "linear":
            P = build_plant(self.params)
            self.PA, self.PBh, self.Cf = P.A, P.B[:, 1], P.C[0]
            self._assemble()
        else:
            self.pend = PendulumParams.from_plant(self.params)
        self.stop = 0
        self.limit = scn.stroke_limit

    def _assemble(self):
        # free-running linear rig as dz = M z + bu u + be a_exc
        nd, ip, isn = self.nd, self.ip, self.isn
        n = isn + self.ns
        m_r = self.params.m_r
        M = np.zeros((n, n))
        bu, be = np.zeros(n), np.zeros(n)
        M[:nd, :nd] = self.Ad
        bu[:nd] = self.Bd
        M[ip:isn, ip:isn] = self.PA - np.outer(self.PBh, self.Cf)
        M[ip:isn, :nd] = m_r * np.outer(self.PBh, self.Cd)
        bu[ip:isn] = m_r * self.Dd * self.PBh
        be[ip:isn] = m_r * self.PBh
        M[isn:, isn:] = self.As
        M[isn:, ip:isn] = np.outer(self.Bs, self.Cf)
        M[isn:, :nd] = m_r * np.outer(self.Bs, self.Cd)
        bu[isn:] = m_r * self.Dd * self.Bs
        be[isn:] = m_r * self.Bs
        self.M, self.bu, self.be = M, bu, be

    def initial_state(self, delta0: float) -> np.ndarray:
        z = np.zeros(self.nd + 4 + self.ns)
        if self.kind == "linear":
            z[self.ip] = delta0
        else:
            L = self.pend.L
            if abs(delta0) >= L:
                raise ParameterError("initial slosh offset exceeds the pendulum length")
            z[self.ip] = math.asin(delta0 / L)
        return z

    def tank(self, z):
        x = z[self.ip:self.ip + 4]
        if self.kind == "linear":
            return x[1], x[3]
        return x[2], x[3]

    def accel(self, z, u, a_exc):
        a = float(self.Cd @ z[:self.nd]) + self.Dd * u + a_exc
        if self.stop and a * self.stop > 0:
            return 0.0
        return a

    def deriv(self, z, u, a_exc):
        a_h = self.accel(z, u, a_exc)
        dz = np.empty_like(z)
        zd = z[:self.nd]
        dz[:self.nd] = self.Ad @ zd + self.Bd * u
        x = z[self.ip:self.isn]
        if self.kind == "linear":
            F_sp = float(self.Cf @ x)
            dz[self.ip:self.isn] = self.PA @ x + self.PBh * (self.params.m_r * a_h - F_sp)
            F_true = F_sp + self.params.m_r * a_h
        else:
            dx, F_true = pendulum_dynamics(x, a_h, self.pend)
            dz[self.ip:self.isn] = dx
        dz[self.isn:] = self.As @ z[self.isn:] + self.Bs * F_true
        return dz, a_h, F_true

    def observe(self, z, u, a_exc):
        """Tank acceleration and true load-cell force."""
        if self.kind == "linear":
            a_h = self.accel(z, u, a_exc)
            return a_h, float(self.Cf @ z[self.ip:self.isn]) + self.params.m_r * a_h
        _, a_h, F_true = self.deriv(z, u, a_exc)
        return a_h, F_true

    def rate(self, z, u, a_exc):
        """State derivative alone (the RK4 stages need nothing else)."""
        if self.kind == "linear" and not self.stop:
            return self.M @ z + self.bu * u + self.be * a_exc
        return self.deriv(z, u, a_exc)[0]

    def measure(self, z, F_true):
        return float(self.Cs @ z[self.isn:]) + self.Ds * F_true

    def slosh(self, z):
        x = z[self.ip:self.isn]
        return x[0] - x[1] if self.kind == "linear" else x[0]

    def enforce_stop(self, z, t, events):
        """Hard end stop: the tank stops dead, the slosh mass keeps its
        inertial velocity."""
        if self.limit is None:
            return
        x_h, v_h = self.tank(z)
        x = z[self.ip:self.isn]
        if abs(x_h) >= self.limit:
            side = 1 if x_h > 0 else -1
            if self.kind == "linear":
                x[1] = side * self.limit
                x[3] = 0.0
            else:
                x[2] = side * self.limit
                x[3] = 0.0
                x[1] += v_h / (self.pend.L * math.cos(x[0]))
            if not self.stop:
                events.append((t, side * self.limit))
            self.stop = side
        elif self.stop:
            self.stop = 0


def simulate(scn: Scenario, arch: DampingController | None = None) -> SimResult:
    """Run one scenario; ``arch=None`` is open loop.

    Raises
    ------
    SimulationError
        On non-finite state or when the pendulum leaves (-pi/2, pi/2).
    """
    rig = _Rig(scn)
    h = scn.dt_plant
    per_tick = int(round(scn.dt_ctrl / h))
    n = int(round(scn.total_time / h)) + 1
    rng = np.random.default_rng(scn.seed)
    exc = scn.excitation
    a_exc = (lambda t: 0.0) if exc is None else exc.accel

    if arch is not None:
        if abs(arch.dt - scn.dt_ctrl) > 1e-12:
            raise ParameterError("controller rate does not match the scenario control step")
        arch.engage = scn.engage_logic()
        arch.reset()

    out = {k: np.zeros(n) for k in SERIES}
    z = rig.initial_state(scn.initial_delta)
    events = []
    u_k = u_prev = 0.0
    f_hat = 0.0
    engaged = False
    t_arm = scn.arm_time
    armed = False

    t = 0.0
    try:
        for i in range(n):
            t = i * h
            a_h, F_true = rig.observe(z, u_k, a_exc(t))
            F_meas = rig.measure(z, F_true)
            if scn.noise_std > 0:
                F_meas += scn.noise_std * rng.standard_normal()
            if i % per_tick == 0:
                if arch is not None:
                    if not armed and t >= t_arm - 1e-12:
                        arch.arm()
                        armed = True
                    u_prev = u_k
                    u_k = arch.step(F_meas)
                    f_hat = arch.telemetry[-1][2] if arch.record else F_meas
                    engaged = arch.engage.engaged
                else:
                    f_hat = F_meas
                # the applied command already changed this instant
                a_h, F_true = rig.observe(z, u_k, a_exc(t))
                t_tick = t
            x_h, v_h = rig.tank(z)
            row = (t, x_h, v_h, a_h, rig.slosh(z), F_meas, F_true, f_hat, u_k, a_exc(t), float(engaged))
            for k, v in zip(SERIES, row):
                out[k][i] = v
            if i == n - 1:
                break

            slope = (u_k - u_prev) / scn.dt_ctrl if scn.hold == "predictive" else 0.0

            def uu(s):
                return u_k + slope * (s - t_tick)

            k1 = rig.rate(z, uu(t), a_exc(t))
            k2 = rig.rate(z + 0.5 * h * k1, uu(t + 0.5 * h), a_exc(t + 0.5 * h))
            k3 = rig.rate(z + 0.5 * h * k2, uu(t + 0.5 * h), a_exc(t + 0.5 * h))
            k4 = rig.rate(z + h * k3, uu(t + h), a_exc(t + h))
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(z)):
                raise SimulationError("state became non-finite", t)
            rig.enforce_stop(z, t + h, events)
    except SimulationError as exc:
        if exc.t_last is not None:
            raise
        # the state at the start of the failing step was the last good one
        raise SimulationError(str(exc), t) from exc

    t_engage = arch.engage.t_engage if arch is not None else None
    omega_o = scn.sample.params.omega_o
    if arch is None:
        t_ref = t_arm
    else:
        t_ref = t_engage
    metrics = compute_metrics(out, t_ref, omega_o)
    metrics["stop_events"] = len(events)
    return SimResult(out, metrics, t_arm, t_engage, events, scn)


def compute_metrics(series: dict, t_ref: float | None, omega_o: float,
                    fraction: float = DAMPED_FRACTION) -> dict:
    """Damping, stroke and drift figures from a result's series.

    ``cycles_to_damp`` counts the full slosh periods (``2*pi/omega_o``)
    completed between ``t_ref`` and the moment the ``|F_hat|`` envelope
    settles below ``fraction`` of its value at ``t_ref``; ``inf`` when it
    never settles within the record and ``None`` without a reference time.
    """
    t = np.asarray(series["t"])
    f = np.abs(np.asarray(series["F_hat"]))
    x_h = np.asarray(series["x_h"])
    v_h = np.asarray(series["xd_h"])
    dt = t[1] - t[0]
    period = 2 * math.pi / omega_o
    last = t >= t[-1] - 1.0 - 1e-12
    m = {"terminal_tank_velocity": float(np.mean(v_h[last])),
         "cycles_to_damp": None, "damping_time": None,
         "max_stroke": None, "envelope_ratio_per_cycle": [], "engage_amplitude": None}
    if t_ref is None:
        return m
    i0 = int(np.searchsorted(t, t_ref - 1e-12))
    m["max_stroke"] = float(np.max(np.abs(x_h[i0:] - x_h[i0])))

    peaks, _ = find_peaks(f, distance=max(1, int(0.35 * period / dt)))
    before = peaks[peaks <= i0]
    # engagement fires a tick or so after the extremum it detects
    if before.size and t_ref - t[before[-1]] < 0.5 * period:
        ref = before[-1]
    else:
        after = peaks[peaks > i0]
        if not after.size:
            m["cycles_to_damp"] = 0
            m["damping_time"] = 0.0
            return m
        ref = after[0]
    A0 = float(f[ref])
    m["engage_amplitude"] = A0
    post = peaks[peaks > ref]
    seq = np.concatenate([[ref], post]).astype(int)
    m["envelope_ratio_per_cycle"] = [float(f[seq[j + 2]] / f[seq[j]]) for j in range(len(seq) - 2)]

    above = seq[f[seq] >= fraction * A0]
    j = int(above[-1])
    if t[-1] - t[j] <= period:
        m["cycles_to_damp"] = math.inf
        m["damping_time"] = math.inf
        return m
    below = np.nonzero(f[j:] < fraction * A0)[0]
    t_star = max(float(t[j + below[0]]), t_ref)
    m["damping_time"] = t_star - t_ref
    m["cycles_to_damp"] = int(math.floor((t_star - t_ref) / period + 1e-9))
    return m


def simulate_free(params: PlantParams, x0, t_end: float, dt: float = 1e-3) -> tuple:
    """RK4 run of the force-free design model; returns ``(t, x)``."""
    P = build_plant(params)
    A = P.A
    n = int(round(t_end / dt)) + 1
    xs = np.empty((n, 4))
    x = np.asarray(x0, dtype=float).copy()
    # one RK4 step of a linear system is a fixed matrix polynomial
    Ah = A * dt
    M = np.eye(4) + Ah + Ah @ Ah / 2 + Ah @ Ah @ Ah / 6 + Ah @ Ah @ Ah @ Ah / 24
    for i in range(n):
        xs[i] = x
        x = M @ x
    return np.arange(n) * dt, xs
