"""Performance weights and fixed-structure robust controller tuning.

The controller is a gain times a general biquad (notch or lead) times two
first-order lowpasses.  Its six parameters are tuned by a multi-start
pattern search minimizing the worst weighted H-infinity norm over a sampled
uncertainty set, with penalties for loop-shape, pole-region, roll-off and
impulse-response requirements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.stats import qmc

from .freq import WeightedLoop, close_loop, freqresp, hinf_norm, spectral_abscissa
from .lti import StateSpace, connect, gain, series, summer, tf2ss
from .plant import ParameterError
from .uncertainty import PlantSample, assemble_loop

log = logging.getLogger(__name__)

POLE_EPS = 0.05
# damping ratio whose envelope falls to 15% within two periods
TWO_CYCLE_DAMPING = 0.15
PARAM_NAMES = ("V", "zeta1", "zeta2", "omega_n", "omega_1", "omega_2")


class SynthesisError(RuntimeError):
    """No feasible controller was found; ``diagnostics`` holds the best attempt."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


# -- weights -----------------------------------------------------------------

@dataclass(frozen=True)
class WeightSpec:
    omega_o: float = 4.4
    d: float = 20.0
    wd_dc: float = 400.0
    wd_hf: float = 4.0
    wc_dc: float = 0.05
    wc_hf: float = 5.0
    fd_scale: float = 1.0
    n_scale: float = 1.0

    def __post_init__(self):
        if not (self.omega_o > 0 and self.d > 0):
            raise ParameterError("omega_o and d must be positive")
        if self.omega_c <= self.omega_o:
            raise ParameterError("roll-off frequency must lie above the slosh mode")
        for name in ("wd_dc", "wd_hf", "wc_dc", "wc_hf", "fd_scale", "n_scale"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")

    @property
    def omega_d(self) -> float:
        return self.omega_o / 2.0

    @property
    def omega_c(self) -> float:
        return self.omega_d + self.d

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("omega_o", "d", "wd_dc", "wd_hf", "wc_dc", "wc_hf", "fd_scale", "n_scale")}


def _first_order_weight(dc, hf, corner, inp, out) -> StateSpace:
    # (hf*s + dc*corner)/(s + corner)
    return tf2ss([hf, dc * corner], [1.0, corner], inp, out)


def make_weights(spec: WeightSpec) -> tuple:
    """Disturbance weight (lowpass-shaped, corner ``omega_d``) and control
    weight (highpass-shaped, corner ``omega_c``)."""
    W_d = _first_order_weight(spec.wd_dc, spec.wd_hf, spec.omega_d, "delta_dot", "p")
    W_c = _first_order_weight(spec.wc_dc, spec.wc_hf, spec.omega_c, "xdd_cmd_out", "c")
    return W_d, W_c


# -- controller --------------------------------------------------------------

@dataclass(frozen=True)
class ControllerParams:
    # negative gain: the command must oppose the slosh force it sees
    V: float = -1.5e-3
    zeta1: float = 0.7
    zeta2: float = 0.7
    omega_n: float = 6.0
    omega_1: float = 10.0
    omega_2: float = 10.0

    def __post_init__(self):
        for z in ("zeta1", "zeta2"):
            v = getattr(self, z)
            if not 0.0 < v <= 2.0:
                raise ParameterError(f"{z} must lie in (0, 2], got {v}")
        for w in ("omega_n", "omega_1", "omega_2"):
            if not getattr(self, w) > 0:
                raise ParameterError(f"{w} must be positive")
        if not math.isfinite(self.V):
            raise ParameterError("V must be finite")
        if self.max_pole_real() > -POLE_EPS:
            raise ParameterError(f"controller poles must have real part <= -{POLE_EPS}")

    def poles(self) -> np.ndarray:
        biquad = np.roots([1.0, 2 * self.zeta2 * self.omega_n, self.omega_n ** 2])
        return np.concatenate([biquad, [-self.omega_1, -self.omega_2]])

    def max_pole_real(self) -> float:
        return float(np.max(self.poles().real))

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    @classmethod
    def from_vector(cls, v) -> "ControllerParams":
        return cls(**{k: float(x) for k, x in zip(PARAM_NAMES, v)})

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}


def build_controller(p: ControllerParams, inp: str = "F_hat", out: str = "xdd_cmd") -> StateSpace:
    """Strictly proper four-state realization of the fixed structure."""
    if not isinstance(p, ControllerParams):
        raise ParameterError("build_controller expects ControllerParams")
    wn = p.omega_n
    biquad = tf2ss([1.0, 2 * p.zeta1 * wn, wn * wn], [1.0, 2 * p.zeta2 * wn, wn * wn], inp, "c_bq")
    lp1 = tf2ss([p.omega_1], [1.0, p.omega_1], "c_bq", "c_lp")
    lp2 = tf2ss([p.V * p.omega_2], [1.0, p.omega_2], "c_lp", out)
    K = series(series(biquad, lp1), lp2)
    return K.relabel([inp], [out])


# -- generalized plant -------------------------------------------------------

def weighted_loop(samp: PlantSample, actuation, weights: WeightSpec, m_r_model: float | None = None) -> WeightedLoop:
    """Rig plus feed-forward estimator plus weights as a generalized plant.

    The measurement is the slosh-force estimate: the measured load-cell
    force minus the rigid-body force predicted from the command through the
    actuation-chain model.
    """
    rig = assemble_loop(samp, actuation)
    m_r_model = samp.params.m_r if m_r_model is None else m_r_model
    W_d, W_c = make_weights(weights)
    model = actuation.realization().relabel(["xdd_cmd"], ["a_model"])
    blocks = [
        gain(weights.fd_scale, "w_Fd", "F_d"),
        gain(weights.n_scale, "w_n", "n"),
        rig,
        model,
        summer(["F_s", "a_model"], "F_hat", [1.0, -m_r_model]),
        W_d,
        W_c,
    ]
    P = connect(blocks, inputs=["w_Fd", "w_n", "xdd_cmd"], outputs=["p", "c", "F_hat"])
    return WeightedLoop(P, ("w_Fd", "w_n"), ("p", "c"), "F_hat", "xdd_cmd")


# -- tuning ------------------------------------------------------------------

HARD_DEFAULT = ("stability", "pole_region", "crossover_band", "decay")
SOFT_DEFAULT = ("slope", "rolloff", "impulse")


@dataclass(frozen=True)
class TuneSpec:
    """Requirements and search settings for :func:`tune`.

    Attributes
    ----------
    crossover_band : tuple of float
        Allowed interval for the highest unity-gain crossing of the nominal
        loop gain, rad/s.
    slope_range : tuple of float
        Allowed mean log-log slope of the loop gain over the octave above
        crossover (-1 is 20 dB/dec).  Past a lightly damped mode the loop
        falls at 40 dB/dec or faster, hence the default.
    pole_max_real, pole_min_damping : float
        Region the controller poles must lie in.
    rolloff_freq : float
        Above this frequency the controller gain must fall by at least
        ``rolloff_db`` over the following decade.
    stability_margin : float
        Every sampled closure needs spectral abscissa below ``-stability_margin``.
    nominal_decay : float
        The nominal closure needs spectral abscissa below ``-nominal_decay``.
        0.15*omega_o leaves 15% of an oscillation after two periods.
    hard : tuple of str
        Requirements that gate feasibility; everything else is penalized.
    """

    crossover_band: tuple = (4.4, 13.2)
    slope_range: tuple = (-6.0, -2.0)
    pole_max_real: float = -POLE_EPS
    pole_min_damping: float = 0.1
    rolloff_freq: float = 22.2
    rolloff_db: float = 34.0
    stability_margin: float = 0.05
    nominal_decay: float = 0.66
    reference_impulse: tuple | None = None
    impulse_weight: float = 0.1
    soft_weight: float = 1.0
    hard: tuple = HARD_DEFAULT
    n_starts: int = 8
    max_evals: int = 1200
    mesh_init: float = 0.5
    mesh_tol: float = 1e-3
    hinf_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "crossover_band", tuple(float(x) for x in self.crossover_band))
        object.__setattr__(self, "slope_range", tuple(float(x) for x in self.slope_range))
        object.__setattr__(self, "hard", tuple(self.hard))
        lo, hi = self.crossover_band
        if not 0 < lo < hi:
            raise ParameterError("crossover band must be positive and ordered")
        if not self.slope_range[0] < self.slope_range[1]:
            raise ParameterError("slope range must be ordered")
        if self.pole_max_real > -POLE_EPS + 1e-15:
            raise ParameterError(f"controller poles need real part <= -{POLE_EPS}")
        if self.n_starts < 1 or self.max_evals < 1:
            raise ParameterError("need at least one start and one evaluation")
        unknown = set(self.hard) - set(HARD_DEFAULT + SOFT_DEFAULT)
        if unknown:
            raise ParameterError(f"unknown requirement(s): {sorted(unknown)}")

    @classmethod
    def for_weights(cls, weights: WeightSpec, **kw) -> "TuneSpec":
        """Defaults scaled to the slosh mode: crossover in ``[w_o, 3 w_o]``,
        roll-off at the control-weight corner."""
        kw.setdefault("crossover_band", (weights.omega_o, 3.0 * weights.omega_o))
        kw.setdefault("rolloff_freq", weights.omega_c)
        kw.setdefault("nominal_decay", TWO_CYCLE_DAMPING * weights.omega_o)
        spec = cls(**kw)
        lo, hi = spec.crossover_band
        if not (weights.omega_o / 4.0 < lo and hi < weights.omega_c):
            raise ParameterError("crossover band must lie within (omega_o/4, omega_c)")
        return spec

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "crossover_band", "slope_range", "pole_max_real", "pole_min_damping", "rolloff_freq",
            "rolloff_db", "stability_margin", "nominal_decay", "impulse_weight", "soft_weight", "hard", "n_starts",
            "max_evals", "mesh_init", "mesh_tol", "hinf_tol", "seed")}
        d["crossover_band"] = list(d["crossover_band"])
        d["slope_range"] = list(d["slope_range"])
        d["hard"] = list(d["hard"])
        return d


REFERENCE_CONTROLLER = ControllerParams()
IMPULSE_TIMES = np.arange(0.0, 3.0, 0.01)


def disturbance_impulse(p: ControllerParams, samp: PlantSample, actuation, m_r_model=None,
                        times=IMPULSE_TIMES) -> np.ndarray:
    """Closed-loop response of the relative velocity to a unit impulse in
    the slosh disturbance force."""
    rig = assemble_loop(samp, actuation).select(inputs=["xdd_cmd", "F_d"])
    mr = samp.params.m_r if m_r_model is None else m_r_model
    model = actuation.realization().relabel(["xdd_cmd"], ["a_model"])
    sys = connect([rig, model, summer(["F_s", "a_model"], "F_hat", [1.0, -mr]), build_controller(p)],
                  inputs=["F_d"], outputs=["delta_dot"])
    if spectral_abscissa(sys) >= 0:
        return np.full(len(times), np.inf)
    dt = float(times[1] - times[0])
    Ad = expm(sys.A * dt)
    x = sys.B[:, 0].copy()
    out = np.empty(len(times))
    for i in range(len(times)):
        out[i] = sys.C[0] @ x
        x = Ad @ x
    return out


def reference_impulse(samp: PlantSample, actuation, m_r_model=None) -> tuple:
    """Stand-in target trace produced by the hand-tuned reference controller."""
    return IMPULSE_TIMES.copy(), disturbance_impulse(REFERENCE_CONTROLLER, samp, actuation, m_r_model)


def worst_case_cost(p: ControllerParams, samples, weights: WeightSpec, actuation,
                    m_r_model: float | None = None, tol: float = 1e-4,
                    stability_margin: float = 0.0) -> float:
    """Largest weighted H-infinity norm over the samples; ``inf`` as soon as
    one closure is not stable with the requested margin."""
    if not samples:
        raise ValueError("need at least one sample")
    K = build_controller(p)
    worst = 0.0
    for samp in samples:
        mr = samp.params.m_r if m_r_model is None else m_r_model
        cl = close_loop(weighted_loop(samp, actuation, weights, mr), K)
        if spectral_abscissa(cl) >= -stability_margin:
            return math.inf
        worst = max(worst, hinf_norm(cl, tol=tol, omega_ref=weights.omega_o))
        if math.isinf(worst):
            return worst
    return worst


def nominal_loop_gain(p: ControllerParams, samp: PlantSample, actuation, omegas,
                      m_r_model: float | None = None) -> np.ndarray:
    """Complex loop gain ``-C(jw) G(jw)`` with ``G`` the command to
    estimated-force map (negative-feedback convention)."""
    mr = samp.params.m_r if m_r_model is None else m_r_model
    loop = weighted_loop(samp, actuation, WeightSpec(), mr)
    G = freqresp(loop.channel(loop.command, loop.measurement), omegas)[:, 0, 0]
    C = freqresp(build_controller(p), omegas)[:, 0, 0]
    return -C * G


LOOP_GRID = np.logspace(-1, 3, 800)


def crossover(L: np.ndarray, omegas: np.ndarray) -> float:
    """Highest unity crossing of ``|L|`` on the grid, log-interpolated;
    ``nan`` when ``|L|`` never crosses one."""
    mag = np.log(np.abs(L))
    idx = np.nonzero((mag[:-1] >= 0) & (mag[1:] < 0))[0]
    if idx.size == 0:
        return math.nan
    i = idx[-1]
    lw = np.log(omegas)
    frac = mag[i] / (mag[i] - mag[i + 1])
    return math.exp(lw[i] + frac * (lw[i + 1] - lw[i]))


def loop_slope(p: ControllerParams, samp: PlantSample, actuation, wc: float, m_r_model=None) -> float:
    """Mean log-log slope of ``|L|`` over the octave above ``wc``."""
    L = np.abs(nominal_loop_gain(p, samp, actuation, [wc, 2.0 * wc], m_r_model))
    return float(math.log(L[1] / L[0]) / math.log(2.0))


def requirement_violations(p: ControllerParams, spec: TuneSpec, nominal: PlantSample, actuation,
                           m_r_model=None, ref_impulse=None) -> dict:
    """Non-negative violation measure per requirement (0 means satisfied)."""
    v = {}
    poles = p.poles()
    re = float(np.max(poles.real))
    mags = np.abs(poles)
    damp = float(np.min(-poles.real / mags))
    v["pole_region"] = max(0.0, re - spec.pole_max_real) + max(0.0, spec.pole_min_damping - damp)

    L = nominal_loop_gain(p, nominal, actuation, LOOP_GRID, m_r_model)
    wc = crossover(L, LOOP_GRID)
    lo, hi = spec.crossover_band
    if math.isnan(wc):
        v["crossover_band"] = 1.0
        v["slope"] = 1.0
    else:
        v["crossover_band"] = max(0.0, math.log(lo / wc), math.log(wc / hi))
        slope = loop_slope(p, nominal, actuation, wc, m_r_model)
        s_lo, s_hi = spec.slope_range
        v["slope"] = max(0.0, s_lo - slope, slope - s_hi)

    mr = nominal.params.m_r if m_r_model is None else m_r_model
    cl = close_loop(weighted_loop(nominal, actuation, WeightSpec(), mr), build_controller(p))
    v["decay"] = max(0.0, spectral_abscissa(cl) + spec.nominal_decay)

    C = np.abs(freqresp(build_controller(p), [spec.rolloff_freq, 10 * spec.rolloff_freq])[:, 0, 0])
    drop_db = 20 * math.log10(C[0] / C[1]) if C[1] > 0 else math.inf
    v["rolloff"] = max(0.0, (spec.rolloff_db - drop_db) / 20.0)

    ref = ref_impulse if ref_impulse is not None else spec.reference_impulse
    if ref is not None:
        t_ref, y_ref = (np.asarray(a, dtype=float) for a in ref)
        y = disturbance_impulse(p, nominal, actuation, m_r_model, t_ref)
        if not np.all(np.isfinite(y)):
            v["impulse"] = 1.0
        else:
            v["impulse"] = float(np.sum((y - y_ref) ** 2) / max(np.sum(y_ref ** 2), 1e-300))
    else:
        v["impulse"] = 0.0
    return v


@dataclass
class TuneResult:
    params: ControllerParams
    cost: float
    objective: float
    feasible: bool
    violations: dict
    history: list = field(default_factory=list)
    evaluations: int = 0

    def history_rows(self):
        return [(i, c, f) for i, (c, f) in enumerate(self.history)]


# search box in log space: |V|, zeta1, zeta2, omega_n, omega_1, omega_2
_LOWER = np.log([1e-6, 0.02, 0.1, 1.0, 1.0, 1.0])
_UPPER = np.log([1e-1, 2.0, 2.0, 200.0, 200.0, 200.0])
INFEASIBLE = 1e6


class _Problem:
    def __init__(self, sign, spec, samples, weights, actuation, nominal, m_r_model, ref):
        self.sign, self.spec = sign, spec
        self.samples, self.weights, self.actuation = samples, weights, actuation
        self.nominal, self.m_r_model, self.ref = nominal, m_r_model, ref
        self.evals = 0
        self.cache = {}

    def params(self, z) -> ControllerParams:
        x = np.exp(z)
        return ControllerParams(self.sign * x[0], *x[1:])

    def __call__(self, z):
        key = tuple(np.round(z, 12))
        if key in self.cache:
            return self.cache[key]
        self.evals += 1
        try:
            p = self.params(z)
        except ParameterError:
            res = (INFEASIBLE * 10, math.inf, False, {"pole_region": 1.0})
            self.cache[key] = res
            return res
        viol = requirement_violations(p, self.spec, self.nominal, self.actuation, self.m_r_model, self.ref)
        hard = sum(viol[h] for h in self.spec.hard if h in viol)
        cost = math.inf
        if hard == 0.0:
            cost = worst_case_cost(p, self.samples, self.weights, self.actuation, self.m_r_model,
                                   tol=self.spec.hinf_tol, stability_margin=self.spec.stability_margin)
        feasible = hard == 0.0 and math.isfinite(cost)
        if feasible:
            soft = sum(viol[s] for s in viol if s not in self.spec.hard and s != "impulse")
            obj = cost + self.spec.soft_weight * soft + self.spec.impulse_weight * viol["impulse"]
        else:
            obj = INFEASIBLE + hard + (1.0 if hard == 0.0 else 0.0)
        res = (obj, cost, feasible, viol)
        self.cache[key] = res
        return res


def _pattern_search(prob: _Problem, z0, spec: TuneSpec, budget: int, on_iter):
    z = np.clip(z0, _LOWER, _UPPER)
    best = prob(z)
    mesh = spec.mesh_init
    used = 0
    n = len(z)
    while mesh >= spec.mesh_tol and used < budget:
        improved = False
        for i in range(n):
            for sgn in (1.0, -1.0):
                cand = z.copy()
                cand[i] = np.clip(cand[i] + sgn * mesh, _LOWER[i], _UPPER[i])
                if cand[i] == z[i]:
                    continue
                r = prob(cand)
                used += 1
                if r[0] < best[0]:
                    z, best, improved = cand, r, True
                    break
                if used >= budget:
                    break
            if used >= budget:
                break
        if not improved:
            mesh *= 0.5
        on_iter(best)
    return z, best


def tune(init: ControllerParams, spec: TuneSpec, samples, weights: WeightSpec, actuation,
         nominal: PlantSample | None = None, m_r_model: float | None = None) -> TuneResult:
    """Multi-start coordinate pattern search on the penalized worst-case cost.

    The first start is ``init``; the others are a Latin hypercube over the
    gain, ``omega_n`` and a shared lowpass corner, each spread over a decade
    around ``init``, with ``init``'s damping ratios.
    The sign of the gain is kept from ``init``.  ``history`` holds the best
    objective found so far after every poll sweep, so it never increases.

    Raises
    ------
    SynthesisError
        If no start reaches a point meeting the hard requirements with a
        finite cost.
    """
    if not samples:
        raise ValueError("need at least one sample")
    nominal = nominal if nominal is not None else samples[0]
    ref = spec.reference_impulse
    if ref is None and spec.impulse_weight > 0:
        ref = reference_impulse(nominal, actuation, m_r_model)
    sign = -1.0 if init.V < 0 else 1.0
    prob = _Problem(sign, spec, samples, weights, actuation, nominal, m_r_model, ref)

    z_init = np.log([max(abs(init.V), 1e-6), init.zeta1, init.zeta2, init.omega_n, init.omega_1, init.omega_2])
    starts = [z_init]
    if spec.n_starts > 1:
        lhs = qmc.LatinHypercube(d=3, seed=np.random.default_rng(spec.seed)).random(spec.n_starts - 1)
        # omega_n and a shared lowpass corner, plus the gain, spread over a
        # decade around the initial values
        for row in lhs:
            z = z_init.copy()
            z[0] += math.log(10.0) * (row[0] - 0.5)
            z[3] += math.log(10.0) * (row[1] - 0.5)
            z[4] = z[5] = z_init[4] + math.log(10.0) * (row[2] - 0.5)
            starts.append(z)

    history = []
    incumbent = [None]

    def on_iter(r):
        if incumbent[0] is None or r[0] < incumbent[0][0]:
            incumbent[0] = r
        history.append((incumbent[0][0], incumbent[0][2]))

    results = []
    per_start = max(1, spec.max_evals // len(starts))
    for k, z0 in enumerate(starts):
        z, r = _pattern_search(prob, z0, spec, per_start, on_iter)
        results.append((r[0], tuple(z), r))
        log.info("start %d: objective %.5g feasible %s", k, r[0], r[2])

    results.sort(key=lambda t: (t[0], t[1]))
    obj, z, r = results[0]
    params = prob.params(np.array(z))
    result = TuneResult(params, r[1], obj, r[2], r[3], history, prob.evals)
    if not r[2]:
        raise SynthesisError("no start reached a feasible controller",
                             {"params": params.as_dict(), "violations": r[3], "objective": obj})
    return result
