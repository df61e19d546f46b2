"""Structured uncertainty set and its sampled realizations.

Real parameters (stiffness, rigid mass, dead time) are swept over box
vertices plus quasi-random interior points.  The two complex multiplicative
blocks on the drive and sensor channels are realized as first-order
factors ``1 + sgn*r*(a - s)/(a + s)``, whose distance from one is exactly
``r`` at every frequency, with ``sgn`` a random sign and ``a`` a random
crossover.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .lti import StateSpace, connect, gain, lowpass, summer, tf2ss
from .plant import PlantParams, ParameterError, build_plant

PADE_ORDER = 2


@dataclass(frozen=True)
class UncertaintySpec:
    k_rel: float = 0.2
    mr_rel: float = 0.2
    act_mult_radius: float = 0.1
    sens_mult_radius: float = 0.1
    delay_range: tuple = (0.01, 0.06)
    pade_order: int = PADE_ORDER
    # crossover band for the all-pass realizations of the complex blocks
    pert_corner_range: tuple = (1.0, 100.0)

    def __post_init__(self):
        object.__setattr__(self, "delay_range", tuple(float(t) for t in self.delay_range))
        object.__setattr__(self, "pert_corner_range", tuple(float(t) for t in self.pert_corner_range))
        for name in ("k_rel", "mr_rel", "act_mult_radius", "sens_mult_radius"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ParameterError(f"{name} must lie in [0, 1), got {v}")
        t0, t1 = self.delay_range
        if not 0.0 <= t0 <= t1:
            raise ParameterError(f"delay_range must satisfy 0 <= T_min <= T_max, got {self.delay_range}")
        if self.pade_order != PADE_ORDER:
            raise ParameterError("only second-order Pade delays are supported")
        lo, hi = self.pert_corner_range
        if not 0.0 < lo <= hi:
            raise ParameterError("pert_corner_range must be positive and ordered")

    def scaled(self, factor: float) -> "UncertaintySpec":
        """Uncertainty box grown (or shrunk) about its center."""
        t0, t1 = self.delay_range
        mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0) * factor
        return UncertaintySpec(
            k_rel=min(self.k_rel * factor, 0.95),
            mr_rel=min(self.mr_rel * factor, 0.95),
            act_mult_radius=min(self.act_mult_radius * factor, 0.95),
            sens_mult_radius=min(self.sens_mult_radius * factor, 0.95),
            delay_range=(max(mid - half, 0.0), mid + half),
            pert_corner_range=self.pert_corner_range,
        )

    def as_dict(self) -> dict:
        return dict(k_rel=self.k_rel, mr_rel=self.mr_rel,
                    act_mult_radius=self.act_mult_radius, sens_mult_radius=self.sens_mult_radius,
                    delay_range=list(self.delay_range), pade_order=self.pade_order,
                    pert_corner_range=list(self.pert_corner_range))


NOMINAL_SPEC = UncertaintySpec(0.0, 0.0, 0.0, 0.0, (0.035, 0.035))


@dataclass(frozen=True)
class Perturbation:
    """Multiplicative factor ``1 + gain*(corner - s)/(corner + s)``."""

    gain: float = 0.0
    corner: float = 1.0

    def system(self, inp: str, out: str) -> StateSpace:
        if self.gain == 0.0:
            return gain(1.0, inp, out)
        a, r = self.corner, self.gain
        # 1 + r*(-1 + 2a/(s+a))
        return StateSpace([[-a]], [[1.0]], [[2.0 * a * r]], [[1.0 - r]], (inp,), (out,))

    def response(self, omega):
        s = 1j * np.asarray(omega, dtype=float)
        return 1.0 + self.gain * (self.corner - s) / (self.corner + s)


@dataclass(frozen=True)
class PlantSample:
    params: PlantParams
    delay_T: float
    act_gain_pert: Perturbation = field(default_factory=Perturbation)
    sens_gain_pert: Perturbation = field(default_factory=Perturbation)
    seed_tag: int = 0
    is_vertex: bool = False


def nominal_sample(params: PlantParams, delay_T: float = 0.035) -> PlantSample:
    return PlantSample(params, delay_T, seed_tag=-1)


def pade2(T: float, inp: str = "u", out: str = "y") -> StateSpace:
    """Second-order Pade approximant of ``exp(-s T)``; a wire for ``T = 0``."""
    if not (T >= 0.0 and math.isfinite(T)):
        raise ParameterError(f"delay must be non-negative, got {T!r}")
    if T == 0.0:
        return gain(1.0, inp, out)
    return tf2ss([T * T / 12.0, -T / 2.0, 1.0], [T * T / 12.0, T / 2.0, 1.0], inp, out)


def sample(spec: UncertaintySpec, nominal: PlantParams, n: int, seed: int) -> list:
    """Vertices of the real box first, then Halton interior points.

    Deterministic in ``(spec, nominal, n, seed)``.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    k_lo, k_hi = nominal.k * (1 - spec.k_rel), nominal.k * (1 + spec.k_rel)
    m_lo, m_hi = nominal.m_r * (1 - spec.mr_rel), nominal.m_r * (1 + spec.mr_rel)
    t_lo, t_hi = spec.delay_range

    points = [(k, m, t, True) for k, m, t in itertools.product((k_lo, k_hi), (m_lo, m_hi), (t_lo, t_hi))]
    points = points[:n]
    n_int = n - len(points)
    if n_int > 0:
        u = qmc.Halton(d=3, scramble=True, seed=rng).random(n_int)
        for row in u:
            points.append((k_lo + row[0] * (k_hi - k_lo),
                           m_lo + row[1] * (m_hi - m_lo),
                           t_lo + row[2] * (t_hi - t_lo), False))

    lo, hi = spec.pert_corner_range
    out = []
    for i, (k, m_r, T, vertex) in enumerate(points):
        signs = rng.choice((-1.0, 1.0), size=2)
        corners = np.exp(rng.uniform(math.log(lo), math.log(hi), size=2))
        out.append(PlantSample(
            params=nominal.replace(k=float(k), m_r=float(m_r)),
            delay_T=float(T),
            act_gain_pert=Perturbation(float(signs[0] * spec.act_mult_radius), float(corners[0])),
            sens_gain_pert=Perturbation(float(signs[1] * spec.sens_mult_radius), float(corners[1])),
            seed_tag=int(seed) * 100003 + i,
            is_vertex=vertex,
        ))
    return out


# -- interconnection ---------------------------------------------------------

def _relative_plant(params: PlantParams) -> StateSpace:
    """build_plant in coordinates ``[delta, x_h, delta_dot, xd_h]``."""
    P = build_plant(params)
    T = np.array([[1.0, -1.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, -1.0],
                  [0.0, 0.0, 0.0, 1.0]])
    Ti = np.linalg.inv(T)
    A = T @ P.A @ Ti
    A[np.abs(A) < 1e-15 * max(1.0, np.abs(A).max())] = 0.0
    C = P.C @ Ti
    C[np.abs(C) < 1e-15 * max(1.0, np.abs(C).max())] = 0.0
    return StateSpace(A, T @ P.B, C, P.D, P.input_labels, P.output_labels)


def plant_chain(samp: PlantSample, actuation) -> StateSpace:
    """Full rig model: drive lowpass and perturbation, stiff drive force,
    design plant, load cell, sensor lowpass, dead time and perturbation.

    Inputs ``[xdd_cmd, F_d, n]``; outputs include the measured force ``F_s``,
    the true load-cell force ``F_s_true``, tank motion and slosh signals.
    """
    p = samp.params
    blocks = [
        lowpass(actuation.lowpass_corner, "xdd_cmd", "a_lp"),
        samp.act_gain_pert.system("a_lp", "a_h"),
        # position-controlled drive: force is whatever keeps the tank on the
        # commanded acceleration against the slosh reaction
        summer(["a_h_scaled", "F_sp"], "F_h", [1.0, -1.0]),
        gain(p.m_r, "a_h", "a_h_scaled"),
        _relative_plant(p),
        summer(["F_sp", "xdd_h_scaled"], "F_s_true"),
        gain(p.m_r, "xdd_h", "xdd_h_scaled"),
        lowpass(actuation.sensor_corner, "F_s_true", "F_lp"),
        pade2(samp.delay_T, "F_lp", "F_del"),
        samp.sens_gain_pert.system("F_del", "F_clean"),
        summer(["F_clean", "n"], "F_s"),
        gain(1.0, "xdd_cmd", "xdd_cmd_out"),
    ]
    return connect(
        blocks,
        inputs=["xdd_cmd", "F_d", "n"],
        outputs=["F_s", "delta_dot", "xdd_cmd_out", "F_s_true", "F_sp", "delta",
                 "x_h", "xd_h", "xdd_h"],
    )


def assemble_loop(samp: PlantSample, actuation) -> StateSpace:
    """Open-loop rig ``[xdd_cmd, F_d, n] -> [F_s, delta_dot, xdd_cmd_out]``.

    The tank position and velocity are pure integrators of the commanded
    acceleration that no output depends on; they are removed exactly.
    """
    full = plant_chain(samp, actuation).select(outputs=["F_s", "delta_dot", "xdd_cmd_out"])
    n = full.nstates
    # plant states sit after the drive lowpass and actuator perturbation
    off = (0 if math.isinf(actuation.lowpass_corner) else 1) + (0 if samp.act_gain_pert.gain == 0.0 else 1)
    rigid = [off + 1, off + 3]
    keep = [i for i in range(n) if i not in rigid]
    return full.truncate_states(keep)
