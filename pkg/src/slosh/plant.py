"""Linear slosh design model: a point mass on a spring/damper inside a
driven rigid container.

State ``[x_s, x_h, xd_s, xd_h]``, inputs ``[F_d, F_h]``, outputs
``[F_sp, delta, delta_dot, x_h, xd_h, xdd_h]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lti import StateSpace

STATE_LABELS = ("x_s", "x_h", "xd_s", "xd_h")
INPUT_LABELS = ("F_d", "F_h")
OUTPUT_LABELS = ("F_sp", "delta", "delta_dot", "x_h", "xd_h", "xdd_h")

# Undamped-ish: the slosh mode must be lightly damped for this model to apply.
MAX_DAMPING_RATIO = 0.05


class ParameterError(ValueError):
    pass


class PlantOutputs:
    """Row indices of the six plant outputs."""

    F_SP = 0
    DELTA = 1
    DELTA_DOT = 2
    X_H = 3
    XD_H = 4
    XDD_H = 5


@dataclass(frozen=True)
class PlantParams:
    """Physical parameters, SI units.

    m_s is the sloshing mass, m_r the rigid mass (container, moving drive
    parts and non-sloshing fluid), k and c the spring and damper.
    """

    m_s: float = 250.0
    m_r: float = 750.0
    k: float = 4840.0
    c: float = 4.4

    def __post_init__(self):
        for name in ("m_s", "m_r", "k"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive and finite, got {v!r}")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ParameterError(f"c must be non-negative, got {self.c!r}")
        if self.damping_ratio >= MAX_DAMPING_RATIO:
            raise ParameterError(
                f"damping ratio {self.damping_ratio:.3g} >= {MAX_DAMPING_RATIO}; model assumes a lightly damped slosh mode"
            )

    @property
    def damping_ratio(self) -> float:
        return self.c / (2.0 * math.sqrt(self.k * self.m_s))

    @property
    def omega_o(self) -> float:
        return slosh_frequency(self)

    def replace(self, **kw) -> "PlantParams":
        d = dict(m_s=self.m_s, m_r=self.m_r, k=self.k, c=self.c)
        d.update(kw)
        return PlantParams(**d)

    def as_dict(self) -> dict:
        return dict(m_s=self.m_s, m_r=self.m_r, k=self.k, c=self.c)


DEFAULT_PARAMS = PlantParams()


def slosh_frequency(params: PlantParams) -> float:
    """First slosh mode of a tank held fixed, ``sqrt(k/m_s)`` in rad/s."""
    return math.sqrt(params.k / params.m_s)


def build_plant(params: PlantParams) -> StateSpace:
    """Four-state design model with force inputs ``F_d`` and ``F_h``.

    The sixth output row uses the rigid mass m_r as denominator.
    """
    if not isinstance(params, PlantParams):
        raise ParameterError("build_plant expects PlantParams")
    m_s, m_r, k, c = params.m_s, params.m_r, params.k, params.c
    A = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-k / m_s, k / m_s, -c / m_s, c / m_s],
        [k / m_r, -k / m_r, c / m_r, -c / m_r],
    ])
    B = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [1.0 / m_s, 0.0],
        [0.0, 1.0 / m_r],
    ])
    C = np.array([
        [k, -k, c, -c],
        [1.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, -1.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [k / m_r, -k / m_r, c / m_r, -c / m_r],
    ])
    D = np.zeros((6, 2))
    # F_h -> xdd_h feedthrough.  The printed matrix shows 1 here, which is
    # only consistent with the dynamics row (1/m_r) for unit mass.
    D[5, 1] = 1.0 / m_r
    return StateSpace(A, B, C, D, INPUT_LABELS, OUTPUT_LABELS)


def sensor_force(F_sp, xdd_h, params: PlantParams):
    """Load-cell reading: spring reaction plus rigid-body inertia."""
    return F_sp + params.m_r * xdd_h


def mechanical_energy(x, params: PlantParams):
    """Total energy of the free plant; ``x`` may be (4,) or (N, 4)."""
    x = np.asarray(x, dtype=float)
    xs, xh, vs, vh = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    return 0.5 * params.m_s * vs**2 + 0.5 * params.m_r * vh**2 + 0.5 * params.k * (xs - xh) ** 2
