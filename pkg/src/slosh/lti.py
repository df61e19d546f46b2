"""Minimal continuous-time LTI state-space toolkit.

Only what the rest of the package needs: an immutable ``StateSpace``
container, a few elementary blocks and a label-based interconnection
routine in the spirit of Simulink signal names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InterconnectionError(ValueError):
    """Raised for dimension mismatches or ill-posed algebraic loops."""


def _as_matrix(M, rows=None, cols=None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        M = np.zeros((rows or 0, cols or 0))
    return M


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Real LTI system ``x' = A x + B u``, ``y = C x + D u``.

    Signal labels are carried along so systems can be wired by name.
    Matrices are copied and made read-only on construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple = field(default=())
    output_labels: tuple = field(default=())

    def __post_init__(self):
        D = _as_matrix(self.D)
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n) if n else np.zeros((0, 0))
        B = np.asarray(self.B, dtype=float).reshape(n, m) if n else np.zeros((0, m))
        C = np.asarray(self.C, dtype=float).reshape(p, n) if n else np.zeros((p, 0))
        ins = tuple(self.input_labels) or tuple(f"u{i}" for i in range(m))
        outs = tuple(self.output_labels) or tuple(f"y{i}" for i in range(p))
        if len(ins) != m or len(outs) != p:
            raise InterconnectionError(
                f"label count mismatch: {len(ins)} inputs for m={m}, {len(outs)} outputs for p={p}"
            )
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            val = np.array(val, dtype=float)
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "input_labels", ins)
        object.__setattr__(self, "output_labels", outs)

    @property
    def nstates(self) -> int:
        return self.A.shape[0]

    @property
    def ninputs(self) -> int:
        return self.D.shape[1]

    @property
    def noutputs(self) -> int:
        return self.D.shape[0]

    def poles(self) -> np.ndarray:
        if self.nstates == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.A)

    def relabel(self, inputs=None, outputs=None) -> "StateSpace":
        return StateSpace(
            self.A, self.B, self.C, self.D,
            tuple(inputs) if inputs is not None else self.input_labels,
            tuple(outputs) if outputs is not None else self.output_labels,
        )

    def select(self, inputs=None, outputs=None) -> "StateSpace":
        """Sub-system restricted to the named (or indexed) channels."""
        iu = _indices(self.input_labels, inputs)
        iy = _indices(self.output_labels, outputs)
        return StateSpace(
            self.A,
            self.B[:, iu],
            self.C[iy, :],
            self.D[np.ix_(iy, iu)],
            tuple(self.input_labels[i] for i in iu),
            tuple(self.output_labels[i] for i in iy),
        )

    def scale_output(self, alpha: float) -> "StateSpace":
        return StateSpace(self.A, self.B, alpha * self.C, alpha * self.D,
                          self.input_labels, self.output_labels)

    def truncate_states(self, keep: Sequence[int]) -> "StateSpace":
        """Drop states that neither drive the kept states nor any output.

        Only exact when the dropped states are unobservable from the kept
        ones; this is checked.
        """
        keep = np.asarray(keep, dtype=int)
        drop = np.setdiff1d(np.arange(self.nstates), keep)
        if drop.size:
            if np.any(self.A[np.ix_(keep, drop)] != 0.0) or np.any(self.C[:, drop] != 0.0):
                raise InterconnectionError("dropped states are observable; truncation not exact")
        return StateSpace(
            self.A[np.ix_(keep, keep)], self.B[keep, :], self.C[:, keep], self.D,
            self.input_labels, self.output_labels,
        )

    def __repr__(self):
        return (f"StateSpace(n={self.nstates}, inputs={list(self.input_labels)}, "
                f"outputs={list(self.output_labels)})")


def _indices(labels, which) -> list:
    if which is None:
        return list(range(len(labels)))
    out = []
    for w in which:
        if isinstance(w, (int, np.integer)):
            out.append(int(w))
        else:
            try:
                out.append(labels.index(w))
            except ValueError:
                raise InterconnectionError(f"unknown signal {w!r}; have {list(labels)}") from None
    return out


# -- elementary blocks ------------------------------------------------------

def gain(k, inp="u", out="y") -> StateSpace:
    return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[float(k)]], (inp,), (out,))


def summer(inputs: Sequence[str], out: str, signs: Sequence[float] | None = None) -> StateSpace:
    signs = signs if signs is not None else [1.0] * len(inputs)
    m = len(inputs)
    return StateSpace(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((1, 0)),
                      [list(map(float, signs))], tuple(inputs), (out,))


def lowpass(corner: float, inp="u", out="y") -> StateSpace:
    """Unity-DC first-order lag ``w/(s+w)``; an infinite corner is a wire."""
    if math.isinf(corner):
        return gain(1.0, inp, out)
    if corner <= 0:
        raise ValueError("lowpass corner must be positive")
    return StateSpace([[-corner]], [[corner]], [[1.0]], [[0.0]], (inp,), (out,))


def tf2ss(num, den, inp="u", out="y") -> StateSpace:
    """Controllable canonical realization of a proper SISO transfer function."""
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    den = np.trim_zeros(den, "f")
    if den.size == 0:
        raise ValueError("zero denominator")
    n = den.size - 1
    if num.size > den.size:
        raise ValueError("improper transfer function")
    num = np.concatenate([np.zeros(den.size - num.size), num]) / den[0]
    den = den / den[0]
    if n == 0:
        return gain(num[0], inp, out)
    d = num[0]
    rem = num[1:] - d * den[1:]
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = rem.reshape(1, n)
    return StateSpace(A, B, C, [[d]], (inp,), (out,))


def append(*systems: StateSpace) -> StateSpace:
    """Block-diagonal stacking; labels are concatenated."""
    n = sum(s.nstates for s in systems)
    m = sum(s.ninputs for s in systems)
    p = sum(s.noutputs for s in systems)
    A = np.zeros((n, n)); B = np.zeros((n, m)); C = np.zeros((p, n)); D = np.zeros((p, m))
    i = j = k = 0
    for s in systems:
        A[i:i + s.nstates, i:i + s.nstates] = s.A
        B[i:i + s.nstates, j:j + s.ninputs] = s.B
        C[k:k + s.noutputs, i:i + s.nstates] = s.C
        D[k:k + s.noutputs, j:j + s.ninputs] = s.D
        i += s.nstates; j += s.ninputs; k += s.noutputs
    ins = sum((s.input_labels for s in systems), ())
    outs = sum((s.output_labels for s in systems), ())
    return StateSpace(A, B, C, D, ins, outs)


def connect(systems: Sequence[StateSpace], inputs: Sequence[str], outputs: Sequence[str]) -> StateSpace:
    """Wire systems together by signal name.

    Every block input whose label equals some block output label is fed by
    that output; the remaining block inputs must appear in ``inputs``.
    Output labels must be unique across blocks.  Algebraic loops are
    resolved exactly and raise ``InterconnectionError`` when ill-posed.
    """
    big = append(*systems)
    outs = big.output_labels
    if len(set(outs)) != len(outs):
        dup = sorted({o for o in outs if outs.count(o) > 1})
        raise InterconnectionError(f"duplicate output labels {dup}")
    out_index = {o: i for i, o in enumerate(outs)}
    m_int = big.ninputs
    M = np.zeros((m_int, len(outs)))
    E = np.zeros((m_int, len(inputs)))
    ext_index = {w: i for i, w in enumerate(inputs)}
    for i, lab in enumerate(big.input_labels):
        if lab in out_index:
            M[i, out_index[lab]] = 1.0
        elif lab in ext_index:
            E[i, ext_index[lab]] = 1.0
        else:
            raise InterconnectionError(f"block input {lab!r} is neither wired nor external")
    for w in inputs:
        if w in out_index:
            raise InterconnectionError(f"external input {w!r} collides with an internal output")
    A, B, C, D = big.A, big.B, big.C, big.D
    L = np.eye(len(outs)) - D @ M
    if np.linalg.cond(L) > 1e12:
        raise InterconnectionError("ill-posed algebraic loop")
    Linv = np.linalg.inv(L)
    Cy = Linv @ C            # y = Cy x + Dy w
    Dy = Linv @ D @ E
    Acl = A + B @ M @ Cy
    Bcl = B @ (E + M @ Dy)
    sel = _indices(outs, outputs)
    return StateSpace(Acl, Bcl, Cy[sel, :], Dy[sel, :], tuple(inputs), tuple(outs[i] for i in sel))


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """``second`` driven by ``first`` (positional, labels of the ends kept)."""
    if first.noutputs != second.ninputs:
        raise InterconnectionError("series: dimension mismatch")
    A = np.block([[first.A, np.zeros((first.nstates, second.nstates))],
                  [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D, first.input_labels, second.output_labels)
