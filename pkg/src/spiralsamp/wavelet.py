"""2-D Haar system on ``[-1/2, 1/2]^2``: analysis, synthesis, N-term
thresholding, scale projection and the discrete total variation.

Basis functions are ``h^e_{j,k}(x) = 2^j h^{e1}(2^j(x1+1/2) - k1) h^{e2}(2^j(x2+1/2) - k2)``
with ``h^0 = 1_[0,1)`` and ``h^1 = 1_[0,1/2) - 1_[1/2,1)``.  Grid functions are
read as piecewise constant on their cells, so analysis is exact for them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ParameterDomainError, ResolutionError
from .fourier import GridFunction

__all__ = [
    "HaarCoefficients",
    "TYPES",
    "haar_analyze",
    "haar_synthesize",
    "haar_function",
    "nterm_threshold",
    "project_scales",
    "discrete_variation",
    "haar_transform",
    "write_coefficients_csv",
    "read_coefficients_csv",
]

TYPES = ((0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class HaarCoefficients:
    """Sparse map ``(j, (k1, k2), (e1, e2)) -> coefficient`` plus the mean."""

    entries: dict = field(default_factory=dict)
    mean: complex = 0.0
    J_max: int = -1

    def __post_init__(self):
        jm = -1
        for (j, k, e) in self.entries:
            if j < 0 or e not in TYPES or not all(0 <= kk < (1 << j) for kk in k):
                raise ParameterDomainError("invalid Haar index", index=(j, k, e))
            jm = max(jm, j)
        if self.J_max < jm:
            object.__setattr__(self, "J_max", jm)

    def __len__(self):
        return len(self.entries)

    def energy(self) -> float:
        v = np.fromiter((abs(c) ** 2 for c in self.entries.values()), float, len(self.entries))
        return float(v.sum() + abs(self.mean) ** 2)

    def nonzero(self) -> int:
        return sum(1 for c in self.entries.values() if c != 0)

    def scales(self) -> set:
        return {j for (j, _, _), c in self.entries.items() if c != 0}

    def level(self, j: int) -> np.ndarray:
        """Dense ``(3, 2^j, 2^j)`` array of scale-``j`` coefficients (types in ``TYPES`` order)."""
        out = np.zeros((3, 1 << j, 1 << j), complex)
        for (jj, k, e), c in self.entries.items():
            if jj == j:
                out[TYPES.index(e), k[0], k[1]] = c
        return out

    @classmethod
    def from_levels(cls, levels: list, mean: complex, drop_zeros: bool = True) -> "HaarCoefficients":
        ent = {}
        for j, arr in enumerate(levels):
            for t, e in enumerate(TYPES):
                a = arr[t]
                idx = np.argwhere(a != 0) if drop_zeros else np.argwhere(np.ones_like(a, bool))
                for k1, k2 in idx:
                    ent[(j, (int(k1), int(k2)), e)] = complex(a[k1, k2])
        return cls(ent, complex(mean), len(levels) - 1)


def _check_dyadic(n: int) -> int:
    m = int(round(math.log2(n))) if n > 0 else -1
    if m < 1 or (1 << m) != n:
        raise AlignmentError("grid size must be a power of two", n=n)
    return m


def _split(a):
    # children (2k1+p, 2k2+q) of every parent cell
    return a[0::2, 0::2], a[0::2, 1::2], a[1::2, 0::2], a[1::2, 1::2]


def haar_analyze(f: GridFunction, J: int | None = None) -> HaarCoefficients:
    """Haar coefficients of the piecewise-constant ``f`` for scales ``0..J``.

    Finer detail is discarded: synthesising the result reproduces the
    averages of ``f`` over dyadic cells of side ``2^-(J+1)``.
    """
    if abs(f.half_side - 0.5) > 1e-15:
        raise AlignmentError("Haar analysis needs the square [-1/2, 1/2]^2", half_side=f.half_side)
    m = _check_dyadic(f.n)
    J = m - 1 if J is None else int(J)
    if J < 0:
        raise ParameterDomainError("J must be >= 0", J=J)
    if m < J + 1:
        raise AlignmentError("grid too coarse for the requested scale", n=f.n, J=J)
    # scaling coefficients 2^j * ∫_cell f at the finest level
    a = f.values / (1 << m)
    levels = [None] * m
    for j in range(m - 1, -1, -1):
        a00, a01, a10, a11 = _split(a)
        d = np.empty((3,) + a00.shape, complex)
        d[0] = 0.5 * (a00 - a01 + a10 - a11)  # e = (0, 1)
        d[1] = 0.5 * (a00 + a01 - a10 - a11)  # e = (1, 0)
        d[2] = 0.5 * (a00 - a01 - a10 + a11)  # e = (1, 1)
        levels[j] = d
        a = 0.5 * (a00 + a01 + a10 + a11)
    return HaarCoefficients.from_levels(levels[: J + 1], a[0, 0])


def haar_synthesize(c: HaarCoefficients, n: int) -> GridFunction:
    """Grid samples of ``mean + sum c h`` on an ``n x n`` grid."""
    m = _check_dyadic(int(n))
    if c.J_max + 1 > m:
        raise ResolutionError("grid too coarse for the finest scale present", n=n, required_n=1 << (c.J_max + 1))
    a = np.full((1, 1), c.mean, complex)
    for j in range(m):
        d = c.level(j) if j <= c.J_max else np.zeros((3, 1 << j, 1 << j), complex)
        nxt = np.empty((2 << j, 2 << j), complex)
        nxt[0::2, 0::2] = 0.5 * (a + d[0] + d[1] + d[2])
        nxt[0::2, 1::2] = 0.5 * (a - d[0] + d[1] - d[2])
        nxt[1::2, 0::2] = 0.5 * (a + d[0] - d[1] - d[2])
        nxt[1::2, 1::2] = 0.5 * (a - d[0] - d[1] + d[2])
        a = nxt
    return GridFunction(a * (1 << m), 0.5)


def haar_function(j: int, k, e, n: int) -> GridFunction:
    """``h^e_{j,k}`` sampled on an ``n x n`` grid (exact when ``n >= 2^(j+1)``)."""
    c = HaarCoefficients({(int(j), tuple(int(v) for v in k), tuple(e)): 1.0})
    return haar_synthesize(c, n)


def _order_key(item):
    (j, k, e), c = item
    return (-abs(c), j, k, e)


def nterm_threshold(c: HaarCoefficients, N: int) -> HaarCoefficients:
    """Best ``N``-term approximation: the ``N`` largest coefficients.

    Ties go to coarser scales, then to lexicographically smaller ``(k, e)``.
    The mean is kept and not counted.
    """
    N = int(N)
    if N < 1:
        raise ParameterDomainError("N must be >= 1", N=N)
    if len(c.entries) <= N:
        return c
    keep = sorted(c.entries.items(), key=_order_key)[:N]
    return HaarCoefficients(dict(keep), c.mean, c.J_max)


def project_scales(c: HaarCoefficients, J: int) -> HaarCoefficients:
    """Orthogonal projection onto scales ``0..J`` (mean kept)."""
    J = int(J)
    if J < 0:
        raise ParameterDomainError("J must be >= 0", J=J)
    if c.J_max <= J:
        return c
    ent = {key: v for key, v in c.entries.items() if key[0] <= J}
    return HaarCoefficients(ent, c.mean, min(c.J_max, J))


def _axis_factor(xi, j, k, e):
    # transform of the 1-D factor of h^e_{j,k} (without the 2^j)
    ell = 2.0 ** -j
    a = -0.5 + k * ell
    if e == 0:
        return ell * np.sinc(ell * xi) * np.exp(-2j * math.pi * xi * (a + 0.5 * ell))
    ph = np.exp(-2j * math.pi * xi * (a + 0.25 * ell)) - np.exp(-2j * math.pi * xi * (a + 0.75 * ell))
    return 0.5 * ell * np.sinc(0.5 * ell * xi) * ph


def haar_transform(c: HaarCoefficients, points, chunk: int = 2048) -> np.ndarray:
    """Fourier transform of ``mean + sum c h`` at ``points``, term by term.

    Cost is ``len(points) * len(c)``, independent of the finest scale.
    """
    P = np.atleast_2d(np.asarray(points, float))
    keys = [key for key, v in c.entries.items() if v != 0]
    coef = np.array([c.entries[key] for key in keys], complex)
    ax1 = sorted({(j, k[0], e[0]) for j, k, e in keys})
    ax2 = sorted({(j, k[1], e[1]) for j, k, e in keys})
    i1 = {t: n for n, t in enumerate(ax1)}
    i2 = {t: n for n, t in enumerate(ax2)}
    u = np.array([i1[(j, k[0], e[0])] for j, k, e in keys], int)
    v = np.array([i2[(j, k[1], e[1])] for j, k, e in keys], int)
    scale = np.array([2.0**j for j, _, _ in keys])
    out = np.empty(len(P), complex)
    for s in range(0, len(P), chunk):
        x1 = P[s : s + chunk, 0]
        x2 = P[s : s + chunk, 1]
        acc = c.mean * np.sinc(x1) * np.sinc(x2)
        if keys:
            F1 = np.stack([_axis_factor(x1, *t) for t in ax1], axis=1)
            F2 = np.stack([_axis_factor(x2, *t) for t in ax2], axis=1)
            acc = acc + (F1[:, u] * F2[:, v]) @ (coef * scale)
        out[s : s + chunk] = acc
    return out


def discrete_variation(f: GridFunction) -> float:
    """Isotropic discrete total variation ``sum h |grad f|``.

    Forward differences; differences that would leave the grid are zero.
    """
    v = f.values
    d1 = np.zeros(v.shape, complex)
    d2 = np.zeros(v.shape, complex)
    d1[:-1, :] = v[1:, :] - v[:-1, :]
    d2[:, :-1] = v[:, 1:] - v[:, :-1]
    return float(f.mesh * np.sum(np.sqrt(np.abs(d1) ** 2 + np.abs(d2) ** 2)))


def write_coefficients_csv(c: HaarCoefficients, path) -> None:
    """CSV ``j,k1,k2,e1,e2,re,im`` sorted by index; the mean is the row ``j = -1``."""
    rows = sorted((j, k[0], k[1], e[0], e[1], v) for (j, k, e), v in c.entries.items())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "k1", "k2", "e1", "e2", "re", "im"])
        w.writerow([-1, 0, 0, 0, 0, f"{c.mean.real:.17g}", f"{c.mean.imag:.17g}"])
        for j, k1, k2, e1, e2, v in rows:
            w.writerow([j, k1, k2, e1, e2, f"{v.real:.17g}", f"{v.imag:.17g}"])


def read_coefficients_csv(path) -> HaarCoefficients:
    ent = {}
    mean = 0.0
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            j = int(row["j"])
            v = complex(float(row["re"]), float(row["im"]))
            if j < 0:
                mean = v
                continue
            ent[(j, (int(row["k1"]), int(row["k2"])), (int(row["e1"]), int(row["e2"])))] = v
    return HaarCoefficients(ent, mean)
