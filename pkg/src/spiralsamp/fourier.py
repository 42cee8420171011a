"""Grid functions on a centred square and their Fourier transforms.

Transforms use the convention ``F(xi) = ∫ f(x) exp(-2 pi i xi.x) dx`` and
are evaluated by the midpoint rule on the grid.  The module also builds the
sub-exponentially decaying bump ``phi`` whose spectrum lives in the diamond
``|xi1| + |xi2| <= 1``, and measures Bessel ratios along trajectories.
"""
from __future__ import annotations

import functools
import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import AccuracyWarning, PaddingError, ParameterDomainError, UndefinedRatioError
from .trajectory import ParametricTrajectory, QuadratureSet, arc_quadrature

__all__ = [
    "GridFunction",
    "FourierSamples",
    "BumpSpec",
    "Bump",
    "nudft",
    "cell_transform",
    "nudft_direct",
    "sampled_norm",
    "synth_bump_phi",
    "bessel_ratio",
    "bessel_constant",
    "random_bandlimited",
    "frequency_cap",
]

MAGIC = b"MSLB1"


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples at the cell midpoints of an ``n x n`` mesh.

    ``values[i, j]`` sits at ``(x_i, x_j)`` with
    ``x_i = -half_side + (i + 1/2) * h``; axis 0 runs along ``x1``.
    """

    values: np.ndarray
    half_side: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ParameterDomainError("grid values must be a square 2-D array", shape=v.shape)
        if not self.half_side > 0:
            raise ParameterDomainError("half_side must be positive")
        object.__setattr__(self, "values", v.astype(complex, copy=False))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def mesh(self) -> float:
        return 2.0 * self.half_side / self.n

    def axis(self) -> np.ndarray:
        h = self.mesh
        return -self.half_side + (np.arange(self.n) + 0.5) * h

    def coords(self):
        x = self.axis()
        return np.meshgrid(x, x, indexing="ij")

    def norm2(self) -> float:
        return float(self.mesh * np.sqrt(np.sum(np.abs(self.values) ** 2)))

    def norm1(self) -> float:
        return float(self.mesh**2 * np.sum(np.abs(self.values)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def scaled(self, c) -> "GridFunction":
        return GridFunction(self.values * c, self.half_side)

    @classmethod
    def from_callable(cls, fun, n: int, half_side: float = 0.5) -> "GridFunction":
        g = cls(np.zeros((n, n), complex), half_side)
        X1, X2 = g.coords()
        return cls(np.asarray(fun(X1, X2), complex) * np.ones_like(X1), half_side)

    # -- serialisation ------------------------------------------------------
    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<qd", self.n, float(self.half_side))
        body = np.ascontiguousarray(self.values, dtype="<c16").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridFunction":
        if data[:5] != MAGIC:
            raise ParameterDomainError("not a grid-function container (bad magic)")
        n, half = struct.unpack("<qd", data[5:21])
        vals = np.frombuffer(data[21:], dtype="<c16")
        if vals.size != n * n:
            raise ParameterDomainError("truncated grid-function container")
        return cls(vals.reshape(n, n).astype(complex), half)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridFunction":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        X1, X2 = self.coords()
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("x,y,re,im\n")
            for x, y, v in zip(X1.ravel(), X2.ravel(), self.values.ravel()):
                fh.write(f"{x:.17g},{y:.17g},{v.real:.17g},{v.imag:.17g}\n")


class FourierSamples(np.ndarray):
    """Complex transform values; ``.warnings`` lists accuracy flags."""

    def __new__(cls, values, warnings_=()):
        obj = np.asarray(values, dtype=complex).view(cls)
        obj.warnings = list(warnings_)
        return obj

    def __array_finalize__(self, obj):
        self.warnings = getattr(obj, "warnings", [])


def frequency_cap(f: GridFunction) -> float:
    """Largest ``|xi|`` at which the midpoint transform is trusted."""
    return f.n / (4.0 * f.half_side)


def _phase_matrix(xi_col, axis):
    return np.exp(-2j * math.pi * np.outer(xi_col, axis))


def _midpoint_sum(f: GridFunction, P: np.ndarray, chunk: int) -> np.ndarray:
    x = f.axis()
    V = f.values
    out = np.empty(len(P), complex)
    for s in range(0, len(P), chunk):
        p = P[s : s + chunk]
        E1 = _phase_matrix(p[:, 0], x)
        E2 = _phase_matrix(p[:, 1], x)
        A = E2 @ V.T  # A[m, i] = sum_j V[i, j] E2[m, j]
        out[s : s + chunk] = np.einsum("mi,mi->m", E1, A)
    return f.mesh**2 * out


def _as_points(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size and (P.shape[-1] != 2 or not np.all(np.isfinite(P))):
        raise ParameterDomainError("frequencies must be finite 2-D points")
    return P


def nudft(f: GridFunction, points, chunk: int = 4096) -> FourierSamples:
    """Midpoint-rule transform ``h^2 sum f(x_p) exp(-2 pi i xi.x_p)`` at ``points``.

    The sum is separable, so each chunk of frequencies costs two small
    matrix products.  Frequencies beyond the cap are flagged, not refused.
    """
    P = _as_points(points)
    if P.size == 0:
        return FourierSamples(np.zeros(0, complex))
    out = _midpoint_sum(f, P, chunk)
    flags = []
    cap = frequency_cap(f)
    rmax = float(np.max(np.hypot(P[:, 0], P[:, 1])))
    if rmax > cap * (1 + 1e-12):
        msg = f"frequency {rmax:.6g} beyond the midpoint-rule cap {cap:.6g}"
        flags.append(msg)
        warnings.warn(msg, AccuracyWarning, stacklevel=2)
    return FourierSamples(out, flags)


def cell_transform(f: GridFunction, points, chunk: int = 4096) -> np.ndarray:
    """Exact transform of ``f`` read as constant on each grid cell.

    Equal to the midpoint sum times the transform of one cell, so there is
    no frequency cap.
    """
    P = _as_points(points)
    if P.size == 0:
        return np.zeros(0, complex)
    h = f.mesh
    return _midpoint_sum(f, P, chunk) * np.sinc(P[:, 0] * h) * np.sinc(P[:, 1] * h)


def nudft_direct(f: GridFunction, points) -> np.ndarray:
    """Brute-force double sum over the nonzero grid values (oracle)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    X1, X2 = f.coords()
    nz = f.values != 0
    xs, ys, vs = X1[nz], X2[nz], f.values[nz]
    out = np.zeros(len(P), complex)
    for m, (a, b) in enumerate(P):
        out[m] = np.sum(vs * np.exp(-2j * math.pi * (a * xs + b * ys)))
    return f.mesh**2 * out


def sampled_norm(f: GridFunction, q: QuadratureSet) -> float:
    """``sqrt(sum w_i |F(p_i)|^2)``: the arc-measure L2 norm of the transform."""
    if len(q) == 0:
        return 0.0
    F = nudft(f, q.points)
    return float(np.sqrt(np.sum(q.weights * np.abs(F) ** 2)))


def plancherel_defect(f: GridFunction, pad: int = 2) -> float:
    """Relative gap between ``||f||_2`` and the FFT-based transform norm."""
    n = f.n * pad
    F = np.fft.fft2(f.values, s=(n, n)) * f.mesh**2
    dxi = 1.0 / (n * f.mesh)
    lhs = f.norm2()
    rhs = float(np.sqrt(np.sum(np.abs(F) ** 2)) * dxi)
    return abs(lhs - rhs) / max(lhs, 1e-300)


# --------------------------------------------------------------------------
# bump synthesis
# --------------------------------------------------------------------------


def _profile(t):
    """Gevrey bump exp(-1/(1-t^2)) on (-1, 1)."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


@functools.lru_cache(maxsize=4)
def _profile_transform_table(ds: float, smax: float, nodes: int):
    """Table of ``B(s) = ∫ b(t) cos(2 pi t s) dt`` on ``[0, smax]``.

    The integrand vanishes to all orders at ``t = ±1``, so the trapezoidal
    rule on ``nodes`` points is exact to rounding for ``s << nodes/4``.  With
    ``t_m = -1 + 2m/nodes`` and ``s_j = j*ds`` the sum is one FFT.
    """
    L = int(round(nodes / (2.0 * ds)))
    t = -1.0 + 2.0 * np.arange(nodes) / nodes
    w = np.zeros(L)
    w[:nodes] = (2.0 / nodes) * _profile(t)
    nj = int(math.floor(smax / ds)) + 1
    j = np.arange(nj)
    S = np.fft.ifft(w)[:nj] * L
    s = j * ds
    return s, (np.exp(-2j * math.pi * s) * S).real


def _trapezoid_profile_integral(power: int, nodes: int = 8192) -> float:
    t = -1.0 + 2.0 * np.arange(nodes) / nodes
    return float(np.sum(_profile(t) ** power) * 2.0 / nodes)


@functools.lru_cache(maxsize=1)
def _profile_l2sq() -> float:
    return _trapezoid_profile_integral(2)


@dataclass(frozen=True)
class BumpSpec:
    """Synthesis parameters for the bump.

    ``gauge='tensor'`` uses ``b(xi1+xi2) b(xi1-xi2)``, a smooth bump whose
    support is the diamond.  ``gauge='l1'`` uses ``b(|xi1|+|xi2|)`` literally;
    its spectrum has creases along the axes, so ``phi`` then decays only
    algebraically along them.
    """

    c1_estimate: float | None = None
    decay_exponent: float = 0.5
    fft_size: int = 2048
    pad_factor: int = 8
    gauge: str = "tensor"


@dataclass(frozen=True, eq=False)
class Bump:
    """Synthesised bump: grid samples, fitted decay constant, evaluators."""

    spec: BumpSpec
    grid: GridFunction
    scale: float  # phi_hat = scale * profile(...)
    c1: float
    tail_mass: float = 0.0

    def phi_hat(self, xi1, xi2) -> np.ndarray:
        xi1 = np.asarray(xi1, float)
        xi2 = np.asarray(xi2, float)
        if self.spec.gauge == "tensor":
            return self.scale * _profile(xi1 + xi2) * _profile(xi1 - xi2)
        return self.scale * _profile(np.abs(xi1) + np.abs(xi2))

    def phi(self, x1, x2) -> np.ndarray:
        """``phi`` at arbitrary points (real-valued, even)."""
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        if self.spec.gauge == "tensor":
            B = _profile_spline()
            return 0.5 * self.scale * B(0.5 * (x1 + x2)) * B(0.5 * (x1 - x2))
        return self._grid_spline()(x1, x2)

    @functools.cached_property
    def _spline2d(self):
        x = self.grid.axis()
        return RectBivariateSpline(x, x, self.grid.values.real, kx=3, ky=3)

    def _grid_spline(self):
        sp = self._spline2d
        lim = self.grid.half_side

        def ev(x1, x2):
            out = np.zeros(np.broadcast(x1, x2).shape)
            x1b, x2b = np.broadcast_arrays(x1, x2)
            m = (np.abs(x1b) < lim) & (np.abs(x2b) < lim)
            out[m] = sp.ev(x1b[m], x2b[m])
            return out

        return ev

    @property
    def hat_l1(self) -> float:
        """``||phi_hat||_1``."""
        if self.spec.gauge == "tensor":
            return 0.5 * self.scale * _profile_l1() ** 2
        return self.scale * _l1_gauge_integral(lambda q: _profile(q))

    @property
    def hat_sup(self) -> float:
        """``max |phi_hat|``, attained at the origin."""
        return self.scale * math.exp(-2.0 if self.spec.gauge == "tensor" else -1.0)


@functools.lru_cache(maxsize=1)
def _profile_l1() -> float:
    return _trapezoid_profile_integral(1)


def _l1_gauge_integral(g) -> float:
    # area element of the l1 ball: d|{q(xi) < r}| = 4 r dr
    val, _ = quad(lambda r: 4.0 * r * float(g(np.array(r))), 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


class _ProfileSpline:
    """Even cubic spline of the profile transform ``B``; zero past the table."""

    def __init__(self, ds=1.0 / 256.0, smax=512.0, nodes=4096):
        s, v = _profile_transform_table(ds, smax, nodes)
        self.smax = s[-1]
        self.spline = CubicSpline(s, v, bc_type=((1, 0.0), "natural"))

    def __call__(self, s):
        a = np.abs(np.asarray(s, float))
        out = np.zeros_like(a)
        m = a <= self.smax
        out[m] = self.spline(a[m])
        return out


@functools.lru_cache(maxsize=1)
def _profile_spline() -> _ProfileSpline:
    return _ProfileSpline()


def synth_bump_phi(spec: BumpSpec = BumpSpec()) -> Bump:
    """Inverse-FFT synthesis of ``phi`` from its diamond-supported spectrum.

    The spectrum is sampled on ``fft_size`` points per axis, of which a
    ``1/pad_factor`` fraction covers the support ``[-1, 1]``.  ``phi`` is
    normalised to ``||phi||_2 = sqrt(2)/2`` and ``C1`` is fitted as the max
    of ``|phi(x)| exp(|x|^(1/2))`` over grid points with ``5 <= |x| <= 40``.
    """
    N = int(spec.fft_size)
    p = int(spec.pad_factor)
    if N < 1024 or N & (N - 1):
        raise ParameterDomainError("fft_size must be a power of two >= 1024", fft_size=N)
    if p < 8:
        raise ParameterDomainError("pad_factor must be >= 8", pad_factor=p)
    if spec.gauge not in ("tensor", "l1"):
        raise ParameterDomainError("gauge must be 'tensor' or 'l1'", gauge=spec.gauge)
    if spec.decay_exponent != 0.5:
        raise ParameterDomainError("decay exponent is fixed at 1/2")
    if spec.gauge == "tensor":
        scale = 1.0 / _profile_l2sq()  # ||phi_hat||^2 = scale^2 * (∫b^2)^2 / 2 = 1/2
    else:
        scale = math.sqrt(0.5 / _l1_gauge_integral(lambda q: _profile(q) ** 2))
    dxi = 2.0 * p / N  # frequency spacing; the box [-p, p) holds the support
    xi = (np.arange(N) - N // 2) * dxi
    X1, X2 = np.meshgrid(xi, xi, indexing="ij")
    probe = Bump(spec, GridFunction(np.zeros((2, 2)), 1.0), scale, 0.0)
    dx = 1.0 / (N * dxi)
    # half-cell phase shift puts the samples on cell midpoints
    shift = np.exp(1j * math.pi * dx * (X1 + X2))
    H = probe.phi_hat(X1, X2) * shift
    phi = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(H))).real * (N * dxi) ** 2
    half = N * dx / 2.0
    grid = GridFunction(phi, half)
    R1, R2 = grid.coords()
    rad = np.hypot(R1, R2)
    band = np.maximum(np.abs(R1), np.abs(R2)) > 0.9 * half
    tail = float(np.sum(phi[band] ** 2) / np.sum(phi**2))
    if spec.gauge == "tensor" and tail > 1e-10:
        raise PaddingError("decay not resolved before the grid edge", tail_mass=tail)
    if not np.any(rad > 40.0):
        raise PaddingError("synthesis grid does not reach |x| = 40", half_side=half)
    ann = (rad >= 5.0) & (rad <= 40.0)
    c1 = float(np.max(np.abs(phi[ann]) * np.exp(np.sqrt(rad[ann]))))
    return Bump(replace(spec, c1_estimate=c1), grid, scale, c1, tail)


@functools.lru_cache(maxsize=4)
def default_bump(gauge: str = "tensor") -> Bump:
    return synth_bump_phi(BumpSpec(gauge=gauge))


# --------------------------------------------------------------------------
# Bessel ratios
# --------------------------------------------------------------------------


def random_bandlimited(rng: np.random.Generator, radius: float, n: int, modes: int = 2) -> GridFunction:
    """Random function supported in the disc ``|x| < radius``.

    A random trigonometric polynomial of degree ``modes`` times the smooth
    taper ``(1 - |x|^2/radius^2)^2``; its transform lies in ``PW(B_radius)``.
    """
    g = GridFunction(np.zeros((n, n)), radius)
    X1, X2 = g.coords()
    m = np.arange(-modes, modes + 1)
    c = rng.standard_normal((len(m), len(m))) + 1j * rng.standard_normal((len(m), len(m)))
    w = 2.0 * math.pi / (2.0 * radius)
    E1 = np.exp(1j * w * np.multiply.outer(X1, m))
    E2 = np.exp(1j * w * np.multiply.outer(X2, m))
    vals = np.einsum("abk,abl,kl->ab", E1, E2, c)
    r2 = (X1**2 + X2**2) / radius**2
    vals = vals * np.where(r2 < 1.0, (1.0 - r2) ** 2, 0.0)
    return GridFunction(vals, radius)


def bessel_ratio(f: GridFunction, traj: ParametricTrajectory, window: float, max_step: float | None = None) -> float:
    """``||F||_{L2(arc measure in window)} / ||f||_2`` for ``F`` the transform of ``f``."""
    nrm = f.norm2()
    if nrm == 0.0:
        raise UndefinedRatioError("zero function has no Bessel ratio")
    step = 0.25 / f.half_side if max_step is None else max_step
    q = arc_quadrature(traj, window, max_step=step)
    return sampled_norm(f, q) / nrm


def bessel_constant(ratios, eta: float, radius: float) -> float:
    """Fitted constant ``C`` with ``ratio <= C (eta^-1/2 + radius^1/2)``."""
    return float(np.max(ratios)) / (eta**-0.5 + radius**0.5)


def bessel_ensemble(traj, radius, windows, count=100, n=None, seed=0, modes=2):
    """Bessel ratios for ``count`` random functions at each window.

    Returns ``{window: array of ratios}``; one nudft pass per window.  The
    grid (``n`` per side) defaults to the smallest power of two whose
    frequency cap covers the corners of the largest window.
    """
    need = 4.0 * radius * math.sqrt(2.0) * max(float(w) for w in windows)
    if n is None:
        n = max(64, 1 << math.ceil(math.log2(need)))
    elif n < need:
        warnings.warn(
            f"grid n={n} resolves frequencies up to {n / (4 * radius):.3g}; windows reach {need / (4 * radius):.3g}",
            AccuracyWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    fs = [random_bandlimited(rng, radius, n, modes) for _ in range(count)]
    norms = np.array([f.norm2() for f in fs])
    out = {}
    step = 0.25 / radius
    for W in windows:
        q = arc_quadrature(traj, W, max_step=step)
        x = fs[0].axis()
        h2 = fs[0].mesh ** 2
        acc = np.zeros(count)
        for s in range(0, len(q), 2048):
            p = q.points[s : s + 2048]
            w = q.weights[s : s + 2048]
            E1 = _phase_matrix(p[:, 0], x)
            E2 = _phase_matrix(p[:, 1], x)
            for b, f in enumerate(fs):
                F = h2 * np.einsum("mi,mi->m", E1, E2 @ f.values.T)
                acc[b] += np.sum(w * np.abs(F) ** 2)
        out[float(W)] = np.sqrt(acc) / norms
    return out
