"""Rectangular contour quadrature around the bulk support.

The rectangle has vertices (L_minus - 2d) +- 2di and (L_plus + 2d) +- 2di with
0 < d < L_minus/10, so it encloses [L_minus, L_plus] and leaves 0 (and any
point mass there) outside.  All functionals of the limiting law that the
fluctuation theory needs are Cauchy integrals over this contour:

    F(sigma)       = (1/2 pi i) oint f(xi) m'(xi) sigma / (1 + sigma m(xi)) dxi
    mean inside    = -(1/2 pi i) oint f(xi) m(xi) dxi
    clt variance   = ratio * ( E_nu[F^2] - (E_nu F)^2 )

Quadrature is Gauss-Legendre per side with adaptive node doubling.  Node
values of m and m' are solved once per (convolution, contour) pair and cached
per refinement level, so repeated functional evaluations reuse the transform.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import (AccuracyWarning, ContourError, DomainError,
                     NearSingularityError)
from .freeconv import (FreeConvolution, stieltjes_batch,
                       stieltjes_derivative_batch, support_edges)
from .measures import SpectralMeasure, _leggauss

MIN_NODES_PER_SIDE = 16
DEFAULT_NODES_PER_SIDE = 128
MAX_NODES_PER_SIDE = 1024
DEFAULT_D_CAP = 0.05
SELF_TEST_TOL = 1e-10
QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-12
FUNC_RTOL = 1e-9
FUNC_ATOL = 1e-10
DENOM_FLOOR = 1e-8
IMAG_TOL = 1e-7
SIGMA_NODES = 128
VARIANCE_CLAMP = 1e-9


# ---------------------------------------------------------------------------
# test functions

class TestFunction:
    """Analytic test function f applied to eigenvalues and contour nodes.

    Subclasses are callables accepting real or complex arrays.  validate()
    checks that every declared singularity stays clear of a given contour.
    """

    def validate(self, contour: "RectContour") -> None:
        return None


@dataclass(frozen=True)
class Polynomial(TestFunction):
    coeffs: tuple  # ascending order: coeffs[k] multiplies x**k

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if not c:
            raise DomainError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        x = np.asarray(x)
        out = np.zeros(x.shape, dtype=x.dtype)
        for c in reversed(self.coeffs):
            out = out * x + c
        return out


@dataclass(frozen=True)
class Exponential(TestFunction):
    scale: float

    def __call__(self, x):
        return np.exp(self.scale * np.asarray(x))


@dataclass(frozen=True)
class RationalShift(TestFunction):
    """f(x) = 1/(x - pole); the pole must stay outside any contour in use."""
    pole: float

    def __call__(self, x):
        return 1.0 / (np.asarray(x) - self.pole)

    def validate(self, contour: "RectContour") -> None:
        if not (self.pole < 0.0 or self.pole > contour.L_plus + 4.0 * contour.d):
            raise DomainError(
                f"pole {self.pole!r} is too close to the contour; need "
                f"pole < 0 or pole > {contour.L_plus + 4.0 * contour.d!r}")


# ---------------------------------------------------------------------------
# the contour

@dataclass(frozen=True, eq=False)
class RectContour:
    """Counterclockwise rectangle around [L_minus, L_plus], clear of 0."""
    d: float
    L_minus: float
    L_plus: float
    nodes_per_side: int = DEFAULT_NODES_PER_SIDE

    def __post_init__(self):
        if not (0.0 < self.d < self.L_minus / 10.0):
            raise DomainError(
                f"contour margin d = {self.d!r} outside (0, L_minus/10) = "
                f"(0, {self.L_minus / 10.0!r})")
        if not (0.0 < self.L_minus < self.L_plus):
            raise DomainError(
                f"bad edge interval [{self.L_minus!r}, {self.L_plus!r}]")
        if self.nodes_per_side < MIN_NODES_PER_SIDE:
            raise DomainError(
                f"nodes_per_side = {self.nodes_per_side} < {MIN_NODES_PER_SIDE}")
        object.__setattr__(self, "_levels", {})
        object.__setattr__(self, "_solves", weakref.WeakKeyDictionary())

    @property
    def left(self) -> float:
        return self.L_minus - 2.0 * self.d

    @property
    def right(self) -> float:
        return self.L_plus + 2.0 * self.d

    @property
    def half_height(self) -> float:
        return 2.0 * self.d

    @property
    def center(self) -> float:
        return 0.5 * (self.L_minus + self.L_plus)

    def corners(self):
        h = self.half_height
        return (complex(self.left, -h), complex(self.right, -h),
                complex(self.right, h), complex(self.left, h))

    def max_level(self) -> int:
        lvl = 0
        while self.nodes_per_side << (lvl + 1) <= MAX_NODES_PER_SIDE:
            lvl += 1
        return lvl

    def nodes(self, level: int = 0):
        """(points, weights) of the full rectangle at a refinement level.

        Level k uses nodes_per_side * 2**k Gauss-Legendre nodes per side,
        capped at MAX_NODES_PER_SIDE.  Arrays are cached and read-only.
        """
        if level not in self._levels:
            n = min(self.nodes_per_side << level, MAX_NODES_PER_SIDE)
            s, w = _leggauss(n)
            cs = self.corners()
            pts, wts = [], []
            for a, b in zip(cs, cs[1:] + cs[:1]):
                pts.append(a + (b - a) * 0.5 * (s + 1.0))
                wts.append(w * ((b - a) * 0.5))
            xi, ww = np.concatenate(pts), np.concatenate(wts)
            xi.flags.writeable = False
            ww.flags.writeable = False
            self._levels[level] = (xi, ww)
        return self._levels[level]


def _graded_segment(a: complex, b: complex, pole: complex, n_panel: int = 24):
    """Composite GL rule on segment a->b with panels graded toward the foot
    of `pole`; resolves integrands with a singularity arbitrarily close to
    the segment at fixed cost."""
    t_star = min(max(((pole - a) / (b - a)).real, 0.0), 1.0)
    dist = abs(a + (b - a) * t_star - pole)
    w0 = max(dist / abs(b - a), 1e-12)
    cuts = {0.0, 1.0, t_star}
    width, k = w0, 0
    while (t_star - width > 0.0 or t_star + width < 1.0) and k < 64:
        if t_star - width > 0.0:
            cuts.add(t_star - width)
        if t_star + width < 1.0:
            cuts.add(t_star + width)
        width *= 2.0
        k += 1
    ts = np.array(sorted(cuts))
    s, wq = _leggauss(n_panel)
    xs, ws = [], []
    for lo, hi in zip(ts[:-1], ts[1:]):
        za, zb = a + (b - a) * lo, a + (b - a) * hi
        xs.append(za + (zb - za) * 0.5 * (s + 1.0))
        ws.append(wq * ((zb - za) * 0.5))
    return np.concatenate(xs), np.concatenate(ws)


def _construction_self_test(c: RectContour) -> None:
    # 1. Closure and signed area on the production nodes.  Both integrands
    #    are per-side affine, so Gauss-Legendre reproduces them exactly; any
    #    orientation, corner, or weight-scaling bug shows up here.
    xi, w = c.nodes(0)
    scale = abs(c.right) + abs(c.left) + c.half_height
    closure = abs(complex((w).sum()))
    if closure > 1e-12 * scale:
        raise ContourError(f"contour does not close: oint dxi = {closure:.3e}")
    area = complex((np.conj(xi) * w).sum()) / 2j
    want = (c.right - c.left) * 2.0 * c.half_height
    if abs(area - want) > 1e-10 * want:
        raise ContourError(
            f"signed area {area!r} != {want!r}; orientation or weights wrong")
    # 2. Cauchy integral around the center, on panels graded toward the
    #    center's feet.  Plain per-side rules cannot resolve a pole this
    #    close to a long side when d is small; the graded rule always can.
    tot = 0j
    cs = c.corners()
    for a, b in zip(cs, cs[1:] + cs[:1]):
        gx, gw = _graded_segment(a, b, complex(c.center))
        tot += (gw / (gx - c.center)).sum()
    err = abs(tot - 2j * np.pi)
    if err > SELF_TEST_TOL:
        raise ContourError(
            f"Cauchy self-test missed 2 pi i by {err:.3e}")


def build_contour(edges, d: float | None = None,
                  nodes_per_side: int = DEFAULT_NODES_PER_SIDE) -> RectContour:
    """Rectangle around the support described by `edges`, self-tested.

    With d omitted, the margin defaults to min(L_minus/20, 0.05).
    """
    if d is None:
        d = min(edges.L_minus / 20.0, DEFAULT_D_CAP)
    c = RectContour(d=float(d), L_minus=float(edges.L_minus),
                    L_plus=float(edges.L_plus),
                    nodes_per_side=int(nodes_per_side))
    _construction_self_test(c)
    return c


def default_contour(fc: FreeConvolution) -> RectContour:
    """The per-convolution default contour, built once and cached on fc."""
    c = getattr(fc, "_default_contour", None)
    if c is None:
        c = build_contour(support_edges(fc))
        object.__setattr__(fc, "_default_contour", c)
    return c


# ---------------------------------------------------------------------------
# generic quadrature

def contour_integral(c: RectContour, integrand, rtol: float = QUAD_RTOL,
                     atol: float = QUAD_ATOL) -> complex:
    """oint integrand(xi) dxi with node doubling until two successive
    refinement levels agree; warns if the finest level still disagrees."""
    prev = None
    gap = np.inf
    for lvl in range(c.max_level() + 1):
        xi, w = c.nodes(lvl)
        vals = np.asarray(integrand(xi), dtype=complex)
        finite = np.isfinite(vals.real) & np.isfinite(vals.imag)
        if not finite.all():
            bad = xi[np.flatnonzero(~finite)[0]]
            raise DomainError(f"integrand is non-finite at xi = {bad!r}")
        cur = complex((vals * w).sum())
        if prev is not None:
            gap = abs(cur - prev)
            if gap <= atol + rtol * abs(cur):
                return cur
        prev = cur
    warnings.warn(
        f"contour integral not settled at {MAX_NODES_PER_SIDE} nodes/side: "
        f"last two levels differ by {gap:.3e}",
        AccuracyWarning, stacklevel=2)
    return cur


def _node_values(fc: FreeConvolution, c: RectContour, level: int):
    """Cached (m, m') on the contour nodes of a refinement level."""
    table = c._solves.get(fc)
    if table is None:
        table = {}
        c._solves[fc] = table
    if level not in table:
        xi, _ = c.nodes(level)
        m = stieltjes_batch(fc, xi)
        mp = stieltjes_derivative_batch(fc, xi, m=m)
        m.flags.writeable = False
        mp.flags.writeable = False
        table[level] = (m, mp)
    return table[level]


def _as_measure(nu) -> SpectralMeasure:
    if isinstance(nu, SpectralMeasure):
        return nu
    return nu.as_measure()


def _sigma_rule(base: SpectralMeasure):
    return base.quad_rule(SIGMA_NODES)


# ---------------------------------------------------------------------------
# fluctuation functionals

def _f_values(fc, c, f, sigmas) -> np.ndarray:
    """F(sigma) for a batch of sigma values, adaptively refined jointly."""
    sig = np.asarray(sigmas, dtype=float).ravel()
    if np.any(sig <= 0.0):
        raise DomainError("sigma values must be positive")
    prev = None
    for lvl in range(c.max_level() + 1):
        xi, w = c.nodes(lvl)
        m, mp = _node_values(fc, c, lvl)
        den = 1.0 + np.multiply.outer(sig, m)
        margin = float(np.abs(den).min())
        if margin <= DENOM_FLOOR:
            raise NearSingularityError(
                f"|1 + sigma m(xi)| fell to {margin:.3e} on the contour; "
                f"the margin d is too small or the edges are off")
        base = f(xi) * mp * w
        F = (base * (sig[:, None] / den)).sum(axis=1) / (2j * np.pi)
        if prev is not None:
            gap = float(np.max(np.abs(F - prev)))
            if gap <= FUNC_ATOL + FUNC_RTOL * float(np.max(np.abs(F))):
                break
        prev = F
    else:
        warnings.warn("F(sigma) refinement hit the node cap before settling",
                      AccuracyWarning, stacklevel=2)
    worst = float(np.max(np.abs(F.imag)))
    if worst >= IMAG_TOL:
        raise ContourError(
            f"F(sigma) came out non-real (|Im| = {worst:.3e}); the contour "
            f"or transform values are inconsistent")
    return F.real


def f_sigma(fc: FreeConvolution, f: TestFunction, sigma: float,
            contour: RectContour | None = None) -> float:
    """F(sigma) = (1/2 pi i) oint f(xi) m'(xi) sigma/(1 + sigma m(xi)) dxi."""
    c = default_contour(fc) if contour is None else contour
    f.validate(c)
    return float(_f_values(fc, c, f, np.array([float(sigma)]))[0])


def denominator_margin(fc: FreeConvolution, sigmas,
                       contour: RectContour | None = None) -> float:
    """min over contour nodes and sigma of |1 + sigma m(xi)|."""
    c = default_contour(fc) if contour is None else contour
    sig = np.asarray(sigmas, dtype=float).ravel()
    m, _ = _node_values(fc, c, 0)
    den = 1.0 + np.multiply.outer(sig, m)
    return float(np.abs(den).min())


def clt_variance(fc: FreeConvolution, f: TestFunction,
                 contour: RectContour | None = None, nu=None,
                 gamma0: float | None = None) -> float:
    """Limiting variance of the rescaled linear eigenvalue statistic.

    V = gamma0 * ( E_nu[F(sigma)^2] - (E_nu[F(sigma)])^2 ), the variance of
    the iid-over-populations sum that the statistic reduces to.  nu defaults
    to the base measure of fc and gamma0 to its ratio.
    """
    c = default_contour(fc) if contour is None else contour
    f.validate(c)
    base = fc.base if nu is None else _as_measure(nu)
    g0 = fc.ratio if gamma0 is None else float(gamma0)
    sig, wts = _sigma_rule(base)
    F = _f_values(fc, c, f, sig)
    mean = float((wts * F).sum())
    second = float((wts * F * F).sum())
    v = g0 * (second - mean * mean)
    if v < -VARIANCE_CLAMP:
        raise ContourError(f"variance came out negative: {v!r}")
    return max(v, 0.0)


def _theorem_terms(fc, c, f, base):
    """The two terms of the fluctuation variance display, transcribed
    literally (no 2 pi i normalization, no ratio weight); diagnostic only."""
    tloc, twts = _sigma_rule(base)
    prev = None
    for lvl in range(c.max_level() + 1):
        xi, w = c.nodes(lvl)
        m, mp = _node_values(fc, c, lvl)
        fb = f(xi) * mp * w
        den = 1.0 + np.multiply.outer(tloc, m)
        margin = float(np.abs(den).min())
        if margin <= DENOM_FLOOR:
            raise NearSingularityError(
                f"|1 + t m(xi)| fell to {margin:.3e} on the contour")
        A = (fb / den).sum(axis=1)
        double_term = complex(-(twts * tloc * A * A).sum() / (4.0 * np.pi ** 2))
        single = complex((fb * (xi + 1.0 / m)).sum())
        cur = (double_term, single * single)
        if prev is not None and abs(cur[0] + cur[1] - prev[0] - prev[1]) <= \
                FUNC_ATOL + FUNC_RTOL * abs(cur[0] + cur[1]):
            return cur
        prev = cur
    warnings.warn("theorem-term refinement hit the node cap before settling",
                  AccuracyWarning, stacklevel=2)
    return cur


def theorem_variance(fc: FreeConvolution, f: TestFunction,
                     contour: RectContour | None = None, nu=None) -> complex:
    """Literal two-term variance display: double contour-integral term plus
    squared single integral, returned unnormalized as a complex diagnostic.
    The operational variance is clt_variance; see variance_report."""
    c = default_contour(fc) if contour is None else contour
    f.validate(c)
    base = fc.base if nu is None else _as_measure(nu)
    t1, t2 = _theorem_terms(fc, c, f, base)
    return t1 + t2


def mean_statistic(fc: FreeConvolution, f: TestFunction,
                   contour: RectContour | None = None) -> float:
    """integral of f against the part of the limiting law inside the contour:
    -(1/2 pi i) oint f(xi) m(xi) dxi.  For f = 1 this is the mass of the
    absolutely continuous part, 1 - (1 - ratio)^+."""
    c = default_contour(fc) if contour is None else contour
    f.validate(c)
    prev = None
    for lvl in range(c.max_level() + 1):
        xi, w = c.nodes(lvl)
        m, _ = _node_values(fc, c, lvl)
        cur = complex(-(f(xi) * m * w).sum() / (2j * np.pi))
        if prev is not None and abs(cur - prev) <= FUNC_ATOL + FUNC_RTOL * abs(cur):
            break
        prev = cur
    else:
        warnings.warn("mean refinement hit the node cap before settling",
                      AccuracyWarning, stacklevel=2)
    if abs(cur.imag) >= IMAG_TOL:
        raise ContourError(f"mean came out non-real: {cur!r}")
    return cur.real


def variance_report(fc: FreeConvolution, f: TestFunction,
                    contour: RectContour | None = None, nu=None,
                    gamma0: float | None = None) -> str:
    """Key-value text block comparing the operational variance with the
    literal two-term display."""
    c = default_contour(fc) if contour is None else contour
    f.validate(c)
    base = fc.base if nu is None else _as_measure(nu)
    v = clt_variance(fc, f, contour=c, nu=base, gamma0=gamma0)
    t1, t2 = _theorem_terms(fc, c, f, base)
    lines = [
        f"clt_variance = {v!r}",
        f"theorem_double_term = {t1!r}",
        f"theorem_squared_term = {t2!r}",
        f"theorem_total = {t1 + t2!r}",
    ]
    return "\n".join(lines)
