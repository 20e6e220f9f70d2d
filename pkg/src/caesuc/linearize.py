"""MILP encodings of bilinear terms.

Binary x continuous products use exact McCormick envelopes. Continuous x
continuous products go through ``xy = ((x+y)/2)^2 - ((x-y)/2)^2`` with each
square replaced by an incremental-format piecewise-linear chord
interpolation.

By default products are linearized on the unit box: x and y are rescaled to
[0, 1] over their bounds before the squares are taken. For factors with very
different magnitudes (cavern mass ~1e6 kg against temperature ~300 K) this is
what keeps the approximation error proportional to the product instead of to
the square of the larger range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .milp import BINARY, CONTINUOUS, EQ, GE, LE, MilpModel


class LinearizationError(ValueError):
    pass


@dataclass
class BoundsBox:
    """Finite (lower, upper) bounds per variable handle."""

    bounds: dict[int, tuple[float, float]] = field(default_factory=dict)

    def set(self, handle: int, lo: float, hi: float) -> None:
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise LinearizationError(f"bounds for handle {handle} must be finite")
        if lo > hi:
            raise LinearizationError(f"inverted bounds for handle {handle}: {lo} > {hi}")
        self.bounds[handle] = (float(lo), float(hi))

    def get(self, model: MilpModel, handle: int) -> tuple[float, float]:
        if handle in self.bounds:
            return self.bounds[handle]
        v = model.variables[handle]
        if not (math.isfinite(v.lb) and math.isfinite(v.ub)):
            raise LinearizationError(f"variable {v.name} is unbounded")
        return v.lb, v.ub


def _bounds(model, handle, bounds):
    if bounds is None:
        return BoundsBox().get(model, handle)
    if isinstance(bounds, BoundsBox):
        return bounds.get(model, handle)
    lo, hi = bounds
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise LinearizationError("bounds must be finite")
    return float(lo), float(hi)


@dataclass(frozen=True)
class PiecewiseGrid:
    points: tuple[float, ...]

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "PiecewiseGrid":
        if n < 1:
            raise LinearizationError("need at least one segment")
        if not lo < hi:
            raise LinearizationError(f"grid range must be increasing ({lo}, {hi})")
        w = (hi - lo) / n
        pts = [lo + i * w for i in range(n)] + [hi]
        return cls(tuple(pts))

    @property
    def n(self) -> int:
        return len(self.points) - 1

    @property
    def lo(self) -> float:
        return self.points[0]

    @property
    def hi(self) -> float:
        return self.points[-1]

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def squares(self) -> tuple[float, ...]:
        return tuple(z * z for z in self.points)

    def fill(self, z: float) -> np.ndarray:
        """The incremental fill vector phi reproducing ``z`` (segments fill left to right)."""
        if z < self.lo - 1e-9 * max(1.0, abs(self.lo)) or z > self.hi + 1e-9 * max(1.0, abs(self.hi)):
            raise LinearizationError(f"{z} outside grid [{self.lo}, {self.hi}]")
        pts = self.points
        phi = np.zeros(self.n)
        for i in range(self.n):
            a, b = pts[i], pts[i + 1]
            if z >= b:
                phi[i] = 1.0
            else:
                phi[i] = max(0.0, (z - a) / (b - a))
                break
        return phi

    def square(self, z: float) -> float:
        """Chord interpolation of z**2 through the divide points."""
        phi = self.fill(z)
        sq = np.array(self.squares)
        return float(sq[0] + np.dot(np.diff(sq), phi))


def symmetric_grid(lo: float, hi: float, n: int) -> PiecewiseGrid:
    """Uniform grid over the smallest superset of [lo, hi] that has 0 as a divide point."""
    if lo >= 0:
        lo = 0.0
    if hi <= 0:
        hi = 0.0
    if lo == hi:
        hi = lo + 1e-9
    if lo == 0.0 or hi == 0.0:
        return PiecewiseGrid.uniform(lo, hi, n)
    if n == 1:
        raise LinearizationError("a one-segment grid cannot straddle 0 with 0 as a divide point")
    best = None
    for k in range(1, n):
        w = max(-lo / k, hi / (n - k))
        if best is None or w < best[0] - 1e-15:
            best = (w, k)
    w, k = best
    pts = [-(k - i) * w for i in range(k)] + [0.0] + [i * w for i in range(1, n - k + 1)]
    return PiecewiseGrid(tuple(pts))


@dataclass
class ProductLink:
    """Ties one product x*y to the auxiliary variables that encode it."""

    x: int
    y: int
    product: int
    grids: tuple[PiecewiseGrid, ...]
    scale: float                            # product error = scale * grid error
    aux: list[int] = field(default_factory=list)
    zeta: list[list[int]] = field(default_factory=list)     # step binaries per grid
    phi: list[list[int]] = field(default_factory=list)
    offsets: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)   # xl, dx, yl, dy
    unit: float = 1.0                       # the product variable holds x*y / unit

    @property
    def error_bound(self) -> float:
        return self.scale * approximation_error_bound(self.grids)

    def z_values(self, x: float, y: float) -> tuple[float, ...]:
        xl, dx, yl, dy = self.offsets
        xs, ys = (x - xl) / dx, (y - yl) / dy
        if self.x == self.y:
            return (xs,)
        return ((xs + ys) / 2, (xs - ys) / 2)

    def evaluate(self, x: float, y: float) -> float:
        """Value the MILP assigns to the product when x and y are fixed."""
        xl, dx, yl, dy = self.offsets
        zs = self.z_values(x, y)
        if self.x == self.y:
            return 2 * xl * x - xl * xl + dx * dx * self.grids[0].square(zs[0])
        sq = self.grids[0].square(zs[0]) - self.grids[1].square(zs[1])
        return xl * y + yl * x - xl * yl + dx * dy * sq

    def binary_assignment(self, x: float, y: float) -> dict[int, float]:
        """Step-binary values that select the segments containing (x, y)."""
        out = {}
        for grid, zetas, z in zip(self.grids, self.zeta, self.z_values(x, y)):
            phi = grid.fill(min(max(z, grid.lo), grid.hi))
            for i, h in enumerate(zetas):
                # zeta_i sits between phi_{i+1} and phi_i
                out[h] = 1.0 if phi[i + 1] > 0 or phi[i] >= 1.0 - 1e-12 else 0.0
        return out


def approximation_error_bound(grids) -> float:
    """Worst-case absolute error (w+^2 + w-^2)/4 of a difference-of-squares product."""
    widths = [g if isinstance(g, (int, float)) else g.width for g in grids]
    return sum(w * w for w in widths) / 4.0


def mccormick_binary_T(model: MilpModel, alpha: int, T: int, bounds=None,
                       name: str | None = None) -> int:
    """Q = alpha*T, exact for binary alpha."""
    t_lo, t_hi = _bounds(model, T, bounds)
    name = name or f"Q_{model.variables[alpha].name}_{model.variables[T].name}"
    q = model.add_variable(name, CONTINUOUS, min(0.0, t_lo), max(0.0, t_hi))
    model.add_constraint(f"{name}_lo", {q: 1, alpha: -t_lo}, GE, 0.0)
    model.add_constraint(f"{name}_hi", {q: 1, alpha: -t_hi}, LE, 0.0)
    model.add_constraint(f"{name}_clo", {q: 1, T: -1, alpha: -t_hi}, GE, -t_hi)
    model.add_constraint(f"{name}_chi", {q: 1, T: -1, alpha: -t_lo}, LE, -t_lo)
    return q


def mccormick_binary_p(model: MilpModel, beta: int, p: int, bounds=None,
                       name: str | None = None) -> int:
    """S = beta*p for p >= 0, exact for binary beta."""
    p_lo, p_hi = _bounds(model, p, bounds)
    if p_lo < 0:
        raise LinearizationError("zero-anchored envelope needs a non-negative lower bound; shift p first")
    name = name or f"S_{model.variables[beta].name}_{model.variables[p].name}"
    s = model.add_variable(name, CONTINUOUS, 0.0, p_hi)
    model.add_constraint(f"{name}_hi", {s: 1, beta: -p_hi}, LE, 0.0)
    model.add_constraint(f"{name}_clo", {s: 1, p: -1, beta: -p_hi}, GE, -p_hi)
    model.add_constraint(f"{name}_chi", {s: 1, p: -1}, LE, 0.0)
    return s


def pw_square(model: MilpModel, z, grid: PiecewiseGrid, name: str,
              link: ProductLink | None = None, priority: int = 0) -> int:
    """Incremental piecewise model of z**2; ``z`` is a handle or ``(expr, constant)``."""
    if isinstance(z, int):
        z_lo, z_hi = _bounds(model, z, None)
        tol = 1e-9 * max(1.0, abs(grid.lo), abs(grid.hi))
        if z_lo < grid.lo - tol or z_hi > grid.hi + tol:
            raise LinearizationError(
                f"{name}: bounds [{z_lo}, {z_hi}] exceed grid range [{grid.lo}, {grid.hi}]")
        expr, const = {z: 1.0}, 0.0
    else:
        expr, const = z
    n = grid.n
    pts, sq = grid.points, grid.squares
    phi = [model.add_variable(f"{name}_phi{i + 1}", CONTINUOUS, 0.0, 1.0) for i in range(n)]
    zeta = [model.add_variable(f"{name}_zeta{i + 1}", BINARY, priority=priority) for i in range(n - 1)]
    sq_lo = 0.0 if grid.lo <= 0 <= grid.hi else min(sq[0], sq[-1])
    s = model.add_variable(f"{name}_sq", CONTINUOUS, sq_lo, max(sq[0], sq[-1]))
    row = dict(expr)
    for i in range(n):
        row[phi[i]] = row.get(phi[i], 0.0) - (pts[i + 1] - pts[i])
    model.add_constraint(f"{name}_z", row, EQ, pts[0] - const)
    model.add_constraint(f"{name}_sq", {s: 1.0, **{phi[i]: -(sq[i + 1] - sq[i]) for i in range(n)}},
                         EQ, sq[0])
    for i in range(n - 1):
        model.add_constraint(f"{name}_ord{i + 1}a", {phi[i + 1]: 1.0, zeta[i]: -1.0}, LE, 0.0)
        model.add_constraint(f"{name}_ord{i + 1}b", {zeta[i]: 1.0, phi[i]: -1.0}, LE, 0.0)
    if link is not None:
        link.aux.extend(phi + zeta + [s])
        link.zeta.append(zeta)
        link.phi.append(phi)
    return s


def linearize_product(model: MilpModel, x: int, y: int, bounds=None, n_plus: int = 16,
                      n_minus: int = 16, name: str | None = None, normalize: bool = True,
                      registry: list | None = None, priority: int = 0, unit: float | str = 1.0) -> int:
    """Add a variable equal to the piecewise approximation of x*y and return its handle.

    ``bounds`` may be a :class:`BoundsBox` or omitted (variable bounds are used).
    ``x == y`` gives a square with a single grid. The variable holds the
    product divided by ``unit``; ``unit="auto"`` picks the power of ten
    nearest the largest corner product, which keeps rows with products of
    large quantities (mass times temperature) well scaled.
    """
    box = bounds if isinstance(bounds, BoundsBox) else BoundsBox()
    xl, xu = box.get(model, x)
    yl, yu = box.get(model, y)
    name = name or f"w_{model.variables[x].name}_{model.variables[y].name}"
    square = x == y
    if normalize:
        dx = (xu - xl) or 1.0
        dy = (yu - yl) or 1.0
        # x~ = (x - xl)/dx in [0, 1]
        zp_expr, zp_const = {x: 0.5 / dx, y: 0.5 / dy}, -0.5 * (xl / dx + yl / dy)
        if square:
            zp_expr, zp_const = {x: 1.0 / dx}, -xl / dx
            gp = PiecewiseGrid.uniform(0.0, 1.0, n_plus)
        else:
            gp = PiecewiseGrid.uniform(0.0, 1.0, n_plus)
            gm = symmetric_grid(-0.5, 0.5, n_minus)
            zm_expr = {x: 0.5 / dx, y: -0.5 / dy}
            zm_const = -0.5 * (xl / dx - yl / dy)
        scale = dx * dx if square else dx * dy
        offsets = (xl, dx, yl, dy)
    else:
        if square:
            gp = PiecewiseGrid.uniform(xl, xu if xu > xl else xl + 1e-9, n_plus)
            zp_expr, zp_const = {x: 1.0}, 0.0
        else:
            gp = PiecewiseGrid.uniform((xl + yl) / 2, (xu + yu) / 2 if xu + yu > xl + yl else (xl + yl) / 2 + 1e-9,
                                       n_plus)
            gm = symmetric_grid((xl - yu) / 2, (xu - yl) / 2, n_minus)
            zp_expr, zp_const = {x: 0.5, y: 0.5}, 0.0
            zm_expr, zm_const = {x: 0.5, y: -0.5}, 0.0
        scale = 1.0
        offsets = (0.0, 1.0, 0.0, 1.0)
    grids = (gp,) if square else (gp, gm)
    corners = [a * b for a in (xl, xu) for b in (yl, yu)]
    lo, hi = min(corners), max(corners)
    if square and xl < 0 < xu:
        lo = 0.0
    if unit == "auto":
        top = max(abs(lo), abs(hi))
        unit = 10.0 ** round(math.log10(top)) if top > 0 else 1.0
    u = float(unit)
    err = scale * approximation_error_bound(grids)
    w = model.add_variable(name, CONTINUOUS, (lo - err) / u, (hi + err) / u)
    link = ProductLink(x, y, w, grids, scale, offsets=offsets, unit=u)
    sp = pw_square(model, (zp_expr, zp_const), gp, f"{name}_p", link, priority)
    if square:
        if normalize:
            # x^2 = 2*xl*x - xl^2 + dx^2 * x~^2
            model.add_constraint(f"{name}_def", {w: 1.0, x: -2 * xl / u, sp: -scale / u}, EQ, -xl * xl / u)
        else:
            model.add_constraint(f"{name}_def", {w: 1.0, sp: -1.0 / u}, EQ, 0.0)
    else:
        sm = pw_square(model, (zm_expr, zm_const), gm, f"{name}_m", link, priority)
        if normalize:
            # x*y = xl*y + yl*x - xl*yl + dx*dy*(x~ y~)
            row = {w: 1.0, sp: -scale / u, sm: scale / u}
            row[y] = row.get(y, 0.0) - xl / u
            row[x] = row.get(x, 0.0) - yl / u
            model.add_constraint(f"{name}_def", row, EQ, -xl * yl / u)
        else:
            model.add_constraint(f"{name}_def", {w: 1.0, sp: -1.0 / u, sm: 1.0 / u}, EQ, 0.0)
    link.aux.append(w)
    if registry is not None:
        registry.append(link)
    return w
