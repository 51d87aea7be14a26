"""Grids, scalar fields, and acoustic medium construction.

Fields are sampled at the nodes of a uniform rectangular grid; node (i, j)
sits at (x0 + i*dx, y0 + j*dy) and values are stored in an (nx, ny) array
indexed [i, j]. Builders for the sound speed, interior damping, boundary
absorption profile, and test phantoms live here, together with the smooth
cutoffs used to flatten coefficients near the domain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

EDGES = ("left", "right", "bottom", "top")


def _smoothstep(t):
    """Quintic smoothstep: 0 -> 1 with vanishing first and second derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (6.0 * t - 15.0))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigurationError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def inset(self, margin: float) -> "Rect":
        if 2 * margin >= min(self.width, self.height):
            raise ConfigurationError(
                f"inset margin {margin} swallows rectangle of size "
                f"{self.width} x {self.height}"
            )
        return Rect(
            self.x_min + margin, self.x_max - margin,
            self.y_min + margin, self.y_max - margin,
        )

    def contains(self, other: "Rect") -> bool:
        return (
            self.x_min <= other.x_min and other.x_max <= self.x_max
            and self.y_min <= other.y_min and other.y_max <= self.y_max
        )

    def strictly_contains(self, other: "Rect") -> bool:
        return (
            self.x_min < other.x_min and other.x_max < self.x_max
            and self.y_min < other.y_min and other.y_max < self.y_max
        )


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular node grid."""

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ConfigurationError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ConfigurationError(f"grid spacings must be positive, got {self.dx}, {self.dy}")

    @classmethod
    def over_box(cls, box: Rect, dx: float, dy: float | None = None) -> "Grid2D":
        """Grid covering `box` exactly with spacing dx (dy defaults to dx)."""
        dy = dx if dy is None else dy
        nx = round(box.width / dx) + 1
        ny = round(box.height / dy) + 1
        if abs((nx - 1) * dx - box.width) > 1e-9 * box.width:
            raise ConfigurationError(f"dx={dx} does not tile box width {box.width}")
        if abs((ny - 1) * dy - box.height) > 1e-9 * box.height:
            raise ConfigurationError(f"dy={dy} does not tile box height {box.height}")
        return cls(nx, ny, dx, dy, box.x_min, box.y_min)

    @property
    def bounds(self) -> Rect:
        return Rect(self.x0, self.x0 + (self.nx - 1) * self.dx,
                    self.y0, self.y0 + (self.ny - 1) * self.dy)

    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def mesh(self):
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def node_box(self, box: Rect) -> tuple[int, int, int, int]:
        """Inclusive index range (i0, i1, j0, j1) of nodes inside `box`."""
        eps = 1e-9
        i0 = int(np.ceil((box.x_min - self.x0) / self.dx - eps))
        i1 = int(np.floor((box.x_max - self.x0) / self.dx + eps))
        j0 = int(np.ceil((box.y_min - self.y0) / self.dy - eps))
        j1 = int(np.floor((box.y_max - self.y0) / self.dy + eps))
        i0, j0 = max(i0, 0), max(j0, 0)
        i1, j1 = min(i1, self.nx - 1), min(j1, self.ny - 1)
        if i1 - i0 < 2 or j1 - j0 < 2:
            raise ConfigurationError(f"box {box} covers fewer than 3x3 grid nodes")
        return i0, i1, j0, j1

    def box_mask(self, box: Rect) -> np.ndarray:
        i0, i1, j0, j1 = self.node_box(box)
        mask = np.zeros((self.nx, self.ny), dtype=bool)
        mask[i0:i1 + 1, j0:j1 + 1] = True
        return mask


@dataclass
class ScalarField2D:
    """Real-valued function sampled on a grid; values[i, j] at node (i, j)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ConfigurationError(
                f"field shape {self.values.shape} does not match grid "
                f"{(self.grid.nx, self.grid.ny)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")

    def copy(self) -> "ScalarField2D":
        return ScalarField2D(self.grid, self.values.copy())

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField2D":
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def full(cls, grid: Grid2D, value: float) -> "ScalarField2D":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))


@dataclass
class Medium:
    """Sound speed and interior damping on a common grid."""

    c: ScalarField2D
    a: ScalarField2D
    c_floor: float = 0.3

    def __post_init__(self):
        if self.a.grid != self.c.grid:
            raise ConfigurationError("sound speed and damping live on different grids")
        if self.c_floor <= 0:
            raise ConfigurationError("c_floor must be positive")
        cmin = float(self.c.values.min())
        if cmin < self.c_floor:
            raise ConfigurationError(f"sound speed dips to {cmin} below floor {self.c_floor}")
        amin = float(self.a.values.min())
        if amin < 0:
            raise ConfigurationError(f"damping is negative somewhere (min {amin})")

    @property
    def grid(self) -> Grid2D:
        return self.c.grid

    @property
    def c_max(self) -> float:
        return float(self.c.values.max())

    @classmethod
    def uniform(cls, grid: Grid2D, c: float = 1.0, a: float = 0.0) -> "Medium":
        return cls(ScalarField2D.full(grid, c), ScalarField2D.full(grid, a))


@dataclass
class BoundaryAbsorption:
    """Absorption factor lambda sampled along the boundary edges.

    Each entry maps an edge name to per-node values along that edge
    (length nx for bottom/top, ny for left/right). The observation set
    Gamma is where lambda > 0; Gamma_0 is where lambda > lambda0.
    """

    grid: Grid2D
    values: dict[str, np.ndarray] = field(default_factory=dict)
    lambda0: float = 0.5
    max_jump_per_node: float = 0.5

    def __post_init__(self):
        for edge, arr in self.values.items():
            if edge not in EDGES:
                raise ConfigurationError(f"unknown edge {edge!r}")
            arr = np.asarray(arr, dtype=np.float64)
            n = self.grid.ny if edge in ("left", "right") else self.grid.nx
            if arr.shape != (n,):
                raise ConfigurationError(f"lambda on edge {edge!r} has length {arr.shape}, expected {n}")
            if arr.min() < 0:
                raise ConfigurationError(f"lambda negative on edge {edge!r}")
            if arr.size > 1 and np.abs(np.diff(arr)).max() > self.max_jump_per_node:
                raise ConfigurationError(f"lambda jumps too sharply along edge {edge!r}")
            self.values[edge] = arr

    def on_edge(self, edge: str) -> np.ndarray:
        n = self.grid.ny if edge in ("left", "right") else self.grid.nx
        return self.values.get(edge, np.zeros(n))

    def gamma_size(self) -> int:
        return int(sum(np.count_nonzero(arr > 0) for arr in self.values.values()))


def boundary_absorption(grid: Grid2D, edges=("bottom", "right", "top"),
                        level: float = 1.0, taper: float = 0.1,
                        lambda0: float = 0.5,
                        span: Rect | None = None) -> BoundaryAbsorption:
    """Lambda profile that is `level` along the given connected edge chain,
    rolling smoothly to zero over an arclength `taper` at the two ends.

    `span` restricts the profile to the part of each edge inside that box
    (used when the grid is enlarged beyond the physical domain).
    """
    span = span or grid.bounds
    # Walk the chain bottom -> right -> top (or any subset) and lay out an
    # arclength coordinate, then taper the two ends of the chain.
    coords = {"bottom": grid.xs(), "top": grid.xs(), "left": grid.ys(), "right": grid.ys()}
    limits = {
        "bottom": (span.x_min, span.x_max), "top": (span.x_min, span.x_max),
        "left": (span.y_min, span.y_max), "right": (span.y_min, span.y_max),
    }
    order = [e for e in ("bottom", "right", "top", "left") if e in edges]
    if not order:
        raise ConfigurationError("no edges selected for boundary absorption")

    lengths, inside = {}, {}
    total = 0.0
    for e in order:
        lo, hi = limits[e]
        inside[e] = (coords[e] >= lo - 1e-12) & (coords[e] <= hi + 1e-12)
        lengths[e] = hi - lo
        total += lengths[e]
    if 2 * taper >= total:
        raise ConfigurationError(f"taper {taper} exceeds half the chain length {total}")

    def ramp(s):
        # arclength s measured from the chain start
        up = _smoothstep(s / taper) if taper > 0 else np.ones_like(s)
        down = _smoothstep((total - s) / taper) if taper > 0 else np.ones_like(s)
        return level * up * down

    values = {}
    offset = 0.0
    for e in order:
        lo, _ = limits[e]
        s_edge = np.abs(coords[e] - lo) + offset
        # traverse top edge right-to-left and left edge top-to-bottom so the
        # chain stays connected when walked bottom -> right -> top -> left
        if e == "top":
            s_edge = offset + (limits[e][1] - coords[e])
        if e == "left":
            s_edge = offset + (limits[e][1] - coords[e])
        lam = np.where(inside[e], ramp(np.clip(s_edge, 0.0, total)), 0.0)
        values[e] = np.clip(lam, 0.0, None)
        offset += lengths[e]
    return BoundaryAbsorption(grid, values, lambda0=lambda0)


@dataclass
class InitialSource:
    """Initial pair (f1, f2) supported in the rectangle `support_box`."""

    f1: ScalarField2D
    f2: ScalarField2D
    support_box: Rect

    def __post_init__(self):
        if self.f1.grid != self.f2.grid:
            raise ConfigurationError("source components live on different grids")
        outside = ~self.f1.grid.box_mask(self.support_box)
        tol = 1e-12 * max(1.0, np.abs(self.f1.values).max(), np.abs(self.f2.values).max())
        if np.abs(self.f1.values[outside]).max(initial=0.0) > tol or \
           np.abs(self.f2.values[outside]).max(initial=0.0) > tol:
            raise ConfigurationError("source does not vanish outside its support box")

    @property
    def grid(self) -> Grid2D:
        return self.f1.grid

    @classmethod
    def pat(cls, f: ScalarField2D, medium: Medium, support_box: Rect) -> "InitialSource":
        """Photoacoustic pair (f, -a f)."""
        f2 = ScalarField2D(f.grid, -medium.a.values * f.values)
        return cls(f, f2, support_box)

    @classmethod
    def zero(cls, grid: Grid2D, support_box: Rect) -> "InitialSource":
        return cls(ScalarField2D.zeros(grid), ScalarField2D.zeros(grid), support_box)


def smooth_cutoff(grid: Grid2D, inner_box: Rect, outer_box: Rect) -> ScalarField2D:
    """1 on inner_box, 0 outside outer_box, quintic smoothstep in between."""
    if not outer_box.strictly_contains(inner_box):
        raise ConfigurationError("inner box must lie strictly inside outer box")
    X, Y = grid.mesh()

    def axis_ramp(v, lo_in, hi_in, lo_out, hi_out):
        r = np.zeros_like(v)
        below = v < lo_in
        above = v > hi_in
        r[below] = (lo_in - v[below]) / (lo_in - lo_out)
        r[above] = (v[above] - hi_in) / (hi_out - hi_in)
        return np.clip(r, 0.0, 1.0)

    rx = axis_ramp(X, inner_box.x_min, inner_box.x_max, outer_box.x_min, outer_box.x_max)
    ry = axis_ramp(Y, inner_box.y_min, inner_box.y_max, outer_box.y_min, outer_box.y_max)
    r = np.maximum(rx, ry)
    return ScalarField2D(grid, 1.0 - _smoothstep(r))


def make_sound_speed(grid: Grid2D, collar_width: float = 0.0,
                     transition: float = 0.1, box: Rect | None = None) -> ScalarField2D:
    """Oscillatory sound speed, flattened to 1 on a collar near the boundary.

    c = 1 + chi * (0.2 sin(2 pi x) + 0.1 cos(2 pi y)) with chi a smooth
    cutoff equal to 1 on box shrunk by collar_width + transition and 0
    outside box shrunk by collar_width. Values stay within [0.7, 1.3].
    """
    box = box or grid.bounds
    if collar_width < 0 or transition <= 0:
        raise ConfigurationError("collar_width must be >= 0 and transition > 0")
    if 2 * (collar_width + transition) >= min(box.width, box.height):
        raise ConfigurationError(
            f"collar {collar_width} + transition {transition} too wide for box"
        )
    outer = box.inset(collar_width) if collar_width > 0 else box
    inner = outer.inset(transition)
    chi = smooth_cutoff(grid, inner, outer)
    X, Y = grid.mesh()
    bump = 0.2 * np.sin(2 * np.pi * X) + 0.1 * np.cos(2 * np.pi * Y)
    return ScalarField2D(grid, 1.0 + chi.values * bump)


def make_damping(grid: Grid2D, kind: str, c: ScalarField2D | None = None,
                 collar_width: float = 0.0, transition: float = 0.1,
                 box: Rect | None = None) -> ScalarField2D:
    """Interior damping profile, compactly supported away from the collar.

    kind "linear": 0.5 (x + 1); kind "speed_proportional": 2 c(x, y).
    Either is multiplied by a smooth cutoff vanishing on the collar.
    """
    box = box or grid.bounds
    outer = box.inset(collar_width) if collar_width > 0 else box
    inner = outer.inset(transition)
    chi = smooth_cutoff(grid, inner, outer)
    if kind == "linear":
        X, _ = grid.mesh()
        raw = 0.5 * (X + 1.0)
    elif kind == "speed_proportional":
        if c is None:
            raise ConfigurationError("speed_proportional damping needs the sound speed")
        if c.grid != grid:
            raise ConfigurationError("sound speed grid mismatch")
        raw = 2.0 * c.values
    elif kind == "none":
        raw = np.zeros((grid.nx, grid.ny))
    else:
        raise ConfigurationError(f"unknown damping kind {kind!r}")
    return ScalarField2D(grid, chi.values * raw)


# Canonical head phantom: (cx, cy, semi_x, semi_y, angle_deg, intensity).
_PHANTOM_ELLIPSES = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
)


def shepp_logan(grid: Grid2D, center=(0.0, 0.0), scale: float = 1.0) -> ScalarField2D:
    """Classic ten-ellipse head phantom mapped by center and scale."""
    if scale <= 0:
        raise ConfigurationError("phantom scale must be positive")
    X, Y = grid.mesh()
    u = (X - center[0]) / scale
    v = (Y - center[1]) / scale
    out = np.zeros_like(u)
    for cx, cy, ax, ay, ang, val in _PHANTOM_ELLIPSES:
        th = np.deg2rad(ang)
        ct, st = np.cos(th), np.sin(th)
        xr = (u - cx) * ct + (v - cy) * st
        yr = -(u - cx) * st + (v - cy) * ct
        out[(xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0] += val
    return ScalarField2D(grid, out)


def gaussian_smooth(f: ScalarField2D, sigma: float) -> ScalarField2D:
    """Gaussian blur with standard deviation `sigma` in length units."""
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    if sigma == 0:
        return f.copy()
    g = f.grid
    sm = ndimage.gaussian_filter(f.values, sigma=(sigma / g.dx, sigma / g.dy),
                                 mode="constant", cval=0.0)
    return ScalarField2D(g, sm)


def gaussian_bump(grid: Grid2D, center, sigma: float, amplitude: float = 1.0) -> ScalarField2D:
    """Isotropic Gaussian bump, handy as a smooth test source."""
    X, Y = grid.mesh()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return ScalarField2D(grid, amplitude * np.exp(-0.5 * r2 / sigma ** 2))
