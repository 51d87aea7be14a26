"""Leapfrog time stepping for the damped acoustic wave equation.

Advances u_tt - c^2 Lap(u) + s*a(x) u_t = 0 (s = +/-1) with second-order
leapfrog in time and a 5-point (order 2) or 9-point cross (order 4)
Laplacian. Boundary closures:

  robin          dn(u) + lambda u_t = g via ghost elimination; the time
                 derivative is centered, which keeps the update explicit
                 and folds lambda into a boundary damping lump.
  neumann        dn(u) = g (even-reflection ghosts, g = 0 by default).
  dirichlet      u pinned to driven values (zero by default).
  pml            split-field absorbing strip: u_t is split into px + py
                 which relax against gradient components wx, wy under a
                 cubic damping profile; the strip shares its interface
                 line with the leapfrog region.

Backward (time-reversed) integration is expressed as forward stepping in
s = T - t, which flips the sign of the damping term and reverses any
boundary drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError
from .media import EDGES, Grid2D, InitialSource, Medium, Rect, ScalarField2D
from .records import ObservationRecord


@dataclass(frozen=True)
class Robin:
    lam: object = 0.0  # scalar or per-node array along the edge

    def lam_array(self, n: int) -> np.ndarray:
        arr = np.broadcast_to(np.asarray(self.lam, dtype=np.float64), (n,))
        if arr.min() < 0:
            raise ConfigurationError("robin lambda must be non-negative")
        return np.array(arr)


@dataclass(frozen=True)
class Pml:
    thickness: int = 10          # nodes
    sigma_max: float | None = None
    profile_order: int = 3

    def __post_init__(self):
        if self.thickness < 4:
            raise ConfigurationError("pml needs at least 4 node layers")


@dataclass(frozen=True)
class Neumann:
    pass


@dataclass(frozen=True)
class DirichletZero:
    pass


@dataclass(frozen=True)
class BoundarySpec:
    """One condition per grid edge, plus an optional virtual observation
    rectangle for transparent-boundary recording."""

    left: object = Neumann()
    right: object = Neumann()
    bottom: object = Neumann()
    top: object = Neumann()
    obs_rect: Rect | None = None

    def edge(self, name: str):
        return getattr(self, name)

    def edges(self) -> dict:
        return {e: self.edge(e) for e in EDGES}

    @property
    def has_pml(self) -> bool:
        return any(isinstance(c, Pml) for c in self.edges().values())

    def pml_thickness(self, name: str) -> int:
        cond = self.edge(name)
        return cond.thickness if isinstance(cond, Pml) else 0

    @classmethod
    def all_edges(cls, cond, obs_rect: Rect | None = None) -> "BoundarySpec":
        return cls(cond, cond, cond, cond, obs_rect=obs_rect)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    n_steps: int
    order: int = 2
    courant: float = 0.3

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ConfigurationError(f"spatial order must be 2 or 4, got {self.order}")
        if self.dt <= 0 or self.n_steps < 1:
            raise ConfigurationError("need dt > 0 and n_steps >= 1")
        if not 0 < self.courant <= 1:
            raise ConfigurationError("courant factor must lie in (0, 1]")

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def for_time(cls, grid: Grid2D, c, T: float, order: int = 2,
                 courant: float = 0.3) -> "SolverConfig":
        dt0 = cfl_dt(grid, c, courant)
        n = max(1, math.ceil(T / dt0 - 1e-12))
        return cls(dt=T / n, n_steps=n, order=order, courant=courant)


def cfl_dt(grid: Grid2D, c, courant: float = 0.3) -> float:
    """Largest stable step: courant * dx / (sqrt(2) max c). Requires dx == dy."""
    if not 0 < courant <= 1:
        raise ConfigurationError("courant factor must lie in (0, 1]")
    if abs(grid.dx - grid.dy) > 1e-12 * grid.dx:
        raise ConfigurationError("anisotropic grids are not supported (dx != dy)")
    cmax = float(np.max(c.values if isinstance(c, ScalarField2D) else c))
    if cmax <= 0:
        raise ConfigurationError("sound speed must be positive")
    return courant * grid.dx / (math.sqrt(2.0) * cmax)


@dataclass
class WaveState:
    """Leapfrog pair (u, u_prev) at time t; u_t is (u - u_prev) / dt."""

    u: ScalarField2D
    u_prev: ScalarField2D
    t: float
    dt: float

    def __post_init__(self):
        if self.u.grid != self.u_prev.grid:
            raise ConfigurationError("state fields live on different grids")

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    @property
    def ut(self) -> np.ndarray:
        return (self.u.values - self.u_prev.values) / self.dt

    @classmethod
    def from_source(cls, f: InitialSource, dt: float) -> "WaveState":
        u = f.f1.copy()
        u_prev = ScalarField2D(f.grid, f.f1.values - dt * f.f2.values)
        return cls(u, u_prev, 0.0, dt)

    @classmethod
    def from_fields(cls, u: np.ndarray, ut: np.ndarray, grid: Grid2D,
                    dt: float, t: float = 0.0) -> "WaveState":
        return cls(ScalarField2D(grid, u.copy()),
                   ScalarField2D(grid, u - dt * ut), t, dt)


@dataclass
class DriveSpec:
    """Boundary drive derived from an observation record.

    kind "neumann_flux": dn(u) = values at the record nodes (robin-style
    back-projection data). kind "dirichlet": u pinned to values at the
    record nodes. values has shape (n_levels, n_nodes); level k drives
    the field at time k*dt of the run that consumes it.
    """

    kind: str
    nodes_ij: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("neumann_flux", "dirichlet"):
            raise ConfigurationError(f"unknown drive kind {self.kind!r}")


@dataclass
class RunResult:
    state: WaveState
    record: ObservationRecord | None = None
    energies: np.ndarray | None = None      # E(region) per level
    dissipated: np.ndarray | None = None    # 2 * int_0^t int a c^-2 u_t^2, per level


def _trap_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


class _Stepper:
    """Precomputed update machinery for one (medium, bc, cfg, sign) tuple."""

    def __init__(self, medium: Medium, bc: BoundarySpec, cfg: SolverConfig, sign_a: int):
        grid = medium.grid
        nx, ny, dx, dy, dt = grid.nx, grid.ny, grid.dx, grid.dy, cfg.dt
        self.grid, self.bc, self.cfg = grid, bc, cfg
        self.dt, self.dx, self.dy = dt, dx, dy
        self.cc = medium.c.values ** 2
        self.order = cfg.order

        limit = cfl_dt(grid, medium.c, cfg.courant)
        if cfg.dt > limit * (1 + 1e-9):
            raise ConfigurationError(
                f"dt = {cfg.dt:.6e} violates the CFL bound {limit:.6e} "
                f"(courant {cfg.courant})")

        # pml strip extents; interior (leapfrog) region is [li:ri) x [bj:tj)
        self.tl = bc.pml_thickness("left")
        self.tr = bc.pml_thickness("right")
        self.tb = bc.pml_thickness("bottom")
        self.tt = bc.pml_thickness("top")
        self.li, self.ri = self.tl, nx - self.tr
        self.bj, self.tj = self.tb, ny - self.tt
        if self.ri - self.li < 3 or self.tj - self.bj < 3:
            raise ConfigurationError("pml strips leave fewer than 3 interior lines")
        self._check_collar(medium)

        # damping lump: interior a-term plus robin boundary terms
        mu = sign_a * medium.a.values * (dt / 2.0)
        self.robin_edges = {}
        for e, cond in bc.edges().items():
            if not isinstance(cond, Robin):
                continue
            if e in ("left", "right"):
                n_t, h = ny, dx
                line = (0, slice(self.bj, self.tj)) if e == "left" \
                    else (nx - 1, slice(self.bj, self.tj))
                active = slice(self.bj, self.tj)
            else:
                n_t, h = nx, dy
                line = (slice(self.li, self.ri), 0) if e == "bottom" \
                    else (slice(self.li, self.ri), ny - 1)
                active = slice(self.li, self.ri)
            if self.pml_adjacent_to(e):
                # the edge line exists only outside the strips; lam beyond
                # the interior range is ignored (strip side walls reflect)
                pass
            lam = cond.lam_array(n_t)[active]
            mu[line] += self.cc[line] * lam * dt / h
            self.robin_edges[e] = (line, active, h)
        self.denom = 1.0 + mu
        self.num_prev = 1.0 - mu

        self.dirichlet_edges = {}
        for e, cond in bc.edges().items():
            if isinstance(cond, DirichletZero):
                if e in ("left", "right"):
                    line = (0 if e == "left" else nx - 1, slice(None))
                else:
                    line = (slice(None), 0 if e == "bottom" else ny - 1)
                self.dirichlet_edges[e] = line

        self.pad = np.zeros((nx + 4, ny + 4))
        self._needs_l2_lines = cfg.order == 4 and bool(self.robin_edges)

        if bc.has_pml:
            self._init_pml(medium, bc, dt)

    def pml_adjacent_to(self, edge: str) -> bool:
        if edge in ("left", "right"):
            return self.tb > 0 or self.tt > 0
        return self.tl > 0 or self.tr > 0

    def _check_collar(self, medium: Medium):
        strips = []
        if self.tl:
            strips.append(np.s_[0:self.li + 1, :])
        if self.tr:
            strips.append(np.s_[self.ri - 1:, :])
        if self.tb:
            strips.append(np.s_[:, 0:self.bj + 1])
        if self.tt:
            strips.append(np.s_[:, self.tj - 1:])
        for s in strips:
            if np.abs(medium.c.values[s] - 1.0).max(initial=0.0) > 1e-9:
                raise ConfigurationError("sound speed must equal 1 on pml strips")
            if np.abs(medium.a.values[s]).max(initial=0.0) > 1e-9:
                raise ConfigurationError("damping must vanish on pml strips")

    def _init_pml(self, medium: Medium, bc: BoundarySpec, dt: float):
        grid = self.grid
        nx, ny = grid.nx, grid.ny
        cmax = medium.c_max
        sigma_x = np.zeros(nx)
        sigma_y = np.zeros(ny)

        def smax_for(cond: Pml, h: float) -> float:
            delta = cond.thickness * h
            return cond.sigma_max if cond.sigma_max is not None \
                else 8.0 * cmax * math.log(10.0) / delta

        if self.tl:
            cond = bc.edge("left")
            s = smax_for(cond, grid.dx)
            depth = (self.tl - np.arange(self.tl)) / self.tl
            sigma_x[:self.tl] = s * depth ** cond.profile_order
        if self.tr:
            cond = bc.edge("right")
            s = smax_for(cond, grid.dx)
            depth = (np.arange(1, self.tr + 1)) / self.tr
            sigma_x[self.ri:] = s * depth ** cond.profile_order
        if self.tb:
            cond = bc.edge("bottom")
            s = smax_for(cond, grid.dy)
            depth = (self.tb - np.arange(self.tb)) / self.tb
            sigma_y[:self.tb] = s * depth ** cond.profile_order
        if self.tt:
            cond = bc.edge("top")
            s = smax_for(cond, grid.dy)
            depth = (np.arange(1, self.tt + 1)) / self.tt
            sigma_y[self.tj:] = s * depth ** cond.profile_order

        sx = sigma_x[:, None]
        sy = sigma_y[None, :]
        self.Ax = np.broadcast_to((1 - sx * dt / 2) / (1 + sx * dt / 2), (nx, ny))
        self.Bx = np.broadcast_to((dt / (1 + sx * dt / 2)), (nx, ny))
        self.Ay = np.broadcast_to((1 - sy * dt / 2) / (1 + sy * dt / 2), (nx, ny))
        self.By = np.broadcast_to((dt / (1 + sy * dt / 2)), (nx, ny))
        self.px = np.zeros((nx, ny))
        self.py = np.zeros((nx, ny))
        self.wx = np.zeros((nx, ny))
        self.wy = np.zeros((nx, ny))
        self.strips = []
        if self.tl:
            self.strips.append(np.s_[0:self.li, :])
        if self.tr:
            self.strips.append(np.s_[self.ri:, :])
        if self.tb:
            self.strips.append(np.s_[self.li:self.ri, 0:self.bj])
        if self.tt:
            self.strips.append(np.s_[self.li:self.ri, self.tj:])
        self.walls = []
        if self.tl:
            self.walls.append(np.s_[0, :])
        if self.tr:
            self.walls.append(np.s_[-1, :])
        if self.tb:
            self.walls.append(np.s_[:, 0])
        if self.tt:
            self.walls.append(np.s_[:, -1])

    # -- spatial operators ------------------------------------------------

    def _fill_pad(self, u: np.ndarray):
        pad = self.pad
        pad[2:-2, 2:-2] = u
        left, right = self.bc.edge("left"), self.bc.edge("right")
        bottom, top = self.bc.edge("bottom"), self.bc.edge("top")
        # x ghosts from u, then y ghosts from pad so corners compose
        if isinstance(left, (Robin, Neumann)):
            pad[1, 2:-2] = u[1, :]
            pad[0, 2:-2] = u[2, :]
        else:  # dirichlet or pml wall: odd reflection about the edge line
            pad[1, 2:-2] = 2 * u[0, :] - u[1, :]
            pad[0, 2:-2] = 2 * u[0, :] - u[2, :]
        if isinstance(right, (Robin, Neumann)):
            pad[-2, 2:-2] = u[-2, :]
            pad[-1, 2:-2] = u[-3, :]
        else:
            pad[-2, 2:-2] = 2 * u[-1, :] - u[-2, :]
            pad[-1, 2:-2] = 2 * u[-1, :] - u[-3, :]
        if isinstance(bottom, (Robin, Neumann)):
            pad[:, 1] = pad[:, 3]
            pad[:, 0] = pad[:, 4]
        else:
            pad[:, 1] = 2 * pad[:, 2] - pad[:, 3]
            pad[:, 0] = 2 * pad[:, 2] - pad[:, 4]
        if isinstance(top, (Robin, Neumann)):
            pad[:, -2] = pad[:, -4]
            pad[:, -1] = pad[:, -5]
        else:
            pad[:, -2] = 2 * pad[:, -3] - pad[:, -4]
            pad[:, -1] = 2 * pad[:, -3] - pad[:, -5]

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        self._fill_pad(u)
        pad = self.pad
        idx2, idy2 = 1.0 / self.dx ** 2, 1.0 / self.dy ** 2
        if self.order == 2:
            return ((pad[3:-1, 2:-2] - 2 * u + pad[1:-3, 2:-2]) * idx2
                    + (pad[2:-2, 3:-1] - 2 * u + pad[2:-2, 1:-3]) * idy2)
        lap = ((-pad[4:, 2:-2] + 16 * pad[3:-1, 2:-2] - 30 * u
                + 16 * pad[1:-3, 2:-2] - pad[0:-4, 2:-2]) * (idx2 / 12.0)
               + (-pad[2:-2, 4:] + 16 * pad[2:-2, 3:-1] - 30 * u
                  + 16 * pad[2:-2, 1:-3] - pad[2:-2, 0:-4]) * (idy2 / 12.0))
        if self._needs_l2_lines:
            # robin flux lumps assume the order-2 normal closure on the
            # boundary line itself; drop those lines to the 5-point stencil
            l2 = ((pad[3:-1, 2:-2] - 2 * u + pad[1:-3, 2:-2]) * idx2
                  + (pad[2:-2, 3:-1] - 2 * u + pad[2:-2, 1:-3]) * idy2)
            for line, _, _ in self.robin_edges.values():
                lap[line] = l2[line]
        return lap

    # -- time stepping ----------------------------------------------------

    def step(self, u: np.ndarray, u_prev: np.ndarray,
             robin_g: dict[str, np.ndarray] | None = None,
             dirichlet_vals: dict | None = None,
             source: np.ndarray | None = None) -> np.ndarray:
        """One leapfrog step; returns the next level. `robin_g` maps edge
        name -> flux values g on the active part of that edge (dn(u) terms),
        `dirichlet_vals` maps edge name -> pinned values for the next level,
        `source` is an interior forcing field F in u_tt + ... = c^2 Lap + F."""
        dt, dt2 = self.dt, self.dt ** 2
        if self.bc.has_pml:
            self._set_interface_gradients(u)
        rhs = self.cc * self.laplacian(u)
        if source is not None:
            rhs = rhs + source
        num = 2.0 * u - self.num_prev * u_prev + dt2 * rhs
        if robin_g:
            for e, g in robin_g.items():
                line, active, h = self.robin_edges[e]
                num[line] += self.cc[line] * (2.0 * dt2 / h) * g
        u_next = num / self.denom
        if self.dirichlet_edges:
            for e, line in self.dirichlet_edges.items():
                vals = 0.0
                if dirichlet_vals and e in dirichlet_vals:
                    vals = dirichlet_vals[e]
                u_next[line] = vals
        if self.bc.has_pml:
            self._step_pml(u, u_next)
        return u_next

    def _set_interface_gradients(self, u: np.ndarray):
        dx, dy = self.dx, self.dy
        if self.tl:
            self.wx[self.li, :] = (u[self.li + 1, :] - u[self.li - 1, :]) / (2 * dx)
        if self.tr:
            self.wx[self.ri - 1, :] = (u[self.ri, :] - u[self.ri - 2, :]) / (2 * dx)
        if self.tb:
            self.wy[self.li:self.ri, self.bj] = (
                u[self.li:self.ri, self.bj + 1] - u[self.li:self.ri, self.bj - 1]) / (2 * dy)
        if self.tt:
            self.wy[self.li:self.ri, self.tj - 1] = (
                u[self.li:self.ri, self.tj] - u[self.li:self.ri, self.tj - 2]) / (2 * dy)

    def _centered_x(self, f: np.ndarray, odd_walls: bool) -> np.ndarray:
        out = np.zeros_like(f)
        out[1:-1, :] = (f[2:, :] - f[:-2, :]) / (2 * self.dx)
        if odd_walls:
            out[0, :] = f[1, :] / self.dx
            out[-1, :] = -f[-2, :] / self.dx
        return out

    def _centered_y(self, f: np.ndarray, odd_walls: bool) -> np.ndarray:
        out = np.zeros_like(f)
        out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * self.dy)
        if odd_walls:
            out[:, 0] = f[:, 1] / self.dy
            out[:, -1] = -f[:, -2] / self.dy
        return out

    def _step_pml(self, u: np.ndarray, u_next: np.ndarray):
        dt = self.dt
        dxwx = self._centered_x(self.wx, odd_walls=True)
        dywy = self._centered_y(self.wy, odd_walls=True)
        for s in self.strips:
            self.px[s] = self.Ax[s] * self.px[s] + self.Bx[s] * self.cc[s] * dxwx[s]
            self.py[s] = self.Ay[s] * self.py[s] + self.By[s] * self.cc[s] * dywy[s]
            u_next[s] = u[s] + dt * (self.px[s] + self.py[s])
        p_half = np.zeros_like(u)
        for s in self.strips:
            p_half[s] = self.px[s] + self.py[s]
        if self.tl:
            p_half[self.li, :] = (u_next[self.li, :] - u[self.li, :]) / dt
        if self.tr:
            p_half[self.ri - 1, :] = (u_next[self.ri - 1, :] - u[self.ri - 1, :]) / dt
        if self.tb:
            p_half[self.li:self.ri, self.bj] = (
                u_next[self.li:self.ri, self.bj] - u[self.li:self.ri, self.bj]) / dt
        if self.tt:
            p_half[self.li:self.ri, self.tj - 1] = (
                u_next[self.li:self.ri, self.tj - 1] - u[self.li:self.ri, self.tj - 1]) / dt
        dxp = self._centered_x(p_half, odd_walls=False)
        dyp = self._centered_y(p_half, odd_walls=False)
        for s in self.strips:
            self.wx[s] = self.Ax[s] * self.wx[s] + self.Bx[s] * dxp[s]
            self.wy[s] = self.Ay[s] * self.wy[s] + self.By[s] * dyp[s]
        for wline in self.walls:
            u_next[wline] = 0.0
            for f in (self.px, self.py, self.wx, self.wy):
                f[wline] = 0.0


def taylor_start(f: InitialSource, medium: Medium, bc: BoundarySpec,
                 cfg: SolverConfig, sign_a: int) -> WaveState:
    """Second-order accurate leapfrog start from (f1, f2)."""
    stepper = _Stepper(medium, bc, cfg, sign_a)
    lap = stepper.laplacian(f.f1.values)
    utt0 = medium.c.values ** 2 * lap - sign_a * medium.a.values * f.f2.values
    u_prev = f.f1.values - cfg.dt * f.f2.values + 0.5 * cfg.dt ** 2 * utt0
    return WaveState(f.f1.copy(), ScalarField2D(f.grid, u_prev), 0.0, cfg.dt)


def step_forward(state: WaveState, medium: Medium, bc: BoundarySpec,
                 cfg: SolverConfig, sign_a: int = 1) -> WaveState:
    """Advance one level of u_tt - c^2 Lap(u) + sign_a a u_t = 0."""
    stepper = _Stepper(medium, bc, cfg, sign_a)
    u_next = stepper.step(state.u.values, state.u_prev.values)
    if not np.all(np.isfinite(u_next)):
        raise NumericalBlowupError(0)
    return WaveState(ScalarField2D(state.grid, u_next), state.u,
                     state.t + cfg.dt, cfg.dt)


def gamma_record_nodes(grid: Grid2D, bc: BoundarySpec,
                       absorption=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Observation nodes on robin edges where lambda > 0.

    Returns (nodes_ij, coords, weights, lam); weights are trapezoid
    arclength weights along the boundary polyline, corner nodes counted
    once with the averaged spacing of their two edges.
    """
    nx, ny = grid.nx, grid.ny
    tl, tr = bc.pml_thickness("left"), bc.pml_thickness("right")
    tb, tt = bc.pml_thickness("bottom"), bc.pml_thickness("top")
    xs, ys = grid.xs(), grid.ys()
    lam_of: dict[tuple[int, int], float] = {}
    w_of: dict[tuple[int, int], float] = {}

    def visit(ij, lam, w):
        if lam <= 0:
            return
        if ij in lam_of:
            w_of[ij] += w
        else:
            lam_of[ij] = lam
            w_of[ij] = w

    for e, cond in bc.edges().items():
        if not isinstance(cond, Robin):
            continue
        if e in ("left", "right"):
            lam = cond.lam_array(ny)
            i = 0 if e == "left" else nx - 1
            j_lo, j_hi = tb, ny - tt - 1
            for j in range(j_lo, j_hi + 1):
                w = grid.dy if j_lo < j < j_hi else grid.dy / 2
                visit((i, j), lam[j], w)
        else:
            lam = cond.lam_array(nx)
            j = 0 if e == "bottom" else ny - 1
            i_lo, i_hi = tl, nx - tr - 1
            for i in range(i_lo, i_hi + 1):
                w = grid.dx if i_lo < i < i_hi else grid.dx / 2
                visit((i, j), lam[i], w)
    if not lam_of:
        raise ConfigurationError("no robin nodes with lambda > 0: Gamma is empty")
    nodes = np.array(sorted(lam_of.keys()), dtype=np.int64)
    coords = np.column_stack([xs[nodes[:, 0]], ys[nodes[:, 1]]])
    weights = np.array([w_of[tuple(ij)] for ij in nodes])
    lam = np.array([lam_of[tuple(ij)] for ij in nodes])
    return nodes, coords, weights, lam


def ring_record_nodes(grid: Grid2D, rect: Rect):
    """Observation nodes on the closed rectangle ring (virtual detectors)."""
    i0, i1, j0, j1 = grid.node_box(rect)
    xs, ys = grid.xs(), grid.ys()
    nodes = []
    for i in range(i0, i1 + 1):
        nodes.append((i, j0))
    for j in range(j0 + 1, j1 + 1):
        nodes.append((i1, j))
    for i in range(i1 - 1, i0 - 1, -1):
        nodes.append((i, j1))
    for j in range(j1 - 1, j0, -1):
        nodes.append((i0, j))
    nodes = np.array(nodes, dtype=np.int64)
    coords = np.column_stack([xs[nodes[:, 0]], ys[nodes[:, 1]]])
    corner = ((nodes[:, 0] == i0) | (nodes[:, 0] == i1)) & \
             ((nodes[:, 1] == j0) | (nodes[:, 1] == j1))
    weights = np.where(corner, (grid.dx + grid.dy) / 2,
                       np.where((nodes[:, 1] == j0) | (nodes[:, 1] == j1),
                                grid.dx, grid.dy))
    return nodes, coords, weights, None


def _drive_tables(drive: DriveSpec, stepper: _Stepper):
    """Split per-node drive values into per-edge scatter tables."""
    grid = stepper.grid
    nx, ny = grid.nx, grid.ny
    tables = []
    ij = drive.nodes_ij
    if drive.kind == "neumann_flux":
        for e, (line, active, h) in stepper.robin_edges.items():
            if e == "left":
                on = ij[:, 0] == 0
            elif e == "right":
                on = ij[:, 0] == nx - 1
            elif e == "bottom":
                on = ij[:, 1] == 0
            else:
                on = ij[:, 1] == ny - 1
            rec_idx = np.nonzero(on)[0]
            if rec_idx.size == 0:
                continue
            tang = ij[rec_idx, 1] if e in ("left", "right") else ij[rec_idx, 0]
            offset = active.start
            tables.append((e, rec_idx, tang - offset, active.stop - active.start))
    else:
        for e, line in stepper.dirichlet_edges.items():
            if e == "left":
                on = ij[:, 0] == 0
            elif e == "right":
                on = ij[:, 0] == nx - 1
            elif e == "bottom":
                on = ij[:, 1] == 0
            else:
                on = ij[:, 1] == ny - 1
            rec_idx = np.nonzero(on)[0]
            if rec_idx.size == 0:
                continue
            tang = ij[rec_idx, 1] if e in ("left", "right") else ij[rec_idx, 0]
            n_line = ny if e in ("left", "right") else nx
            tables.append((e, rec_idx, tang, n_line))
    return tables


def run(medium: Medium, bc: BoundarySpec, cfg: SolverConfig,
        source: InitialSource | None = None,
        initial_state: WaveState | None = None,
        sign_a: int = 1,
        reverse: bool = False,
        record_on: str | None = None,
        drive: DriveSpec | None = None,
        forcing: list[np.ndarray] | None = None,
        diagnostics_region: Rect | None = None,
        snapshot_every: int = 0,
        snapshot_sink=None) -> RunResult:
    """Full time loop over cfg.n_steps levels.

    Forward runs start from `source` (or an explicit state). With
    reverse=True the loop integrates the equation with damping sign
    `sign_a` backward from t = T to 0, implemented as forward stepping in
    s = T - t; drive tables are then consumed in reversed order and the
    returned state reports the physical u_t at t = 0.

    record_on: "gamma" records the trace on robin lambda > 0 nodes,
    "ring" on bc.obs_rect. forcing, when given, supplies the interior
    source field per level (levels of the run's own time variable).
    """
    if (source is None) == (initial_state is None):
        raise ConfigurationError("provide exactly one of source / initial_state")
    sign_eff = -sign_a if reverse else sign_a
    stepper = _Stepper(medium, bc, cfg, sign_eff)
    grid = medium.grid
    dt, n_steps = cfg.dt, cfg.n_steps

    if source is not None:
        state0 = taylor_start(source, medium, bc, cfg, sign_eff)
        ut0 = source.f2.values
    else:
        if initial_state.grid != grid:
            raise ConfigurationError("initial state grid mismatch")
        state0 = initial_state
        ut0 = state0.ut

    rec_nodes = rec_coords = rec_weights = rec_lam = None
    rec_samples = None
    if record_on == "gamma":
        rec_nodes, rec_coords, rec_weights, rec_lam = gamma_record_nodes(grid, bc)
    elif record_on == "ring":
        if bc.obs_rect is None:
            raise ConfigurationError("record_on='ring' needs bc.obs_rect")
        rec_nodes, rec_coords, rec_weights, rec_lam = ring_record_nodes(grid, bc.obs_rect)
    elif record_on is not None:
        raise ConfigurationError(f"unknown record_on {record_on!r}")
    if rec_nodes is not None:
        rec_samples = np.empty((n_steps + 1, rec_nodes.shape[0]))

    tables = None
    if drive is not None:
        n_levels = drive.values.shape[0]
        if n_levels != n_steps + 1:
            raise ConfigurationError(
                f"drive has {n_levels} levels but the run needs {n_steps + 1}")
        tables = _drive_tables(drive, stepper)

    def drive_args(level: int):
        if tables is None:
            return None, None
        k = n_steps - level if reverse else level
        k = min(max(k, 0), n_steps)
        robin_g, diri = None, None
        if drive.kind == "neumann_flux":
            robin_g = {}
            for e, rec_idx, tang, n_line in tables:
                g = np.zeros(n_line)
                g[tang] = drive.values[k, rec_idx]
                robin_g[e] = g
        else:
            diri = {}
            for e, rec_idx, tang, n_line in tables:
                v = np.zeros(n_line)
                v[tang] = drive.values[k, rec_idx]
                diri[e] = v
        return robin_g, diri

    if forcing is not None and len(forcing) < n_steps:
        raise ConfigurationError("forcing must supply one field per step")

    track = diagnostics_region is not None
    if track:
        i0, i1, j0, j1 = grid.node_box(diagnostics_region)
        box = np.s_[i0:i1 + 1, j0:j1 + 1]
        wts = np.outer(_trap_weights(i1 - i0 + 1), _trap_weights(j1 - j0 + 1)) \
            * grid.dx * grid.dy
        inv_c2 = 1.0 / medium.c.values[box] ** 2
        a_box = medium.a.values[box]

        def grad_sq(u_box):
            gx, gy = np.gradient(u_box, grid.dx, grid.dy)
            return gx ** 2 + gy ** 2

        energies = np.empty(n_steps + 1)
        dissipated = np.zeros(n_steps + 1)
        energies[0] = float(np.sum((grad_sq(state0.u.values[box])
                                    + inv_c2 * ut0[box] ** 2) * wts))

    u = state0.u.values.copy()
    u_prev = state0.u_prev.values.copy()
    if rec_samples is not None:
        rec_samples[0] = u[rec_nodes[:, 0], rec_nodes[:, 1]]
    if snapshot_every and snapshot_sink is not None:
        snapshot_sink(0, ScalarField2D(grid, u.copy()))

    u_before = None  # level n-1 for centered diagnostics
    for n in range(n_steps):
        robin_g, diri = drive_args(n)
        fsrc = forcing[n] if forcing is not None else None
        u_next = stepper.step(u, u_prev, robin_g, diri, fsrc)
        if (n + 1) % 25 == 0 or n + 1 == n_steps:
            m = float(np.abs(u_next).max())
            if not math.isfinite(m) or m > 1e12:
                raise NumericalBlowupError(n + 1)
        if track:
            ut_half = (u_next - u) / dt
            d_half = float(np.sum(a_box * inv_c2 * ut_half[box] ** 2 * wts))
            dissipated[n + 1] = dissipated[n] + 2.0 * d_half * dt
            if n >= 1:
                ut_c = (u_next - u_before) / (2 * dt)
                energies[n] = float(np.sum((grad_sq(u[box]) + inv_c2 * ut_c[box] ** 2) * wts))
        u_before = u
        u_prev, u = u, u_next
        if rec_samples is not None:
            rec_samples[n + 1] = u[rec_nodes[:, 0], rec_nodes[:, 1]]
        if snapshot_every and snapshot_sink is not None and (n + 1) % snapshot_every == 0:
            snapshot_sink(n + 1, ScalarField2D(grid, u.copy()))

    # one extra step to form a centered u_t at the final level
    robin_g, diri = drive_args(n_steps)
    u_extra = stepper.step(u, u_prev, robin_g, diri,
                           forcing[n_steps] if forcing is not None
                           and len(forcing) > n_steps else None)
    ut_final = (u_extra - u_prev) / (2 * dt)
    if track:
        energies[n_steps] = float(np.sum((grad_sq(u[box])
                                          + inv_c2 * ut_final[box] ** 2) * wts))

    if reverse:
        # state reports physical time t = 0 and u_t = -d/ds u
        final = WaveState.from_fields(u, -ut_final, grid, dt, t=0.0)
    else:
        final = WaveState.from_fields(u, ut_final, grid, dt, t=n_steps * dt)

    record = None
    if rec_samples is not None:
        record = ObservationRecord(rec_nodes, rec_coords, rec_weights, dt,
                                   rec_samples, lam=rec_lam)
    return RunResult(final, record,
                     energies if track else None,
                     dissipated if track else None)


# -- energy diagnostics ----------------------------------------------------

def _region_box(grid: Grid2D, region: Rect | None):
    if region is None:
        return np.s_[:, :], np.outer(_trap_weights(grid.nx), _trap_weights(grid.ny)) \
            * grid.dx * grid.dy
    i0, i1, j0, j1 = grid.node_box(region)
    box = np.s_[i0:i1 + 1, j0:j1 + 1]
    wts = np.outer(_trap_weights(i1 - i0 + 1), _trap_weights(j1 - j0 + 1)) \
        * grid.dx * grid.dy
    return box, wts


def energy(state: WaveState, medium: Medium, region: Rect | None = None) -> float:
    """E = int |grad u|^2 + c^-2 |u_t|^2 over the region (trapezoid rule)."""
    grid = state.grid
    box, wts = _region_box(grid, region)
    u_box = state.u.values[box]
    gx, gy = np.gradient(u_box, grid.dx, grid.dy)
    ut = state.ut[box]
    inv_c2 = 1.0 / medium.c.values[box] ** 2
    return float(np.sum((gx ** 2 + gy ** 2 + inv_c2 * ut ** 2) * wts))


def pair_energy(f1: np.ndarray, f2: np.ndarray, medium: Medium,
                region: Rect | None = None) -> float:
    """Energy of a raw (u, u_t) pair of arrays."""
    grid = medium.grid
    box, wts = _region_box(grid, region)
    gx, gy = np.gradient(f1[box], grid.dx, grid.dy)
    inv_c2 = 1.0 / medium.c.values[box] ** 2
    return float(np.sum((gx ** 2 + gy ** 2 + inv_c2 * f2[box] ** 2) * wts))


def extended_energy(state: WaveState, ut_history: list[np.ndarray],
                    medium: Medium, region: Rect | None, dt: float) -> float:
    """E at the state's time plus 2 int_0^t int a c^-2 |u_t|^2 (trapezoid)."""
    grid = medium.grid
    box, wts = _region_box(grid, region)
    inv_c2 = 1.0 / medium.c.values[box] ** 2
    a_box = medium.a.values[box]
    vals = np.array([np.sum(a_box * inv_c2 * ut[box] ** 2 * wts) for ut in ut_history])
    integral = float(np.trapz(vals, dx=dt)) if len(vals) > 1 else 0.0
    return energy(state, medium, region) + 2.0 * integral


def boundary_flux(record: ObservationRecord, lam: np.ndarray | None = None) -> float:
    """int_(0,T) int_Gamma lambda |u_t|^2 dS dt from a recorded trace."""
    if record.samples.shape[0] < 3:
        raise ConfigurationError("record too short for a flux integral")
    lam = record.lam if lam is None else np.asarray(lam, dtype=np.float64)
    if lam is None:
        raise ConfigurationError("flux integral needs lambda values")
    ut = np.gradient(record.samples, record.dt, axis=0)
    wt = _trap_weights(record.samples.shape[0]) * record.dt
    per_level = (ut ** 2 * (lam * record.weights)[None, :]).sum(axis=1)
    return float(np.sum(per_level * wt))
