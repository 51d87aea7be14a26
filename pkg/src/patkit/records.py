"""Boundary observation records and their PATR file format.

PATR layout: header = magic b"PATR", u32 n_nodes, u32 n_samples, f64 dt,
then n_samples * n_nodes little-endian f64 values, sample-major. A CSV
sidecar (same path + ".nodes.csv") stores per-node x, y, arclength weight
and absorption value.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

_MAGIC = b"PATR"
_HEADER = struct.Struct("<4sIId")


@dataclass
class ObservationRecord:
    """Time series of the wave trace on a set of boundary nodes.

    samples[k, n] is the Dirichlet trace at node n and time k*dt, for
    k = 0 .. n_steps. `chi`, when present, is the space-time observation
    window applied before the record is used as time-reversal data; it
    must vanish on the final time sample.
    """

    nodes_ij: np.ndarray      # (n, 2) int grid indices
    coords: np.ndarray        # (n, 2) node positions
    weights: np.ndarray       # (n,) arclength quadrature weights
    dt: float
    samples: np.ndarray       # (n_steps + 1, n)
    lam: np.ndarray | None = None    # (n,) absorption at each node
    chi: np.ndarray | None = None    # (n_steps + 1, n) window, or None for no window

    def __post_init__(self):
        self.nodes_ij = np.asarray(self.nodes_ij, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        n = self.nodes_ij.shape[0]
        if self.samples.ndim != 2 or self.samples.shape[1] != n:
            raise ConfigurationError(
                f"samples shape {self.samples.shape} inconsistent with {n} nodes")
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.chi is not None:
            self.chi = np.asarray(self.chi, dtype=np.float64)
            if self.chi.shape != self.samples.shape:
                raise ConfigurationError("window shape does not match samples")
            if np.abs(self.chi[-1]).max(initial=0.0) > 1e-12:
                raise ConfigurationError("window must vanish on the final time sample")

    @property
    def n_nodes(self) -> int:
        return self.nodes_ij.shape[0]

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def windowed(self) -> np.ndarray:
        """Samples with the observation window applied (identity if none)."""
        if self.chi is None:
            return self.samples
        return self.chi * self.samples

    def time_derivative(self) -> np.ndarray:
        """d/dt of the windowed samples, second order, centered inside."""
        if self.n_steps < 2:
            raise ConfigurationError("record too short to differentiate")
        return np.gradient(self.windowed(), self.dt, axis=0)

    def resampled(self, dt: float) -> "ObservationRecord":
        """Linear resampling onto step dt covering the same duration."""
        if abs(dt - self.dt) < 1e-12 * self.dt:
            return self
        n_new = round(self.duration / dt)
        if abs(n_new * dt - self.duration) > 1e-6 * self.duration:
            raise ConfigurationError(
                f"target dt {dt} does not divide record duration {self.duration}")
        t_old = self.dt * np.arange(self.n_steps + 1)
        t_new = dt * np.arange(n_new + 1)
        samples = np.empty((n_new + 1, self.n_nodes))
        for n in range(self.n_nodes):
            samples[:, n] = np.interp(t_new, t_old, self.samples[:, n])
        chi = None
        if self.chi is not None:
            chi = np.empty_like(samples)
            for n in range(self.n_nodes):
                chi[:, n] = np.interp(t_new, t_old, self.chi[:, n])
            chi[-1] = 0.0
        return ObservationRecord(self.nodes_ij, self.coords, self.weights,
                                 dt, samples, lam=self.lam, chi=chi)

    def with_window(self, final_fraction: float = 0.05,
                    lambda0: float | None = None) -> "ObservationRecord":
        """Attach the default window: temporal half-cosine roll-off over the
        final `final_fraction` of the record, times a spatial taper that is
        1 where lambda >= lambda0 and ramps down with lambda below it."""
        n_levels = self.n_steps + 1
        t = np.arange(n_levels) / self.n_steps
        chi_t = np.ones(n_levels)
        ramp = t > 1.0 - final_fraction
        phase = (t[ramp] - (1.0 - final_fraction)) / final_fraction
        chi_t[ramp] = np.cos(0.5 * np.pi * phase) ** 2
        chi_t[-1] = 0.0
        if self.lam is not None and lambda0 is not None and lambda0 > 0:
            s = np.clip(self.lam / lambda0, 0.0, 1.0)
            chi_s = s * s * (3.0 - 2.0 * s)
        else:
            chi_s = np.ones(self.n_nodes)
        chi = chi_t[:, None] * chi_s[None, :]
        return ObservationRecord(self.nodes_ij, self.coords, self.weights,
                                 self.dt, self.samples, lam=self.lam, chi=chi)

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, self.n_nodes, self.samples.shape[0], self.dt))
            fh.write(np.ascontiguousarray(self.samples).tobytes(order="C"))
        with open(path.with_suffix(path.suffix + ".nodes.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "x", "y", "weight", "lambda"])
            lam = self.lam if self.lam is not None else np.zeros(self.n_nodes)
            for k in range(self.n_nodes):
                w.writerow([int(self.nodes_ij[k, 0]), int(self.nodes_ij[k, 1]),
                            repr(float(self.coords[k, 0])), repr(float(self.coords[k, 1])),
                            repr(float(self.weights[k])), repr(float(lam[k]))])

    @classmethod
    def load(cls, path) -> "ObservationRecord":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise ConfigurationError(f"{path}: truncated record")
        magic, n_nodes, n_samples, dt = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}")
        expected = _HEADER.size + 8 * n_nodes * n_samples
        if len(raw) != expected:
            raise ConfigurationError(f"{path}: size {len(raw)} != expected {expected}")
        samples = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        samples = samples.reshape((n_samples, n_nodes)).copy()
        nodes, coords, weights, lam = [], [], [], []
        with open(path.with_suffix(path.suffix + ".nodes.csv"), newline="") as fh:
            for row in csv.DictReader(fh):
                nodes.append((int(row["i"]), int(row["j"])))
                coords.append((float(row["x"]), float(row["y"])))
                weights.append(float(row["weight"]))
                lam.append(float(row["lambda"]))
        if len(nodes) != n_nodes:
            raise ConfigurationError(f"{path}: sidecar lists {len(nodes)} nodes, header {n_nodes}")
        return cls(np.array(nodes), np.array(coords), np.array(weights), dt,
                   samples, lam=np.array(lam))
