"""Radial test functions, radial grids, and measure pairings.

Everything downstream works with nonnegative radially symmetric test
functions f(|x|) on R^d that are dominated by phi_p(x) = (1+|x|^2)^(-p/2)
for some p > d, so that the pairing <mu, f> = int f d(mu) is finite for
Lebesgue measure and for locally finite particle configurations alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from sbmlab.errors import DimensionMismatchError, DomainError


def unit_sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (omega_d)."""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    return 2.0 * math.pi ** (d / 2.0) / gamma_fn(d / 2.0)


def phi_p(r: np.ndarray | float, p: float) -> np.ndarray | float:
    """Reference decay envelope (1 + r^2)^(-p/2)."""
    return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-p / 2.0)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid on [0, r_max].

    ``nodes`` has n_r + 1 entries, strictly increasing from 0 to r_max.
    """

    r_max: float
    n_r: int = 256

    def __post_init__(self):
        if self.r_max <= 0:
            raise DomainError("r_max must be positive")
        if self.n_r < 16:
            raise DomainError("n_r must be >= 16")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n_r + 1)

    @property
    def spacing(self) -> float:
        return self.r_max / self.n_r

    def volume_weights(self, d: int) -> np.ndarray:
        """Finite-volume weights w_i with <lambda, h> ~= omega_d * sum_i w_i h_i.

        Cell i covers [r_{i-1/2}, r_{i+1/2}] clipped to [0, r_max]; w_i is the
        cell's integral of r^(d-1).  The same weights make the discrete radial
        Laplacian exactly mass conserving.
        """
        r = self.nodes
        half = np.empty(len(r) + 1)
        half[0] = 0.0
        half[-1] = r[-1]
        half[1:-1] = 0.5 * (r[1:] + r[:-1])
        return (half[1:] ** d - half[:-1] ** d) / d


@dataclass(frozen=True)
class LebesgueBoxMeasure:
    """Lebesgue measure restricted to the centered box [-L/2, L/2]^d."""

    d: int
    side: float

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("dimension must be >= 1")
        if self.side <= 0:
            raise DomainError("box side must be positive")

    @property
    def total_mass(self) -> float:
        return self.side ** self.d


@dataclass(frozen=True)
class RadialTestFunction:
    """Nonnegative radially symmetric test function.

    Two kinds are supported:

    * ``gaussian``: value(r) = amplitude * exp(-r^2 / (2 sigma^2))
    * ``tabulated``: linear interpolation between knots, exponential tail
      matched to the last two knots beyond the final one.

    ``p_decay`` is the exponent of the reference envelope used in the
    membership check ``cp_norm``; it must exceed the spatial dimension for
    all pairings to be finite.
    """

    kind: str
    amplitude: float
    sigma: float = 1.0
    knots_r: tuple = ()
    knots_v: tuple = ()
    p_decay: float = 6.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "tabulated"):
            raise DomainError(f"unknown kind {self.kind!r}")
        if self.amplitude < 0:
            raise DomainError("amplitude must be nonnegative")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise DomainError("sigma must be positive")
        if self.kind == "tabulated":
            r = np.asarray(self.knots_r, dtype=float)
            v = np.asarray(self.knots_v, dtype=float)
            if r.ndim != 1 or r.size < 2 or r.size != v.size:
                raise DomainError("tabulated profile needs matching r/value knots")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise DomainError("knot radii must be strictly increasing and >= 0")
            if np.any(v < 0):
                raise DomainError("profile values must be nonnegative")
            if np.max(v) > self.amplitude + 1e-12 * max(1.0, self.amplitude):
                raise DomainError("profile exceeds declared amplitude")

    # -- evaluation ---------------------------------------------------------

    def _tail_rate(self) -> float:
        """Exponential decay rate matched to the last two knots."""
        r = self.knots_r
        v = self.knots_v
        v1, v0 = v[-1], v[-2]
        if v1 <= 0:
            return math.inf
        if v1 >= v0:
            # flat or increasing tail would break C_p membership; decay at a
            # unit rate as a conservative extension
            return 1.0
        return math.log(v0 / v1) / (r[-1] - r[-2])

    def __call__(self, r: np.ndarray | float) -> np.ndarray | float:
        r_arr = np.asarray(r, dtype=float)
        if np.any(r_arr < 0):
            raise DomainError("radius must be nonnegative")
        if self.kind == "gaussian":
            out = self.amplitude * np.exp(-(r_arr ** 2) / (2.0 * self.sigma ** 2))
        else:
            kr = np.asarray(self.knots_r, dtype=float)
            kv = np.asarray(self.knots_v, dtype=float)
            out = np.interp(r_arr, kr, kv)
            beyond = r_arr > kr[-1]
            if np.any(beyond):
                rate = self._tail_rate()
                if math.isinf(rate):
                    tail = 0.0
                else:
                    tail = kv[-1] * np.exp(-rate * (r_arr[beyond] - kr[-1]))
                out = np.where(beyond, 0.0, out)
                if not math.isinf(rate):
                    out[beyond] = tail
        return out if np.ndim(r) else float(out)

    def cp_norm(self, d: int | None = None, r_max: float = 200.0, n: int = 4001) -> float:
        """sup of value(r)/phi_p(r) over a dense radius grid.

        Finite for every valid profile; ``d`` only enters through the check
        that p_decay > d.
        """
        if d is not None and self.p_decay <= d:
            raise DomainError(f"p_decay={self.p_decay} must exceed dimension {d}")
        r = np.linspace(0.0, r_max, n)
        vals = np.asarray(self(r))
        return float(np.max(vals / phi_p(r, self.p_decay)))

    def scaled(self, factor: float) -> "RadialTestFunction":
        """Same profile with amplitude (and knot values) multiplied by factor."""
        if factor < 0:
            raise DomainError("scale factor must be nonnegative")
        if self.kind == "gaussian":
            return RadialTestFunction(
                kind="gaussian",
                amplitude=self.amplitude * factor,
                sigma=self.sigma,
                p_decay=self.p_decay,
            )
        return RadialTestFunction(
            kind="tabulated",
            amplitude=self.amplitude * factor,
            knots_r=self.knots_r,
            knots_v=tuple(v * factor for v in self.knots_v),
            p_decay=self.p_decay,
        )

    @property
    def effective_radius(self) -> float:
        """Radius beyond which the function is negligible (< ~1e-18 * amplitude)."""
        if self.amplitude == 0:
            return 0.0
        if self.kind == "gaussian":
            return self.sigma * math.sqrt(2.0 * 18.0 * math.log(10.0))
        rate = self._tail_rate()
        r_last = self.knots_r[-1]
        if math.isinf(rate):
            return float(r_last)
        return float(r_last + 18.0 * math.log(10.0) / rate)


def gaussian_test_function(amplitude: float = 1.0, sigma: float = 1.0,
                           p_decay: float = 6.0) -> RadialTestFunction:
    return RadialTestFunction(kind="gaussian", amplitude=amplitude, sigma=sigma,
                              p_decay=p_decay)


def tabulated_test_function(knots_r, knots_v, p_decay: float = 6.0) -> RadialTestFunction:
    knots_v = tuple(float(v) for v in knots_v)
    return RadialTestFunction(
        kind="tabulated",
        amplitude=max(knots_v) if knots_v else 0.0,
        knots_r=tuple(float(r) for r in knots_r),
        knots_v=knots_v,
        p_decay=p_decay,
    )


def load_test_function(path, p_decay: float = 6.0) -> RadialTestFunction:
    """Load a tabulated profile from a two-column text file.

    One "radius value" pair per line; '#' starts a comment.
    """
    radii, values = [], []
    with open(path, "r") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DomainError(f"expected two columns, got {line!r}")
            radii.append(float(parts[0]))
            values.append(float(parts[1]))
    return tabulated_test_function(radii, values, p_decay=p_decay)


# -- pairings ---------------------------------------------------------------

def lebesgue_pairing(f: RadialTestFunction, d: int) -> float:
    """<lambda, f> = int_{R^d} f(|x|) dx via the radial formula.

    Gaussian profiles use the closed form amplitude * (2 pi sigma^2)^(d/2);
    tabulated ones are integrated adaptively with the exponential tail
    attached analytically.
    """
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if f.amplitude == 0:
        return 0.0
    if f.kind == "gaussian":
        return f.amplitude * (2.0 * math.pi * f.sigma ** 2) ** (d / 2.0)
    omega = unit_sphere_area(d)
    r_last = f.knots_r[-1]
    body, _ = quad(lambda r: f(r) * r ** (d - 1), 0.0, r_last,
                   limit=200, points=list(f.knots_r)[:40])
    rate = f._tail_rate()
    if math.isinf(rate):
        tail = 0.0
    else:
        tail, _ = quad(lambda r: f(r) * r ** (d - 1), r_last,
                       r_last + 60.0 / rate, limit=200)
    return omega * (body + tail)


def radial_profile_pairing(values: np.ndarray, grid: RadialGrid, d: int) -> float:
    """<lambda, h> for a profile sampled on a radial grid (finite-volume rule)."""
    return float(unit_sphere_area(d) * np.dot(grid.volume_weights(d), values))


@dataclass(frozen=True)
class ParticleCloud:
    """Finite weighted particle configuration: equal mass per particle."""

    positions: np.ndarray  # (n, d)
    mass_per_particle: float
    time_stamp: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if pos.ndim != 2:
            raise DomainError("positions must be an (n, d) array")
        if self.mass_per_particle <= 0:
            raise DomainError("mass_per_particle must be positive")
        if pos.size and not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def total_mass(self) -> float:
        return self.count * self.mass_per_particle

    def radii(self) -> np.ndarray:
        if self.count == 0:
            return np.empty(0)
        return np.sqrt(np.sum(self.positions.astype(np.float64) ** 2, axis=1))


def cloud_pairing(cloud: ParticleCloud, f: RadialTestFunction,
                  d: int | None = None) -> float:
    """<mu, f> for an empirical measure: mass * sum_i f(|x_i|)."""
    if d is not None and cloud.count and cloud.dimension != d:
        raise DimensionMismatchError(
            f"cloud dimension {cloud.dimension} != expected {d}")
    if cloud.count == 0:
        return 0.0
    vals = np.asarray(f(cloud.radii()), dtype=np.float64)
    return float(cloud.mass_per_particle * vals.sum())
