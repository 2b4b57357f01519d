"""Spatial domains with partitioned boundaries: samplers, normals, exact measures.

A :class:`Domain` is either a hyperrectangle (axis-aligned box) or a ball. Its
boundary is partitioned into a Dirichlet part and a Neumann part; for a box the
parts are unions of faces, for a ball the whole sphere belongs to one part.
The Dirichlet part must be nonempty, otherwise the boundary-value problem the
rest of the package solves is not uniquely determined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# Box faces are labelled (axis, side) with side in {"low", "high"};
# the single ball face is labelled "sphere".
BoxFace = tuple[int, str]
Face = Union[BoxFace, str]

_SIDES = ("low", "high")


def _unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary with its unit outward normal."""

    position: np.ndarray
    normal: np.ndarray
    face_kind: str


@dataclass(frozen=True)
class BoundarySample:
    """Array-of-structs view of sampled boundary points of one kind."""

    positions: np.ndarray  # (m, dim)
    normals: np.ndarray    # (m, dim)
    face_kind: str

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> BoundaryPoint:
        return BoundaryPoint(self.positions[i], self.normals[i], self.face_kind)


@dataclass(frozen=True)
class Domain:
    """Immutable box or ball domain with a two-part boundary.

    Use the :meth:`box` / :meth:`ball` constructors rather than ``__init__``.
    """

    dim: int
    shape: str  # "box" | "ball"
    lower: np.ndarray | None
    upper: np.ndarray | None
    center: np.ndarray | None
    radius: float | None
    dirichlet_faces: frozenset
    neumann_faces: frozenset

    # -- construction ----------------------------------------------------

    @classmethod
    def box(
        cls,
        lower: Iterable[float],
        upper: Iterable[float],
        dirichlet: Iterable[BoxFace] | str = "all",
    ) -> "Domain":
        """Axis-aligned box [lower, upper].

        ``dirichlet`` is either ``"all"`` or an iterable of ``(axis, side)``
        labels; every face not listed becomes Neumann.
        """
        lo = np.asarray(list(lower), dtype=float)
        hi = np.asarray(list(upper), dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(hi > lo):
            raise ValueError("box must have positive extent along every axis")
        n = lo.size
        all_faces = {(k, s) for k in range(n) for s in _SIDES}
        if isinstance(dirichlet, str):
            if dirichlet != "all":
                raise ValueError("dirichlet must be 'all' or an iterable of faces")
            dfaces = all_faces
        else:
            dfaces = {(int(a), str(s)) for a, s in dirichlet}
            bad = dfaces - all_faces
            if bad:
                raise ValueError(f"unknown box faces: {sorted(bad)}")
        if not dfaces:
            raise ValueError("Dirichlet part of the boundary must be nonempty")
        nfaces = all_faces - dfaces
        return cls(
            dim=n,
            shape="box",
            lower=lo,
            upper=hi,
            center=None,
            radius=None,
            dirichlet_faces=frozenset(dfaces),
            neumann_faces=frozenset(nfaces),
        )

    @classmethod
    def ball(cls, center: Iterable[float], radius: float) -> "Domain":
        """Ball of given center and radius; the sphere is the Dirichlet part.

        The sphere is a single face, and the Dirichlet part may not be empty,
        so assigning it to the Neumann part is not representable.
        """
        c = np.asarray(list(center), dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("center must be a nonempty 1-d array")
        if not (radius > 0.0 and math.isfinite(radius)):
            raise ValueError("radius must be positive and finite")
        return cls(
            dim=c.size,
            shape="ball",
            lower=None,
            upper=None,
            center=c,
            radius=float(radius),
            dirichlet_faces=frozenset({"sphere"}),
            neumann_faces=frozenset(),
        )

    # -- measures ---------------------------------------------------------

    @property
    def interior_measure(self) -> float:
        if self.shape == "box":
            return float(np.prod(self.upper - self.lower))
        return _unit_ball_volume(self.dim) * self.radius**self.dim

    def face_measure(self, face: Face) -> float:
        """Surface measure of one face (1.0 for a box endpoint in 1d)."""
        if self.shape == "box":
            axis, _ = face
            extents = self.upper - self.lower
            return float(np.prod(np.delete(extents, axis)))
        if face != "sphere":
            raise ValueError(f"unknown ball face: {face!r}")
        n = self.dim
        return n * _unit_ball_volume(n) * self.radius ** (n - 1)

    def _part_measure(self, faces: frozenset) -> float:
        return float(sum(self.face_measure(f) for f in sorted(faces, key=str)))

    @property
    def dirichlet_measure(self) -> float:
        return self._part_measure(self.dirichlet_faces)

    @property
    def neumann_measure(self) -> float:
        return self._part_measure(self.neumann_faces)

    @property
    def boundary_measure(self) -> float:
        return self.dirichlet_measure + self.neumann_measure

    @property
    def diameter(self) -> float:
        if self.shape == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        return 2.0 * self.radius

    # -- membership -------------------------------------------------------

    def contains(self, points: np.ndarray, strict: bool = True) -> np.ndarray:
        """Elementwise membership test; strict excludes the boundary."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "box":
            if strict:
                inside = np.all((x > self.lower) & (x < self.upper), axis=1)
            else:
                inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        else:
            r = np.linalg.norm(x - self.center, axis=1)
            inside = r < self.radius if strict else r <= self.radius
        return inside if np.asarray(points).ndim > 1 else bool(inside[0])

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from interior points to the nearest boundary point."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "box":
            d = np.minimum(x - self.lower, self.upper - x).min(axis=1)
        else:
            d = self.radius - np.linalg.norm(x - self.center, axis=1)
        return d if np.asarray(points).ndim > 1 else float(d[0])

    def boundary_unit_normals(self, points: np.ndarray) -> np.ndarray:
        """Outward unit normal at each boundary point (nearest face for boxes)."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "ball":
            offset = x - self.center
            return offset / np.linalg.norm(offset, axis=1, keepdims=True)
        gaps = np.concatenate([x - self.lower, self.upper - x], axis=1)
        nearest = np.argmin(gaps, axis=1)
        normals = np.zeros_like(x)
        rows = np.arange(x.shape[0])
        axis = nearest % self.dim
        sign = np.where(nearest < self.dim, -1.0, 1.0)
        normals[rows, axis] = sign
        return normals

    # -- sampling ---------------------------------------------------------

    def sample_interior(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` points uniformly from the open interior."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.shape == "box":
            return rng.uniform(self.lower, self.upper, size=(count, self.dim))
        # Uniform in the ball: gaussian direction, radius ~ r * U^(1/n).
        direction = rng.standard_normal((count, self.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radial = self.radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / self.dim)
        return self.center + direction * radial

    def sample_boundary(
        self, kind: str, count: int, rng: np.random.Generator
    ) -> BoundarySample:
        """Draw ``count`` points uniformly from the named boundary part.

        Raises if the requested part has zero surface measure.
        """
        if kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"kind must be '{DIRICHLET}' or '{NEUMANN}'")
        if count < 1:
            raise ValueError("count must be >= 1")
        faces = self.dirichlet_faces if kind == DIRICHLET else self.neumann_faces
        if not faces:
            raise ValueError(f"empty boundary part: {kind}")

        if self.shape == "ball":
            direction = rng.standard_normal((count, self.dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            positions = self.center + self.radius * direction
            return BoundarySample(positions, direction, kind)

        ordered = sorted(faces)
        weights = np.array([self.face_measure(f) for f in ordered])
        probs = weights / weights.sum()
        choice = rng.choice(len(ordered), size=count, p=probs)
        positions = rng.uniform(self.lower, self.upper, size=(count, self.dim))
        normals = np.zeros((count, self.dim))
        for idx, (axis, side) in enumerate(ordered):
            rows = choice == idx
            if side == "low":
                positions[rows, axis] = self.lower[axis]
                normals[rows, axis] = -1.0
            else:
                positions[rows, axis] = self.upper[axis]
                normals[rows, axis] = 1.0
        return BoundarySample(positions, normals, kind)
