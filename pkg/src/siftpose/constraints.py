"""Linear constraint rows on the epipolar geometry and the affinity/feature machinery.

Every row is a 9-vector of coefficients on the row-major entries (f1 ... f9)
of a 3x3 two-view matrix, so that row . vec(F) = 0 for consistent input.
Three row families exist: the bilinear point (epipolar) row, the two rows of
an affine correspondence, and the single row contributed by the orientation
and scale of a covariant feature pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, MirroredFeatureError, PointAtInfinityError
from .geometry import (
    AffineCorrespondence,
    ImagePoint,
    SiftCorrespondence,
    SiftFeature,
    homogenize,
    wrap_angle,
)


@dataclass(frozen=True)
class CoefficientRow:
    c: np.ndarray
    tag: str = "epipolar"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.shape != (9,) or not np.all(np.isfinite(c)):
            raise ValueError("a coefficient row has nine finite entries")
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class CoefficientSystem:
    """Stacked constraint rows with one provenance tag per row."""

    rows: np.ndarray
    tags: tuple[str, ...]

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.shape[1] != 9:
            raise ValueError("all rows must have width 9")
        if len(self.tags) != rows.shape[0]:
            raise ValueError("one tag per row required")
        object.__setattr__(self, "rows", rows)

    def residuals(self, f) -> np.ndarray:
        """Row residuals normalized by row norm times model norm."""
        vec = f.flat() if hasattr(f, "flat") and callable(f.flat) else np.asarray(f).reshape(-1)
        vec = np.asarray(vec, dtype=float)
        scale = np.linalg.norm(self.rows, axis=1) * np.linalg.norm(vec)
        scale = np.where(scale == 0.0, 1.0, scale)
        return np.abs(self.rows @ vec) / scale


@dataclass(frozen=True)
class Homography:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(m)) < 1e-15:
            raise ValueError("homography must be invertible")
        object.__setattr__(self, "m", m)

    def project(self, points: np.ndarray) -> np.ndarray:
        mapped = homogenize(np.atleast_2d(np.asarray(points, dtype=float))) @ self.m.T
        return mapped[:, :2] / mapped[:, 2:3]


@dataclass(frozen=True)
class JacobianDecomposition:
    """Rotation-times-upper-triangular split of a 2x2 projection Jacobian."""

    alpha: float
    qu: float
    qv: float
    w: float

    def __post_init__(self):
        if not (self.qu > 0.0 and self.qv > 0.0):
            raise ValueError("axis scales must be positive")
        object.__setattr__(self, "alpha", wrap_angle(self.alpha))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return np.array([[c, -s], [s, c]]) @ np.array([[self.qu, self.w], [0.0, self.qv]])

    @property
    def uniform_scale(self) -> float:
        """Scale consistent with the determinant: sqrt(qu * qv)."""
        return math.sqrt(self.qu * self.qv)


def decompose_jacobian(j: np.ndarray) -> JacobianDecomposition:
    """Split J into a rotation and an upper-triangular factor with positive diagonal."""
    j = np.asarray(j, dtype=float)
    qu = math.hypot(j[0, 0], j[1, 0])
    if qu < 1e-15:
        raise ValueError("first column of the Jacobian vanishes")
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    if det <= 0.0:
        raise MirroredFeatureError("orientation-reversing Jacobian")
    alpha = math.atan2(j[1, 0], j[0, 0])
    c, s = math.cos(alpha), math.sin(alpha)
    w = c * j[0, 1] + s * j[1, 1]
    qv = det / qu
    return JacobianDecomposition(alpha=alpha, qu=qu, qv=qv, w=w)


# ---------------------------------------------------------------------------
# Constraint rows
# ---------------------------------------------------------------------------

def epipolar_rows(pairs: np.ndarray) -> np.ndarray:
    """Bilinear rows for point pairs (u1, v1, u2, v2); shape (n, 9)."""
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    u1, v1, u2, v2 = pairs[:, 0], pairs[:, 1], pairs[:, 2], pairs[:, 3]
    one = np.ones_like(u1)
    return np.stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, one], axis=1)


def epipolar_row(pair) -> CoefficientRow:
    if isinstance(pair, SiftCorrespondence):
        pair = pair.point_pair()
    return CoefficientRow(epipolar_rows(np.asarray(pair, dtype=float).reshape(1, 4))[0],
                          tag="epipolar")


def sift_rows(corr: np.ndarray) -> np.ndarray:
    """Orientation/scale rows for packed correspondences (n, 8).

    Columns of the input are (u1, v1, q1, a1, u2, v2, q2, a2). The last
    coefficient is exactly zero for every input.
    """
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    u1, v1, q1, a1 = corr[:, 0], corr[:, 1], corr[:, 2], corr[:, 3]
    u2, v2, q2, a2 = corr[:, 4], corr[:, 5], corr[:, 6], corr[:, 7]
    if np.any(q1 <= 0.0) or np.any(q2 <= 0.0):
        raise ValueError("feature scales must be positive")
    q = q2 / q1
    c1, s1 = np.cos(a1), np.sin(a1)
    c2, s2 = np.cos(a2), np.sin(a2)
    zero = np.zeros_like(u1)
    return np.stack([
        c2 * q * u1 + c1 * u2,
        c2 * q * v1 + s1 * u2,
        c2 * q,
        s2 * q * u1 + c1 * v2,
        s2 * q * v1 + s1 * v2,
        s2 * q,
        c1,
        s1,
        zero,
    ], axis=1)


def sift_row(corr: SiftCorrespondence) -> CoefficientRow:
    return CoefficientRow(sift_rows(corr.to_row().reshape(1, 8))[0], tag="sift")


def affine_row_pair(ac: AffineCorrespondence) -> np.ndarray:
    """The two rows contributed by a local affinity; shape (2, 9)."""
    u1, v1 = ac.p1.u, ac.p1.v
    u2, v2 = ac.p2.u, ac.p2.v
    a1, a2, a3, a4 = ac.a1, ac.a2, ac.a3, ac.a4
    return np.array([
        [u2 + a1 * u1, a1 * v1, a1, v2 + a3 * u1, a3 * v1, a3, 1.0, 0.0, 0.0],
        [a2 * u1, u2 + a2 * v1, a2, a4 * u1, v2 + a4 * v1, a4, 0.0, 1.0, 0.0],
    ])


def affine_rows(ac: AffineCorrespondence) -> tuple[CoefficientRow, CoefficientRow]:
    rows = affine_row_pair(ac)
    return CoefficientRow(rows[0], tag="affine"), CoefficientRow(rows[1], tag="affine")


def build_system(pairs=None, sift=None, affine=None) -> CoefficientSystem:
    """Stack epipolar, SIFT, and affine rows into one system."""
    rows = []
    tags = []
    if pairs is not None and len(pairs) > 0:
        r = epipolar_rows(pairs)
        rows.append(r)
        tags += ["epipolar"] * r.shape[0]
    if sift is not None and len(sift) > 0:
        r = sift_rows(sift)
        rows.append(r)
        tags += ["sift"] * r.shape[0]
    if affine is not None:
        for ac in affine:
            rows.append(affine_row_pair(ac))
            tags += ["affine", "affine"]
    if not rows:
        raise ValueError("no constraints given")
    return CoefficientSystem(np.vstack(rows), tuple(tags))


# ---------------------------------------------------------------------------
# Affinity <-> feature machinery
# ---------------------------------------------------------------------------

def affine_jacobians_of_homography(h, points: np.ndarray):
    """Project points through H and linearize the map there.

    Returns (projected (n, 2), jacobians (n, 2, 2)). The Jacobian entries are
    a1 = (h1 - h7 u2)/s, a2 = (h2 - h8 u2)/s, a3 = (h4 - h7 v2)/s,
    a4 = (h5 - h8 v2)/s with projective depth s = u1 h7 + v1 h8 + h9.
    """
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    u1, v1 = points[:, 0], points[:, 1]
    s = u1 * m[2, 0] + v1 * m[2, 1] + m[2, 2]
    if np.any(np.abs(s) < 1e-12 * np.linalg.norm(m[2]) * np.max(np.abs(homogenize(points)))):
        raise PointAtInfinityError("projective depth vanished under the homography")
    u2 = (u1 * m[0, 0] + v1 * m[0, 1] + m[0, 2]) / s
    v2 = (u1 * m[1, 0] + v1 * m[1, 1] + m[1, 2]) / s
    jac = np.empty((points.shape[0], 2, 2))
    jac[:, 0, 0] = (m[0, 0] - m[2, 0] * u2) / s
    jac[:, 0, 1] = (m[0, 1] - m[2, 1] * u2) / s
    jac[:, 1, 0] = (m[1, 0] - m[2, 0] * v2) / s
    jac[:, 1, 1] = (m[1, 1] - m[2, 1] * v2) / s
    return np.stack([u2, v2], axis=1), jac


def affine_from_homography(h, p1) -> AffineCorrespondence:
    """First-order linearization of the homography at p1."""
    if isinstance(p1, ImagePoint):
        pt = np.array([[p1.u, p1.v]])
    else:
        pt = np.asarray(p1, dtype=float).reshape(1, 2)
    p2, jac = affine_jacobians_of_homography(h, pt)
    return AffineCorrespondence(ImagePoint(pt[0, 0], pt[0, 1]),
                                ImagePoint(p2[0, 0], p2[0, 1]), jac[0])


def sift_from_affine(a: np.ndarray, alpha1: float, q1: float):
    """Second-image orientation and scale induced by an affinity.

    The direction comes from mapping (cos a1, sin a1) through A; the scale is
    fixed by the determinant, q2 = q1 * sqrt(det A). Returns
    (alpha2, q2, circle_residual) where the residual |A d| - sqrt(det A)
    vanishes exactly when A is consistent with a feature pair.
    """
    a = np.asarray(a, dtype=float)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if det <= 0.0:
        raise MirroredFeatureError("affinity is orientation-reversing (det <= 0)")
    if not q1 > 0.0:
        raise ValueError("scale must be positive")
    direction = a @ np.array([math.cos(alpha1), math.sin(alpha1)])
    alpha2 = wrap_angle(math.atan2(direction[1], direction[0]))
    root = math.sqrt(det)
    q2 = q1 * root
    residual = float(np.linalg.norm(direction) - root)
    return alpha2, q2, residual


def decomposition_residuals(a, corr) -> tuple[float, float, float]:
    """Residuals of the three constraints tying an affinity to feature parameters.

    Returns (a2 a3 - a1 a4 + q^2, a3 c1 + a4 s1 - s2 q, a1 c1 + a2 s1 - c2 q)
    with q the relative scale.
    """
    a = a.a if isinstance(a, AffineCorrespondence) else np.asarray(a, dtype=float)
    alpha1, alpha2, q = _feature_params(corr)
    c1, s1 = math.cos(alpha1), math.sin(alpha1)
    c2, s2 = math.cos(alpha2), math.sin(alpha2)
    r_scale = a[0, 1] * a[1, 0] - a[0, 0] * a[1, 1] + q * q
    r_sin = a[1, 0] * c1 + a[1, 1] * s1 - s2 * q
    r_cos = a[0, 0] * c1 + a[0, 1] * s1 - c2 * q
    return float(r_scale), float(r_sin), float(r_cos)


def legacy_combined_residual(a, corr) -> float:
    """Residual of the older single orientation constraint.

    Equals s2 * r_cos - c2 * r_sin of decomposition_residuals, so it vanishes
    whenever both circle residuals vanish; the converse fails.
    """
    a = a.a if isinstance(a, AffineCorrespondence) else np.asarray(a, dtype=float)
    alpha1, alpha2, _ = _feature_params(corr)
    c1, s1 = math.cos(alpha1), math.sin(alpha1)
    c2, s2 = math.cos(alpha2), math.sin(alpha2)
    return float(c1 * s2 * a[0, 0] + s1 * s2 * a[0, 1]
                 - c1 * c2 * a[1, 0] - c2 * s1 * a[1, 1])


def _feature_params(corr) -> tuple[float, float, float]:
    if isinstance(corr, SiftCorrespondence):
        return corr.first.angle, corr.second.angle, corr.relative_scale
    alpha1, alpha2, q = corr
    if not q > 0.0:
        raise ValueError("relative scale must be positive")
    return float(alpha1), float(alpha2), float(q)


# ---------------------------------------------------------------------------
# Consistent-instance sampling (numerical oracle for the derived row)
# ---------------------------------------------------------------------------

def circle_compatible_angles(a: np.ndarray) -> np.ndarray | None:
    """First-image orientations for which an affinity admits a feature pair.

    The scale and circle constraints can hold simultaneously only along
    directions d with ||A d|| = sqrt(det A); these are the null directions of
    the indefinite form A^T A - det(A) I. Returns the two line angles in
    [0, pi), or None when A is a similarity (every direction works).
    """
    a = np.asarray(a, dtype=float)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if det <= 0.0:
        raise MirroredFeatureError("affinity is orientation-reversing (det <= 0)")
    m = a.T @ a - det * np.eye(2)
    if np.abs(m).max() < 1e-12 * max(1.0, det):
        return None
    w, v = np.linalg.eigh(m)
    t = math.sqrt(max(-w[0], 0.0) / max(w[1], 1e-300))
    angles = []
    for sign in (1.0, -1.0):
        u = v[:, 0] + sign * t * v[:, 1]
        angles.append(math.atan2(u[1], u[0]) % math.pi)
    return np.array(angles)


def make_consistent_sift(f, rng, point_scale: float = 500.0,
                         max_retries: int = 64) -> SiftCorrespondence:
    """Sample a feature correspondence exactly consistent with a rank-2 F.

    p1 is drawn at random, p2 is placed on its epipolar line, the affinity is
    drawn from the two-parameter family satisfying both affine rows with
    det A > 0, and the second-image orientation/scale follow from the
    affinity. The derived row of the result annihilates vec(F) to roundoff.
    """
    corr, _ = sample_consistent_instance(f, rng, point_scale=point_scale,
                                         max_retries=max_retries)
    return corr


def sample_consistent_instance(f, rng, point_scale: float = 500.0, max_retries: int = 64):
    """Like make_consistent_sift but also returns the sampled affinity."""
    m = f.m if hasattr(f, "m") else np.asarray(f, dtype=float)
    scale = np.linalg.norm(m)
    for _ in range(max_retries):
        p1 = rng.uniform(-point_scale, point_scale, size=2)
        line2 = m @ np.array([p1[0], p1[1], 1.0])
        norm2 = math.hypot(line2[0], line2[1])
        if norm2 < 1e-9 * scale * max(1.0, point_scale):
            continue  # p1 landed on the epipole
        normal = line2[:2] / norm2
        base = -line2[2] / norm2 * normal
        tangent = np.array([-normal[1], normal[0]])
        p2 = base + rng.uniform(-point_scale, point_scale) * tangent

        line1 = m.T @ np.array([p2[0], p2[1], 1.0])
        # Both affine rows reduce to A^T n2 = -n1 on the line normals.
        system = np.array([
            [line2[0], 0.0, line2[1], 0.0],
            [0.0, line2[0], 0.0, line2[1]],
        ])
        rhs = -line1[:2]
        particular, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
        if rank < 2:
            continue
        _, _, vt = np.linalg.svd(system)
        null_basis = vt[2:]
        for _ in range(max_retries):
            coeff = rng.uniform(-1.0, 1.0, size=2)
            avec = particular + coeff @ null_basis
            a = avec.reshape(2, 2)
            if a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] > 1e-6:
                break
        else:
            continue
        lines = circle_compatible_angles(a)
        if lines is None:
            alpha1 = rng.uniform(0.0, 2.0 * math.pi)
        else:
            alpha1 = wrap_angle(lines[rng.integers(2)] + rng.integers(2) * math.pi)
        q1 = rng.uniform(0.5, 2.0)
        alpha2, q2, _ = sift_from_affine(a, alpha1, q1)
        corr = SiftCorrespondence(
            SiftFeature(ImagePoint(p1[0], p1[1]), alpha1, q1),
            SiftFeature(ImagePoint(p2[0], p2[1]), alpha2, q2),
        )
        ac = AffineCorrespondence(corr.first.point, corr.second.point, a)
        return corr, ac
    raise DegenerateSampleError("could not sample a consistent correspondence; "
                                "degenerate region of F")
