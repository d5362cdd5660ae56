"""Order-2 spherical harmonics: basis, Lambertian rendering, the frontal
subspace, log-SH correction and lighting distances.

Coefficient order everywhere is
``(Y00, Y10, Y11e, Y11o, Y20, Y21e, Y21o, Y22e, Y22o)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateGeometryError, DegenerateLightingError, InvalidInputError

SH_NAMES = ("Y00", "Y10", "Y11e", "Y11o", "Y20", "Y21e", "Y21o", "Y22e", "Y22o")
N_SH = 9
N_KEEP = 6
N_PROJ = 3 * N_KEEP

Q_EPS = 1e-12
UNIT_TOL = 1e-6

_C0 = 1.0 / math.sqrt(4.0 * math.pi)
_C1 = math.sqrt(3.0 / (4.0 * math.pi))
_C20 = 0.5 * math.sqrt(5.0 / (4.0 * math.pi))
_C2 = 3.0 * math.sqrt(5.0 / (12.0 * math.pi))


def sh_basis_many(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9 basis functions at each row of an ``(n, 3)`` array.

    No validation; callers that accept user input go through `sh_basis` or
    `build_basis_matrix`.
    """
    normals = np.asarray(normals, dtype=np.float64)
    x, y, z = normals[..., 0], normals[..., 1], normals[..., 2]
    out = np.empty(normals.shape[:-1] + (N_SH,), dtype=np.float64)
    out[..., 0] = _C0
    out[..., 1] = _C1 * z
    out[..., 2] = _C1 * x
    out[..., 3] = _C1 * y
    out[..., 4] = _C20 * (3.0 * z * z - 1.0)
    out[..., 5] = _C2 * x * z
    out[..., 6] = _C2 * y * z
    out[..., 7] = 0.5 * _C2 * (x * x - y * y)
    out[..., 8] = _C2 * x * y
    return out


def _check_unit(normals: np.ndarray) -> None:
    if not np.all(np.isfinite(normals)):
        raise InvalidInputError("normal contains non-finite values")
    norms = np.linalg.norm(normals, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise InvalidInputError(f"normals must be unit length within {UNIT_TOL}")


def sh_basis(normal) -> np.ndarray:
    """SH9 values for a single unit normal."""
    n = np.asarray(normal, dtype=np.float64)
    if n.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {n.shape}")
    _check_unit(n)
    return sh_basis_many(n[None])[0]


@dataclass(frozen=True)
class BasisMatrix:
    rows: np.ndarray  # (n, 9)

    @property
    def pixel_count(self) -> int:
        return self.rows.shape[0]


def build_basis_matrix(normals) -> BasisMatrix:
    normals = np.asarray(normals, dtype=np.float64)
    if normals.size == 0:
        raise InvalidInputError("need at least one normal")
    normals = normals.reshape(-1, 3)
    _check_unit(normals)
    return BasisMatrix(sh_basis_many(normals))


@dataclass
class SHLight:
    """Color lighting: ``per_channel`` is (3, 9) for R, G, B."""

    per_channel: np.ndarray
    projected: Optional[np.ndarray] = None

    def __post_init__(self):
        pc = np.asarray(self.per_channel, dtype=np.float64)
        if pc.shape != (3, N_SH):
            raise InvalidInputError(f"per_channel must be (3, 9), got {pc.shape}")
        if not np.all(np.isfinite(pc)):
            raise InvalidInputError("lighting coefficients must be finite")
        self.per_channel = pc
        if self.projected is not None:
            self.projected = np.asarray(self.projected, dtype=np.float64).reshape(N_PROJ)

    def with_projection(self, sub: "Subspace") -> "SHLight":
        return SHLight(self.per_channel.copy(), project(self.per_channel, sub))


def render_shading(basis: BasisMatrix, light, albedo, clamp: bool = False) -> np.ndarray:
    """Per-pixel ``albedo * (Y @ l_c)`` for each color channel; returns (n, 3)."""
    coeffs = light.per_channel if isinstance(light, SHLight) else np.asarray(light, dtype=np.float64)
    albedo = np.asarray(albedo, dtype=np.float64)
    if coeffs.shape != (3, N_SH):
        raise InvalidInputError(f"lighting must be (3, 9), got {coeffs.shape}")
    if albedo.shape != (basis.pixel_count, 3):
        raise InvalidInputError(
            f"albedo shape {albedo.shape} does not match {basis.pixel_count} pixels x 3 channels"
        )
    img = albedo * (basis.rows @ coeffs.T)
    if clamp:
        np.maximum(img, 0.0, out=img)
    return img


@dataclass(frozen=True)
class Subspace:
    v6: np.ndarray  # (9, 6)
    singular_values: np.ndarray  # (9,)

    @property
    def energy_fraction(self) -> float:
        """Share of squared singular values captured by the kept 6 directions."""
        s2 = self.singular_values ** 2
        return float(s2[:N_KEEP].sum() / s2.sum())

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": 1,
                "order": list(SH_NAMES),
                "v6": [repr(float(v)) for v in self.v6.ravel()],
                "singular_values": [repr(float(v)) for v in self.singular_values],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "Subspace":
        d = json.loads(text)
        v6 = np.array([float(v) for v in d["v6"]], dtype=np.float64).reshape(N_SH, N_KEEP)
        sv = np.array([float(v) for v in d["singular_values"]], dtype=np.float64)
        return cls(v6, sv)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Subspace":
        return cls.from_json(Path(path).read_text())


def _fix_signs(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def compute_subspace(basis: BasisMatrix, rank_tol: float = 1e-10) -> Subspace:
    """Thin SVD of Y, keeping the 6 leading right-singular vectors.

    Each kept column is sign-normalized so its largest-magnitude entry is
    positive.
    """
    Y = basis.rows
    if Y.shape[0] < N_SH:
        raise DegenerateGeometryError(f"need at least {N_SH} rows, got {Y.shape[0]}")
    _, s, vt = np.linalg.svd(Y, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0]))
    if rank < N_KEEP:
        raise DegenerateGeometryError(f"basis matrix has rank {rank} < {N_KEEP}")
    v6 = _fix_signs(vt[:N_KEEP].T.copy())
    return Subspace(v6, s.copy())


def project(light, sub: Subspace) -> np.ndarray:
    """(3, 9) or (..., 3, 9) coefficients -> 18-dim subspace coordinates."""
    coeffs = light.per_channel if isinstance(light, SHLight) else np.asarray(light, dtype=np.float64)
    coords = coeffs @ sub.v6  # (..., 3, 6)
    return coords.reshape(coords.shape[:-2] + (N_PROJ,))


def unproject(coords, sub: Subspace) -> np.ndarray:
    """18-dim coordinates -> (3, 9) coefficients in the span of V6."""
    coords = np.asarray(coords, dtype=np.float64)
    c = coords.reshape(coords.shape[:-1] + (3, N_KEEP))
    return c @ sub.v6.T


def correct_log_sh(basis: BasisMatrix, l_log) -> np.ndarray:
    """Recover linear-space SH from log-space SH.

    Solves ``Y l = exp(Y l_log)`` in the least-squares sense per channel via
    a reduced QR factorization of Y.  ``l_log`` is (9,) or (channels, 9).
    """
    Y = basis.rows
    l_log = np.asarray(l_log, dtype=np.float64)
    single = l_log.ndim == 1
    L = np.atleast_2d(l_log)
    rhs = np.exp(Y @ L.T)  # (n, channels)
    out = solve_overdetermined(Y, rhs).T
    return out[0] if single else out


def solve_overdetermined(Y: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least-squares solve of ``Y x = rhs`` (rhs may have several columns)."""
    if Y.shape[0] < Y.shape[1]:
        raise DegenerateGeometryError("fewer rows than unknowns")
    q, r = np.linalg.qr(Y, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        raise DegenerateGeometryError("basis matrix is rank deficient")
    return solve_triangular(r, q.T @ rhs, lower=False)


def q_matrix() -> np.ndarray:
    """The 9x9 Q-measure quadratic form (DC row/column zero)."""
    pi = math.pi
    q = np.zeros((N_SH, N_SH))
    q[1, 1] = pi / 36.0
    q[2, 2] = q[3, 3] = pi / 9.0
    q[1, 4] = q[4, 1] = math.sqrt(5.0) * pi / (64.0 * math.sqrt(3.0))
    q[2, 5] = q[5, 2] = q[3, 6] = q[6, 3] = math.sqrt(5.0) * pi / 64.0
    for i in range(4, N_SH):
        q[i, i] = pi / 64.0
    return q


_Q = q_matrix()


def q_distance(y1, y2) -> float:
    """Half of one minus the Q-weighted correlation; lies in [0, 1]."""
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != (N_SH,) or y2.shape != (N_SH,):
        raise InvalidInputError("q_distance expects two SH9 vectors")
    a = y1 @ _Q @ y1
    b = y2 @ _Q @ y2
    if a <= Q_EPS or b <= Q_EPS:
        raise DegenerateLightingError("Q-measure undefined for lighting with no non-DC energy")
    corr = (y1 @ _Q @ y2) / (math.sqrt(a) * math.sqrt(b))
    return float(0.5 * (1.0 - min(1.0, max(-1.0, corr))))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


# ---------------------------------------------------------------------------
# normal grids

def hemisphere_grid(resolution: int = 32, max_polar_deg: float = 90.0) -> np.ndarray:
    """Unit normals of an orthographically viewed front hemisphere.

    Pixel centers of a ``resolution x resolution`` image of the unit sphere;
    rows go top to bottom (+y up).  Pixels whose normal is more than
    ``max_polar_deg`` away from +z are dropped.
    """
    u = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    xs, ys = np.meshgrid(u, -u)
    r2 = xs ** 2 + ys ** 2
    limit = math.sin(math.radians(min(max_polar_deg, 90.0))) ** 2
    mask = r2 < min(limit, 1.0) if max_polar_deg < 90.0 else r2 < 1.0
    x, y = xs[mask], ys[mask]
    z = np.sqrt(np.clip(1.0 - x * x - y * y, 0.0, None))
    n = np.stack([x, y, z], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Rotation about +y by yaw followed by +x by pitch (head turn, nod)."""
    a, b = math.radians(yaw_deg), math.radians(pitch_deg)
    ry = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(b), -math.sin(b)], [0.0, math.sin(b), math.cos(b)]])
    return ry @ rx


FACE_CROP_DEG = 60.0
DEFAULT_JITTER_DEG = 15.0


def frontal_normal_grid(
    resolution: int = 64,
    crop_deg: float = FACE_CROP_DEG,
    jitter_deg: float = DEFAULT_JITTER_DEG,
    jitter_steps: int = 3,
) -> np.ndarray:
    """Normals used to define V6: a face-sized frontal crop of the hemisphere,
    replicated over a grid of yaw/pitch offsets spanning the pose jitter."""
    base = hemisphere_grid(resolution, crop_deg)
    if jitter_deg <= 0 or jitter_steps <= 1:
        return base
    angles = np.linspace(-jitter_deg, jitter_deg, jitter_steps)
    return np.concatenate([base @ rotation(a, b).T for a in angles for b in angles])


def default_subspace() -> Subspace:
    return compute_subspace(build_basis_matrix(frontal_normal_grid()))
