"""Primitive parameterization: raw parameters, activations, covariance.

A primitive is a 2D Gaussian blob stored in raw (pre-activation) form:
position ``mu``, log-scale ``kappa``, rotation angle ``rot``, opacity
logit ``tau`` and raw RGB ``color``. Opacity activates through a sigmoid
and scale through an exponential, so both stay strictly positive and
L1 regularization of the activated values has a constant outer gradient.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ACTIVE_OPACITY_THRESHOLD",
    "DomainError",
    "PrimitiveSet",
    "activate_opacity",
    "opacity_derivative",
    "activate_scale",
    "build_covariance",
    "classify_active",
    "inverse_opacity",
]

# Opacity separating active from dead primitives; primitives at or below
# it are excluded from rendering.
ACTIVE_OPACITY_THRESHOLD = 1.0 / 255.0

# exp() overflows float64 well before this, and covariances built from
# such scales are numerically singular.
_MAX_LOG_SCALE = 80.0


class DomainError(ValueError):
    """Raised when an activation or covariance input is out of domain."""


def _check_finite(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def activate_opacity(tau):
    """Sigmoid activation mapping an opacity logit into (0, 1)."""
    t = _check_finite("tau", tau)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def opacity_derivative(tau):
    """d sigma/d tau = sigma(tau) * (1 - sigma(tau)), strictly positive."""
    o = np.asarray(activate_opacity(tau))
    out = o * (1.0 - o)
    return out if out.ndim else float(out)


def inverse_opacity(opacity):
    """Logit of an opacity in (0, 1)."""
    o = np.asarray(opacity, dtype=np.float64)
    if np.any(o <= 0.0) or np.any(o >= 1.0):
        raise DomainError("opacity must lie strictly inside (0, 1)")
    out = np.log(o / (1.0 - o))
    return out if out.ndim else float(out)


def activate_scale(kappa):
    """Exponential activation; the derivative equals the value itself."""
    k = _check_finite("kappa", kappa)
    if np.any(k > _MAX_LOG_SCALE):
        raise DomainError(f"log-scale above {_MAX_LOG_SCALE} would overflow")
    out = np.exp(k)
    return out if out.ndim else float(out)


def build_covariance(scale, rot: float) -> np.ndarray:
    """Covariance R(rot) @ diag(scale**2) @ R(rot).T of one primitive.

    ``scale`` holds the two activated standard deviations; the result is
    symmetric positive definite with eigenvalues scale**2.
    """
    s = np.asarray(scale, dtype=np.float64)
    if s.shape != (2,):
        raise DomainError("scale must be a 2-vector")
    if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
        raise DomainError("scale must be positive and finite")
    c, sn = np.cos(rot), np.sin(rot)
    rotm = np.array([[c, -sn], [sn, c]])
    return rotm @ np.diag(s * s) @ rotm.T


_MAGIC = b"PST2"
_VERSION = 1
# (name, per-primitive component count); serialization order is fixed.
_FIELDS = (
    ("mu", 2),
    ("kappa", 2),
    ("rot", 1),
    ("tau", 1),
    ("color", 3),
    ("depth", 1),
)


@dataclass
class PrimitiveSet:
    """Structure-of-arrays container for raw primitive parameters.

    ``depth`` is the fixed per-primitive blend-order key assigned at
    creation; ``alive`` marks rows that exist for pipeline bookkeeping.
    """

    mu: np.ndarray  # (N, 2) positions, scene units
    kappa: np.ndarray  # (N, 2) log-scales
    rot: np.ndarray  # (N,) rotation angles, radians
    tau: np.ndarray  # (N,) opacity logits
    color: np.ndarray  # (N, 3) raw RGB
    depth: np.ndarray  # (N,) blend-order keys
    alive: np.ndarray = field(default=None)  # (N,) bool

    def __post_init__(self):
        for name in ("mu", "kappa", "rot", "tau", "color", "depth"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        if self.alive is None:
            self.alive = np.ones(len(self.tau), dtype=bool)
        self.alive = np.ascontiguousarray(self.alive, dtype=bool)
        n = len(self.tau)
        shapes = {
            "mu": (n, 2), "kappa": (n, 2), "rot": (n,),
            "tau": (n,), "color": (n, 3), "depth": (n,), "alive": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")

    def __len__(self) -> int:
        return len(self.tau)

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    def opacity(self) -> np.ndarray:
        return np.asarray(activate_opacity(self.tau))

    def scale(self) -> np.ndarray:
        return np.asarray(activate_scale(self.kappa))

    def copy(self) -> "PrimitiveSet":
        return PrimitiveSet(
            mu=self.mu.copy(), kappa=self.kappa.copy(), rot=self.rot.copy(),
            tau=self.tau.copy(), color=self.color.copy(), depth=self.depth.copy(),
            alive=self.alive.copy(),
        )

    def select(self, index) -> "PrimitiveSet":
        """New set holding the given rows."""
        return PrimitiveSet(
            mu=self.mu[index], kappa=self.kappa[index], rot=self.rot[index],
            tau=self.tau[index], color=self.color[index], depth=self.depth[index],
            alive=self.alive[index],
        )

    @staticmethod
    def concatenate(a: "PrimitiveSet", b: "PrimitiveSet") -> "PrimitiveSet":
        return PrimitiveSet(
            mu=np.concatenate([a.mu, b.mu]),
            kappa=np.concatenate([a.kappa, b.kappa]),
            rot=np.concatenate([a.rot, b.rot]),
            tau=np.concatenate([a.tau, b.tau]),
            color=np.concatenate([a.color, b.color]),
            depth=np.concatenate([a.depth, b.depth]),
            alive=np.concatenate([a.alive, b.alive]),
        )

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        """Flat little-endian binary dump: 16-byte header then field arrays."""
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(struct.pack("<4sIQ", _MAGIC, _VERSION, len(self)))
            for name, _ in _FIELDS:
                fh.write(np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes())
            fh.write(self.alive.astype("<u1").tobytes())

    @staticmethod
    def load(path) -> "PrimitiveSet":
        path = Path(path)
        with path.open("rb") as fh:
            magic, version, count = struct.unpack("<4sIQ", fh.read(16))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a primitive-set file")
            if version != _VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            fields = {}
            for name, width in _FIELDS:
                raw = fh.read(8 * width * count)
                arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
                fields[name] = arr.reshape(count, width) if width > 1 else arr
            alive = np.frombuffer(fh.read(count), dtype="<u1").astype(bool)
        return PrimitiveSet(alive=alive, **fields)

    def to_json(self, path=None) -> str:
        """Human-readable dump for debugging."""
        doc = {"count": len(self)}
        for name, _ in _FIELDS:
            doc[name] = getattr(self, name).tolist()
        doc["alive"] = self.alive.astype(int).tolist()
        text = json.dumps(doc, indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text


def classify_active(pset: PrimitiveSet, threshold: float = ACTIVE_OPACITY_THRESHOLD):
    """Split alive primitives into active/dead by activated opacity.

    Returns ``(n_active, n_dead, active_mask)`` where the mask is true
    only for alive rows with opacity strictly above the threshold.
    """
    if not (0.0 < threshold < 1.0):
        raise DomainError("threshold must lie in (0, 1)")
    active = pset.alive & (pset.opacity() > threshold)
    n_active = int(active.sum())
    return n_active, pset.n_alive - n_active, active
