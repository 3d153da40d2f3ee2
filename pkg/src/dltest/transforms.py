"""Affine image transforms used as metamorphic relations.

Every transform is an inverse mapping: output pixel ``p = (row, col)``
samples the input at ``A @ (p - center) + center - t`` with the matrix ``A``
and translation ``t`` listed below. The center of a 28x28 image is
(13.5, 13.5); samples falling outside the frame read as 0.

========  =====================================  ======================
kind      A                                      t
========  =====================================  ======================
rotation  [[cos a, -sin a], [sin a, cos a]]      0
shift     identity                               (dy * H, dx * W)
shear     [[1, -sin s], [0, cos s]]              0
zoom      [[z, 0], [0, z]]                       0
========  =====================================  ======================

A zoom factor ``z > 1`` therefore shrinks the digit (the frame covers a
larger region of the source), the usual augmentation-library convention.

In ``random`` mode a scalar parameter is a maximum: the realized angle,
fraction or shear is drawn uniformly from ``[-max, +max]`` and the zoom
factor from ``[lo, hi]``. In ``fixed`` mode the maximum itself is used
(zoom: the midpoint of the range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("rotation", "shift", "shear", "zoom", "hflip", "compose")
MODES = ("fixed", "random")
INTERPOLATIONS = ("bilinear", "nearest")


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: tuple = ()
    mode: str = "random"
    seed: int = 0
    children: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "children", tuple(self.children))
        _validate(self)

    @property
    def is_identity(self) -> bool:
        if self.kind == "compose":
            return all(c.is_identity for c in self.children)
        if self.kind == "zoom":
            return self.params == (1.0, 1.0)
        if self.kind == "hflip":
            return False
        return all(p == 0 for p in self.params)

    def label(self) -> str:
        """Short human-readable name, e.g. ``rotation30`` or ``rotation30+shift0.1``."""
        if self.kind == "compose":
            return "+".join(c.label() for c in self.children) or "identity"
        if self.kind == "hflip":
            return "hflip"
        if self.kind == "zoom":
            return f"zoom[{_num(self.params[0])},{_num(self.params[1])}]"
        if self.kind == "shift" and self.params[0] != self.params[1]:
            return f"shift{_num(self.params[0])}x{_num(self.params[1])}"
        return f"{self.kind}{_num(self.params[0])}"

    def to_dict(self) -> dict:
        if self.kind == "compose":
            return {"kind": "compose", "specs": [c.to_dict() for c in self.children]}
        return {"kind": self.kind, "params": [_num(p) for p in self.params],
                "mode": self.mode, "seed": self.seed}

    @classmethod
    def from_dict(cls, data) -> "TransformSpec":
        if data.get("kind") == "compose":
            return compose([cls.from_dict(d) for d in data.get("specs", [])])
        return cls(data["kind"], tuple(data.get("params", ())), data.get("mode", "random"),
                   int(data.get("seed", 0)))


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def _validate(spec):
    kind, p = spec.kind, spec.params
    if kind not in KINDS:
        raise TransformError(f"unknown transform kind {kind!r}")
    if spec.mode not in MODES:
        raise TransformError(f"mode must be one of {MODES}, got {spec.mode!r}")
    if kind == "compose":
        return
    if spec.children:
        raise TransformError("only compose takes child transforms")
    if kind == "rotation":
        if len(p) != 1 or not 0 <= p[0] <= 180:
            raise TransformError(f"rotation max_degrees must be in [0, 180], got {list(p)}")
    elif kind == "shift":
        if len(p) == 1:
            p = (p[0], p[0])
            object.__setattr__(spec, "params", p)
        if len(p) != 2 or not all(0 <= v <= 1 for v in p):
            raise TransformError(f"shift fractions must be in [0, 1], got {list(p)}")
    elif kind == "shear":
        if len(p) != 1 or not 0 <= p[0] < 90:
            raise TransformError(f"shear max_degrees must be in [0, 90), got {list(p)}")
    elif kind == "zoom":
        if len(p) == 1:
            p = (p[0], p[0])
            object.__setattr__(spec, "params", p)
        if len(p) != 2 or not 0 < p[0] <= p[1]:
            raise TransformError(f"zoom range needs 0 < lo <= hi, got {list(p)}")
    elif kind == "hflip" and p:
        raise TransformError("hflip takes no parameters")


# convenience constructors

def rotation(max_degrees, mode="random", seed=0):
    return TransformSpec("rotation", (max_degrees,), mode, seed)


def shift(fraction_x, fraction_y=None, mode="random", seed=0):
    return TransformSpec("shift", (fraction_x, fraction_x if fraction_y is None else fraction_y), mode, seed)


def shear(max_degrees, mode="random", seed=0):
    return TransformSpec("shear", (max_degrees,), mode, seed)


def zoom(lo, hi=None, mode="random", seed=0):
    return TransformSpec("zoom", (lo, lo if hi is None else hi), mode, seed)


def hflip_spec():
    return TransformSpec("hflip")


def compose(specs) -> TransformSpec:
    """Sequential composition, applied in list order; ``compose([])`` is the identity."""
    return TransformSpec("compose", children=tuple(specs))


IDENTITY = compose([])


# ---------------------------------------------------------------------------
# realization

def realize(spec: TransformSpec, draw_seed: int) -> float | tuple:
    """The concrete parameter used for one image.

    Returns an angle in degrees (rotation, shear), ``(dx, dy)`` fractions
    (shift) or a zoom factor. Pure function of ``(spec.seed, draw_seed)``.
    """
    p = spec.params
    if spec.mode == "fixed":
        if spec.kind == "shift":
            return (p[0], p[1])
        if spec.kind == "zoom":
            return (p[0] + p[1]) / 2
        return p[0]
    rng = np.random.default_rng([spec.seed, int(draw_seed)])
    if spec.kind == "shift":
        return (rng.uniform(-p[0], p[0]), rng.uniform(-p[1], p[1]))
    if spec.kind == "zoom":
        return rng.uniform(p[0], p[1])
    return rng.uniform(-p[0], p[0])


def affine_parameters(spec: TransformSpec, value, height: int, width: int):
    """``(A, t)`` of the inverse mapping for a realized parameter value."""
    if spec.kind == "rotation":
        a = math.radians(value)
        return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]), np.zeros(2)
    if spec.kind == "shift":
        dx, dy = value
        return np.eye(2), np.array([dy * height, dx * width])
    if spec.kind == "shear":
        s = math.radians(value)
        return np.array([[1.0, -math.sin(s)], [0.0, math.cos(s)]]), np.zeros(2)
    if spec.kind == "zoom":
        return np.eye(2) * value, np.zeros(2)
    raise TransformError(f"{spec.kind} is not an affine primitive")


def _sample(images, mats, trans, interpolation):
    """Resample ``images`` (n, c, h, w) with per-image inverse maps."""
    n, ch, h, w = images.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64) - cy,
                         np.arange(w, dtype=np.float64) - cx, indexing="ij")
    sr = mats[:, 0, 0, None, None] * rr + mats[:, 0, 1, None, None] * cc + cy - trans[:, 0, None, None]
    sc = mats[:, 1, 0, None, None] * rr + mats[:, 1, 1, None, None] * cc + cx - trans[:, 1, None, None]
    src = images.astype(np.float64).reshape(n, ch, h * w)

    def gather(r, c):
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        flat = np.where(ok, r * w + c, 0).reshape(n, 1, h * w)
        vals = np.take_along_axis(src, np.broadcast_to(flat, (n, ch, h * w)), axis=2)
        return np.where(ok[:, None], vals.reshape(n, ch, h, w), 0.0)

    if interpolation == "nearest":
        out = gather(np.floor(sr + 0.5).astype(np.int64), np.floor(sc + 0.5).astype(np.int64))
    else:
        r0 = np.floor(sr)
        c0 = np.floor(sc)
        fr = (sr - r0)[:, None]
        fc = (sc - c0)[:, None]
        r0 = r0.astype(np.int64)
        c0 = c0.astype(np.int64)
        out = ((1 - fr) * (1 - fc) * gather(r0, c0) + (1 - fr) * fc * gather(r0, c0 + 1)
               + fr * (1 - fc) * gather(r0 + 1, c0) + fr * fc * gather(r0 + 1, c0 + 1))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def hflip(image) -> np.ndarray:
    """Reverse the column order (works on a single image or a batch)."""
    return np.ascontiguousarray(np.asarray(image)[..., ::-1])


def apply_batch(spec: TransformSpec, images, draw_seeds, interpolation: str = "bilinear") -> np.ndarray:
    """Transform a batch ``(n, c, h, w)``; ``draw_seeds[i]`` drives image ``i``."""
    if interpolation not in INTERPOLATIONS:
        raise TransformError(f"interpolation must be one of {INTERPOLATIONS}")
    images = np.asarray(images, dtype=np.float32)
    draw_seeds = np.broadcast_to(np.asarray(draw_seeds, dtype=np.int64), (len(images),))
    if spec.kind == "compose":
        out = images.copy()
        for child in spec.children:
            out = apply_batch(child, out, draw_seeds, interpolation)
        return out
    if spec.kind == "hflip":
        return hflip(images)
    h, w = images.shape[2], images.shape[3]
    mats = np.empty((len(images), 2, 2))
    trans = np.empty((len(images), 2))
    for i, d in enumerate(draw_seeds):
        mats[i], trans[i] = affine_parameters(spec, realize(spec, d), h, w)
    return _sample(images, mats, trans, interpolation)


def apply(spec: TransformSpec, image, draw_seed: int = 0, interpolation: str = "bilinear") -> np.ndarray:
    """Transform one image of shape ``(c, h, w)``; output has the same shape and stays in [0, 1]."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise TransformError(f"expected a single (c, h, w) image, got shape {image.shape}")
    return apply_batch(spec, image[None], [draw_seed], interpolation)[0]


def augmenter(spec: TransformSpec, interpolation: str = "bilinear"):
    """Training-time hook: fresh seeded draws for every batch (see ``tensornet.train``)."""
    def augment(images, rng):
        seeds = rng.integers(0, 2**62, size=len(images))
        return apply_batch(spec, images, seeds, interpolation)
    return augment
