"""Differentiable geometric primitives.

Conventions used throughout the package:
  - World frame: right-handed, +Z up. Object-centric scenes live in a cube
    [-extent, extent]^3 around the origin (the canonical frame).
  - Camera frame: +X right, +Y down, +Z forward (optical axis).
    Extrinsics are world-to-camera: p_cam = R @ p_world + t.
  - Pixels: (u, v) with u rightward, v downward, origin at the center of the
    top-left pixel. Pixel (row i, col j) has center (u=j, v=i).

All operations are pure functions of their inputs (plus an explicit seed or
generator) and preserve the dtype of their tensor inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

# Points with camera-frame depth below this are behind the camera plane and
# are excluded from sampling and splatting.
DEPTH_EPS = 1e-4

_ORTHO_TOL = 1e-6


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.tensor(x, dtype=dtype if dtype is not None else torch.float64)


@dataclass
class Camera:
    """Pinhole camera: 3x3 intrinsics, 3x4 world-to-camera extrinsics.

    Attributes:
        intrinsics: (3, 3) matrix [[fx, 0, cx], [0, fy, cy], [0, 0, 1]], pixels.
        extrinsics: (3, 4) matrix [R | t], R orthonormal with det +1.
        image_size: (H, W), positive integers.
    """

    intrinsics: Tensor
    extrinsics: Tensor
    image_size: tuple[int, int]

    def __post_init__(self):
        self.intrinsics = _as_tensor(self.intrinsics)
        self.extrinsics = _as_tensor(self.extrinsics)
        if tuple(self.intrinsics.shape) != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {tuple(self.intrinsics.shape)}")
        if tuple(self.extrinsics.shape) != (3, 4):
            raise ValueError(f"extrinsics must be 3x4, got {tuple(self.extrinsics.shape)}")
        if not bool(torch.isfinite(self.intrinsics).all() & torch.isfinite(self.extrinsics).all()):
            raise ValueError("camera matrices contain non-finite values")
        h, w = self.image_size
        if int(h) <= 0 or int(w) <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        self.image_size = (int(h), int(w))
        bottom = self.intrinsics[2].double()
        if not torch.allclose(bottom, torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64), atol=_ORTHO_TOL):
            raise ValueError("intrinsics row 3 must be (0, 0, 1)")
        r = self.rotation.double()
        if not torch.allclose(r.T @ r, torch.eye(3, dtype=torch.float64), atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(float(torch.linalg.det(r)) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have det +1")

    @property
    def rotation(self) -> Tensor:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> Tensor:
        return self.extrinsics[:, 3]

    @property
    def center(self) -> Tensor:
        """Camera optical center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "intrinsics": [float(x) for x in self.intrinsics.reshape(-1)],
            "extrinsics": [float(x) for x in self.extrinsics.reshape(-1)],
            "image_size": [self.image_size[0], self.image_size[1]],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            k = torch.tensor(d["intrinsics"], dtype=torch.float64).reshape(3, 3)
            e = torch.tensor(d["extrinsics"], dtype=torch.float64).reshape(3, 4)
            h, w = d["image_size"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed camera record: {exc}") from exc
        return cls(intrinsics=k, extrinsics=e, image_size=(int(h), int(w)))


@dataclass
class PointSet:
    """k world points sampled inside the cube [-extent, extent]^3."""

    coords: Tensor
    extent: float = 1.0

    def __post_init__(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.coords.shape[0] < 1:
            raise ValueError(f"coords must be (k, 3) with k > 0, got {tuple(self.coords.shape)}")
        if not bool(torch.isfinite(self.coords).all()):
            raise ValueError("coords contain non-finite values")
        if float(self.coords.abs().max()) > self.extent + 1e-6:
            raise ValueError("coords exceed the configured cube extent")

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass
class EncodedPoints:
    """Trigonometric coordinate encoding; width is 3 * 2 * levels."""

    values: Tensor
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        width = 3 * 2 * self.levels
        if self.values.ndim != 2 or self.values.shape[1] != width:
            raise ValueError(f"values must be (k, {width}), got {tuple(self.values.shape)}")

    @property
    def width(self) -> int:
        return self.values.shape[1]


def project_points(points: PointSet | Tensor, camera: Camera) -> tuple[Tensor, Tensor, Tensor]:
    """Project world points through a pinhole camera.

    Args:
        points: PointSet or raw (k, 3) tensor of world coordinates.
        camera: the projecting camera.

    Returns:
        pixels: (k, 2) continuous pixel coordinates (u, v).
        depths: (k,) camera-frame z values.
        valid: (k,) bool, True iff depth > DEPTH_EPS and the pixel lies
            inside [0, W) x [0, H).

    Differentiable w.r.t. point coordinates for valid points. Points at or
    behind the camera plane get a clamped denominator so the op stays finite;
    they are flagged invalid.
    """
    coords = points.coords if isinstance(points, PointSet) else points
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"points must be (k, 3), got {tuple(coords.shape)}")
    if not bool(torch.isfinite(coords).all()):
        raise ValueError("points contain non-finite values")
    r = camera.rotation.to(coords.dtype)
    t = camera.translation.to(coords.dtype)
    k = camera.intrinsics.to(coords.dtype)
    cam = coords @ r.T + t
    hom = cam @ k.T
    z = hom[:, 2]
    denom = z.clamp_min(DEPTH_EPS)
    pixels = hom[:, :2] / denom.unsqueeze(1)
    h, w = camera.image_size
    u, v = pixels[:, 0], pixels[:, 1]
    valid = (z > DEPTH_EPS) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    return pixels, z, valid


def relative_transform(from_pose: Camera | Tensor, to_pose: Camera | Tensor) -> Tensor:
    """Rigid transform mapping coordinates of frame `from` into frame `to`.

    Both arguments are world-to-camera extrinsics (3, 4) or Cameras. The
    result satisfies p_to = R_rel @ p_from + t_rel and composes:
    rel(A, C) == rel(B, C) . rel(A, B).
    """
    ea = from_pose.extrinsics if isinstance(from_pose, Camera) else from_pose
    eb = to_pose.extrinsics if isinstance(to_pose, Camera) else to_pose
    for e in (ea, eb):
        if tuple(e.shape) != (3, 4):
            raise ValueError(f"extrinsics must be 3x4, got {tuple(e.shape)}")
        if not bool(torch.isfinite(e).all()):
            raise ValueError("extrinsics contain non-finite values")
    ra, ta = ea[:, :3], ea[:, 3]
    rb, tb = eb[:, :3], eb[:, 3].to(ra.dtype)
    rel_r = rb.to(ra.dtype) @ ra.T
    rel_t = tb - rel_r @ ta
    return torch.cat([rel_r, rel_t.unsqueeze(1)], dim=1)


def compose_transforms(first: Tensor, second: Tensor) -> Tensor:
    """Composition second . first of two (3, 4) rigid transforms."""
    r = second[:, :3] @ first[:, :3]
    t = second[:, :3] @ first[:, 3] + second[:, 3]
    return torch.cat([r, t.unsqueeze(1)], dim=1)


def bilinear_sample(feature_map: Tensor, pixels: Tensor) -> Tensor:
    """Sample a (C, H, W) feature map at continuous pixel locations.

    Samples outside the interpolatable region [0, W-1] x [0, H-1] return
    all-zero features. Differentiable w.r.t. pixel coordinates.
    """
    if feature_map.ndim != 3:
        raise ValueError(f"feature_map must be (C, H, W), got {tuple(feature_map.shape)}")
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be (k, 2), got {tuple(pixels.shape)}")
    if not bool(torch.isfinite(pixels).all()):
        raise ValueError("pixels contain non-finite values")
    c, h, w = feature_map.shape
    u = pixels[:, 0]
    v = pixels[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    x0 = u.detach().floor().clamp(0, w - 1)
    y0 = v.detach().floor().clamp(0, h - 1)
    fx = (u - x0).clamp(0, 1)
    fy = (v - y0).clamp(0, 1)
    x0l = x0.long()
    y0l = y0.long()
    x1l = (x0l + 1).clamp(max=w - 1)
    y1l = (y0l + 1).clamp(max=h - 1)

    flat = feature_map.reshape(c, h * w)

    def gather(yi, xi):
        return flat[:, yi * w + xi].T  # (k, C)

    wx0, wx1 = (1 - fx).unsqueeze(1), fx.unsqueeze(1)
    wy0, wy1 = (1 - fy).unsqueeze(1), fy.unsqueeze(1)
    out = (
        gather(y0l, x0l) * wy0 * wx0
        + gather(y0l, x1l) * wy0 * wx1
        + gather(y1l, x0l) * wy1 * wx0
        + gather(y1l, x1l) * wy1 * wx1
    )
    return out * inside.unsqueeze(1).to(out.dtype)


def positional_encode(points: PointSet | Tensor, levels: int) -> EncodedPoints:
    """Lift coordinates to (sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^{L-1} pi x)).

    Applied to each coordinate individually; output layout is coordinate-major
    with (sin, cos) adjacent per frequency, width 3 * 2 * levels.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    coords = points.coords if isinstance(points, PointSet) else points
    freqs = (2.0 ** torch.arange(levels, dtype=coords.dtype, device=coords.device)) * math.pi
    ang = coords.unsqueeze(-1) * freqs  # (k, 3, L)
    enc = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (k, 3, L, 2)
    return EncodedPoints(values=enc.reshape(coords.shape[0], -1), levels=levels)


def sample_cube_points(
    k: int,
    extent: float = 1.0,
    seed: int | None = None,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> PointSet:
    """Draw k i.i.d. uniform points from [-extent, extent]^3.

    Identical seed (or generator state) yields identical points.
    """
    if k <= 0:
        raise ValueError("k must be > 0")
    if extent <= 0:
        raise ValueError("extent must be > 0")
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else int(seed))
    coords = (torch.rand(k, 3, generator=generator, dtype=dtype) * 2.0 - 1.0) * extent
    return PointSet(coords=coords, extent=extent)


def orbit_camera(
    azimuth_deg: float,
    elevation_deg: float,
    distance: float,
    image_size: tuple[int, int],
    fov_deg: float = 55.0,
) -> Camera:
    """Camera on a sphere around the origin, looking at the origin.

    Azimuth rotates around +Z starting from the +X axis; elevation lifts the
    camera above the XY plane. Square-pixel intrinsics are derived from the
    horizontal field of view; principal point at the image center.
    """
    h, w = image_size
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    pos = torch.tensor(
        [
            distance * math.cos(el) * math.cos(az),
            distance * math.cos(el) * math.sin(az),
            distance * math.sin(el),
        ],
        dtype=torch.float64,
    )
    forward = -pos / torch.linalg.norm(pos)
    world_up = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    right = torch.linalg.cross(forward, world_up)
    nrm = torch.linalg.norm(right)
    if float(nrm) < 1e-8:
        raise ValueError("camera looking straight along the up axis is degenerate")
    right = right / nrm
    down = torch.linalg.cross(forward, right)
    r = torch.stack([right, down, forward])
    t = -r @ pos
    f = 0.5 * w / math.tan(math.radians(fov_deg) / 2.0)
    k = torch.tensor(
        [[f, 0.0, (w - 1) / 2.0], [0.0, f, (h - 1) / 2.0], [0.0, 0.0, 1.0]],
        dtype=torch.float64,
    )
    return Camera(intrinsics=k, extrinsics=torch.cat([r, t.unsqueeze(1)], dim=1), image_size=(h, w))
