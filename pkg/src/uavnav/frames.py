"""Rigid transforms between the world, camera and grid-map frames.

All three frames are metric.  Grid cells are tied to the map frame by a
cell size in meters: cell ``(r, c)`` covers ``[c*s, (c+1)*s) x [r*s, (r+1)*s)``
in map ``(x, y)`` and is represented by its center at ``z = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD, CAMERA, MAP = "W", "C", "M"
_FRAMES = (WORLD, CAMERA, MAP)


class FrameError(ValueError):
    """Point used in a frame it does not belong to."""


def _trig(angle: float) -> tuple[float, float]:
    # snap to exact values so quarter turns stay exactly orthonormal
    c, s = np.cos(angle), np.sin(angle)
    return float(np.round(c, 15)) + 0.0, float(np.round(s, 15)) + 0.0


def _check_pose(T: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got {T.shape}")
    if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError("pose bottom row must be (0, 0, 0, 1)")
    Rm = T[:3, :3]
    if np.abs(Rm @ Rm.T - np.eye(3)).max() > tol:
        raise ValueError("rotation block is not orthonormal")
    return T


@dataclass(frozen=True)
class Pose4:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _check_pose(self.matrix))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def __matmul__(self, other: "Pose4") -> "Pose4":
        return Pose4(self.matrix @ other.matrix)

    def inverse(self) -> "Pose4":
        # closed form for a rigid transform; a generic inverse would do too
        Rt = self.rotation.T
        T = np.eye(4)
        T[:3, :3] = Rt
        T[:3, 3] = -Rt @ self.translation
        return Pose4(T)


@dataclass(frozen=True)
class FramePoint:
    frame: str
    xyz: tuple

    def __post_init__(self):
        if self.frame not in _FRAMES:
            raise FrameError(f"unknown frame {self.frame!r}")
        xyz = tuple(float(v) for v in self.xyz)
        if len(xyz) != 3 or not all(np.isfinite(xyz)):
            raise ValueError("a point needs three finite coordinates")
        object.__setattr__(self, "xyz", xyz)

    @property
    def homogeneous(self) -> np.ndarray:
        return np.array([*self.xyz, 1.0])

    def require(self, frame: str) -> "FramePoint":
        if self.frame != frame:
            raise FrameError(f"expected a point in frame {frame}, got {self.frame}")
        return self


def camera_from_world(origin) -> Pose4:
    """Half turn about y, translated by the camera origin expressed in world coordinates."""
    c, s = _trig(np.pi)
    x, y, z = origin
    return Pose4(np.array([[c, 0.0, s, x],
                           [0.0, 1.0, 0.0, y],
                           [-s, 0.0, c, z],
                           [0.0, 0.0, 0.0, 1.0]]))


def map_from_camera(origin) -> Pose4:
    """Quarter turn about z followed by a half turn about x, plus the map origin in camera coordinates."""
    ca, sa = _trig(np.pi / 2)
    cb, sb = _trig(np.pi)
    x, y, z = origin
    return Pose4(np.array([[ca, -sa, 0.0, x],
                           [cb * sa, cb * ca, -sb, y],
                           [sb * sa, sb * ca, cb, z],
                           [0.0, 0.0, 0.0, 1.0]]))


def map_from_world(camera_origin, map_origin) -> Pose4:
    return map_from_camera(map_origin) @ camera_from_world(camera_origin)


def _apply(T: Pose4, p: FramePoint, frame: str) -> FramePoint:
    return FramePoint(frame, tuple((T.matrix @ p.homogeneous)[:3]))


def world_to_camera(p: FramePoint, origin) -> FramePoint:
    return _apply(camera_from_world(origin), p.require(WORLD), CAMERA)


def camera_to_map(p: FramePoint, origin) -> FramePoint:
    return _apply(map_from_camera(origin), p.require(CAMERA), MAP)


def map_to_camera(p: FramePoint, origin) -> FramePoint:
    return _apply(map_from_camera(origin).inverse(), p.require(MAP), CAMERA)


def world_to_map(p: FramePoint, camera_origin, map_origin) -> FramePoint:
    return _apply(map_from_world(camera_origin, map_origin), p.require(WORLD), MAP)


def map_to_world(p: FramePoint, camera_origin, map_origin) -> FramePoint:
    T = map_from_world(camera_origin, map_origin).matrix
    if abs(np.linalg.det(T)) < 1e-12:
        raise np.linalg.LinAlgError("map pose is singular")
    return FramePoint(WORLD, tuple(np.linalg.solve(T, p.require(MAP).homogeneous)[:3]))


def cell_center(cell, cell_size: float) -> FramePoint:
    """Map-frame point at the center of grid cell ``(row, col)``."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    r, c = cell
    return FramePoint(MAP, ((c + 0.5) * cell_size, (r + 0.5) * cell_size, 0.0))


def point_to_cell(p: FramePoint, cell_size: float) -> tuple[int, int]:
    x, y, _ = p.require(MAP).xyz
    return int(np.floor(y / cell_size)), int(np.floor(x / cell_size))


def cell_to_world(cell, cell_size: float, camera_origin, map_origin) -> FramePoint:
    return map_to_world(cell_center(cell, cell_size), camera_origin, map_origin)


def world_to_cell(p: FramePoint, cell_size: float, camera_origin, map_origin) -> tuple[int, int]:
    return point_to_cell(world_to_map(p, camera_origin, map_origin), cell_size)
