"""Pose vectors, frames, the cyclic sequence buffer and edit-window arithmetic.

All frame indices in this module are 1-based; the wire layer converts to
0-based for clients.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

POSE_DIM = 228
BODY_SLICE = slice(0, 75)
HAND_SLICE = slice(75, 218)
AU_SLICE = slice(218, 228)


def check_pose(values: np.ndarray | Sequence[float]) -> np.ndarray:
    """Validate and normalize a pose vector to a float64 array of length 228."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (POSE_DIM,):
        raise ValueError(f"pose must have {POSE_DIM} values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("pose contains non-finite values")
    return arr


@dataclass(frozen=True)
class Frame:
    pose: np.ndarray
    timestamp: int  # 1-based frame index

    def copy(self) -> "Frame":
        return Frame(self.pose.copy(), self.timestamp)


@dataclass(frozen=True)
class WindowParams:
    delta: int = 50
    k: int = 8

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValueError(f"window delta must be >= 1, got {self.delta}")
        if self.k < 0:
            raise ValueError(f"context length k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class EditEvent:
    t_edit: int
    patch: object  # sign_json.Patch; kept opaque here to avoid a cycle
    seq_no: int


def compute_window(t_edit: int, delta: int, length: int) -> tuple[int, int]:
    """Edit window [t_min, t_max] of width <= delta around t_edit, inside [1, length].

    Integer floor division for delta/2 keeps t_edit inside the window.
    """
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    if not 1 <= t_edit <= length:
        raise IndexError(f"t_edit {t_edit} outside [1, {length}]")
    t_min = max(1, t_edit - delta // 2)
    t_max = min(length, t_min + delta - 1)
    return t_min, t_max


class SeqBuffer:
    """Fixed-capacity cyclic frame store with 1-based slicing and local write-back.

    Appends past capacity raise instead of evicting; live sessions size
    capacity from the configured maximum utterance length.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._data = np.zeros((capacity, POSE_DIM), dtype=np.float64)
        self._start = 0  # physical index of logical frame 1
        self._length = 0

    def __len__(self) -> int:
        return self._length

    def _phys(self, t: int) -> int:
        return (self._start + t - 1) % self.capacity

    def append(self, pose: np.ndarray | Sequence[float]) -> int:
        """Append one frame; returns its 1-based timestamp."""
        if self._length >= self.capacity:
            raise IndexError(f"buffer full at capacity {self.capacity}")
        arr = check_pose(pose)
        self._length += 1
        self._data[self._phys(self._length)] = arr
        return self._length

    def slice(self, a: int, b: int) -> list[Frame]:
        """Copies of frames a..b inclusive (1-based). The buffer is unchanged."""
        if not (1 <= a <= b <= self._length):
            raise IndexError(f"slice [{a}, {b}] outside [1, {self._length}]")
        return [Frame(self._data[self._phys(t)].copy(), t) for t in range(a, b + 1)]

    def get(self, t: int) -> Frame:
        if not 1 <= t <= self._length:
            raise IndexError(f"frame {t} outside [1, {self._length}]")
        return Frame(self._data[self._phys(t)].copy(), t)

    def write_back(self, start: int, frames: Sequence[Frame] | Sequence[np.ndarray]) -> None:
        """Replace frames [start, start + len(frames) - 1]; no implicit append."""
        n = len(frames)
        if n == 0:
            return
        if start < 1 or start + n - 1 > self._length:
            raise IndexError(
                f"write_back [{start}, {start + n - 1}] outside [1, {self._length}]"
            )
        for i, f in enumerate(frames):
            pose = f.pose if isinstance(f, Frame) else f
            self._data[self._phys(start + i)] = check_pose(pose)

    def poses(self) -> np.ndarray:
        """Snapshot of all poses as a (T, 228) array (copy)."""
        idx = [(self._start + t) % self.capacity for t in range(self._length)]
        return self._data[idx].copy()

    def checksum(self) -> int:
        """CRC over the logical frame contents; order-sensitive."""
        return zlib.crc32(self.poses().tobytes())
