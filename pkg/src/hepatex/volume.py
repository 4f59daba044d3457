"""Single-phase 3D scalar volumes with physical voxel spacing.

Data is indexed ``[x, y, z]`` (shape W,H,D). The z spacing of dynamic CT
is typically several times coarser than in-plane spacing; everything
downstream that cares about physical scale reads ``spacing_mm``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PHASES = ("NC", "A", "V", "D")
VALID_PHASES = PHASES + ("UNKNOWN",)


@dataclass
class Volume:
    data: np.ndarray                       # (W,H,D)
    spacing_mm: tuple[float, float, float]
    phase: str = "UNKNOWN"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise ValueError(f"spacing must be three positive values, got {self.spacing_mm}")
        if self.phase not in VALID_PHASES:
            raise ValueError(f"unknown phase {self.phase!r}, expected one of {VALID_PHASES}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


def _axis_coords(src: int, tgt: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned source coordinates for a resampled axis."""
    scale = (src - 1) / (tgt - 1) if tgt > 1 else 0.0
    coords = np.arange(tgt) * scale
    i0 = np.minimum(coords.astype(int), src - 2)
    t = coords - i0
    return i0, i0 + 1, t


def trilinear_resample(vol: Volume, target_shape: tuple[int, int, int]) -> Volume:
    """Resample a volume onto a new grid with corner-aligned trilinear
    interpolation. Spacing is rescaled so the physical extent
    (src-1)*spacing of each axis is preserved."""
    W, H, D = vol.shape
    if min(W, H, D) < 2:
        raise ValueError(f"source extents must all be >= 2, got {vol.shape}")
    tw, th, td = (int(t) for t in target_shape)
    if min(tw, th, td) < 1:
        raise ValueError(f"degenerate target shape {target_shape}")

    x0, x1, tx = _axis_coords(W, tw)
    y0, y1, ty = _axis_coords(H, th)
    z0, z1, tz = _axis_coords(D, td)

    data = vol.data
    a = data[x0] * (1 - tx)[:, None, None] + data[x1] * tx[:, None, None]
    b = a[:, y0] * (1 - ty)[None, :, None] + a[:, y1] * ty[None, :, None]
    out = b[:, :, z0] * (1 - tz)[None, None, :] + b[:, :, z1] * tz[None, None, :]
    out = out.astype(data.dtype, copy=False)

    def respace(s, src, tgt):
        return s * (src - 1) / (tgt - 1) if tgt > 1 else s * (src - 1)

    spacing = (
        respace(vol.spacing_mm[0], W, tw),
        respace(vol.spacing_mm[1], H, th),
        respace(vol.spacing_mm[2], D, td),
    )
    return Volume(out, spacing, vol.phase)
