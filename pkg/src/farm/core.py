"""Canonical voxel-grid types shared across the package.

Conventions used everywhere:

- Volumes are dense arrays of shape (L, W, H) in dBm, C-order, axis order
  (l, w, h) with h fastest when flattened.
- Patch enumeration is row-major over the patch grid with the same axis
  order, so patch ids are reproducible across runs and platforms.
- Serialized volumes are little-endian float32 blobs; building occupancy
  serializes as uint8.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ANTENNA_TYPES = ("iso", "dir30", "dir60", "dir120")


@dataclass(frozen=True)
class VoxelGridSpec:
    """Geometry of the discretized region: voxel counts, edge length, origin."""

    L: int
    W: int
    H: int
    delta: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.L, self.W, self.H) < 1:
            raise ValueError(f"voxel counts must be >= 1, got {(self.L, self.W, self.H)}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.L, self.W, self.H)

    @property
    def n_voxels(self) -> int:
        return self.L * self.W * self.H

    def contains(self, p: tuple[int, int, int]) -> bool:
        l, w, h = p
        return 0 <= l < self.L and 0 <= w < self.W and 0 <= h < self.H

    def to_dict(self) -> dict:
        return {"L": self.L, "W": self.W, "H": self.H, "delta": self.delta,
                "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "VoxelGridSpec":
        return cls(L=int(d["L"]), W=int(d["W"]), H=int(d["H"]),
                   delta=float(d["delta"]), origin=tuple(d.get("origin", (0.0, 0.0, 0.0))))


@dataclass(frozen=True)
class BsConfig:
    """Transmitter deployment: voxel position, power, carrier, antenna."""

    p_tx: tuple[int, int, int]
    P_tx: float          # dBm
    f_c: float           # Hz
    antenna_type: str = "iso"
    boresight_az: float = 0.0   # radians
    boresight_el: float = 0.0   # radians

    def __post_init__(self):
        if self.f_c <= 0:
            raise ValueError(f"carrier frequency must be positive, got {self.f_c}")
        if self.antenna_type not in ANTENNA_TYPES:
            raise ValueError(f"unknown antenna type {self.antenna_type!r}, "
                             f"expected one of {ANTENNA_TYPES}")

    def validate_in_grid(self, spec: VoxelGridSpec) -> None:
        if not spec.contains(self.p_tx):
            raise ValueError(f"transmitter {self.p_tx} outside grid {spec.shape}")

    def to_dict(self) -> dict:
        return {"p_tx": list(self.p_tx), "P_tx": self.P_tx, "f_c": self.f_c,
                "antenna_type": self.antenna_type,
                "boresight_az": self.boresight_az, "boresight_el": self.boresight_el}

    @classmethod
    def from_dict(cls, d: dict) -> "BsConfig":
        return cls(p_tx=tuple(int(v) for v in d["p_tx"]), P_tx=float(d["P_tx"]),
                   f_c=float(d["f_c"]), antenna_type=d.get("antenna_type", "iso"),
                   boresight_az=float(d.get("boresight_az", 0.0)),
                   boresight_el=float(d.get("boresight_el", 0.0)))


@dataclass(frozen=True)
class NormRange:
    """Affine map between dBm and the [-1, 1] model range.

    Bounds come from the dataset manifest, not per-volume extremes, so every
    split shares one map and the -2 missing-condition sentinel stays strictly
    below all valid normalized values.
    """

    min_dbm: float
    max_dbm: float

    def __post_init__(self):
        if not self.max_dbm > self.min_dbm:
            raise ValueError(f"degenerate normalization range "
                             f"[{self.min_dbm}, {self.max_dbm}]")

    @property
    def span(self) -> float:
        return self.max_dbm - self.min_dbm

    def normalize(self, x, clamp: bool = True):
        y = 2.0 * (np.asarray(x, dtype=np.float64) - self.min_dbm) / self.span - 1.0
        if clamp:
            y = np.clip(y, -1.0, 1.0)
        return y

    def denormalize(self, y):
        return (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * self.span + self.min_dbm

    def to_dict(self) -> dict:
        return {"min_dbm": self.min_dbm, "max_dbm": self.max_dbm}

    @classmethod
    def from_dict(cls, d: dict) -> "NormRange":
        return cls(min_dbm=float(d["min_dbm"]), max_dbm=float(d["max_dbm"]))


@dataclass(frozen=True)
class ArmVolume:
    """Dense RSS volume in dBm plus its grid spec and normalization map."""

    values: np.ndarray
    spec: VoxelGridSpec
    norm: NormRange | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.spec.shape:
            raise ValueError(f"volume shape {v.shape} does not match spec {self.spec.shape}")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)

    def normalized(self) -> np.ndarray:
        if self.norm is None:
            raise ValueError("volume has no normalization range attached")
        return self.norm.normalize(self.values)

    def with_norm(self, norm: NormRange) -> "ArmVolume":
        return ArmVolume(values=np.array(self.values), spec=self.spec, norm=norm)


@dataclass(frozen=True)
class BuildingGrid:
    """Binary occupancy volume; buildings are ground-attached columns."""

    occupancy: np.ndarray
    spec: VoxelGridSpec

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.uint8)
        if occ.shape != self.spec.shape:
            raise ValueError(f"occupancy shape {occ.shape} does not match spec {self.spec.shape}")
        if not np.isin(occ, (0, 1)).all():
            raise ValueError("occupancy must be binary")
        if self.spec.H > 1 and np.any(np.diff(occ.astype(np.int8), axis=2) > 0):
            raise ValueError("occupancy columns must be ground-attached "
                             "(non-increasing with height)")
        object.__setattr__(self, "occupancy", occ)
        self.occupancy.setflags(write=False)

    @property
    def fraction_occupied(self) -> float:
        return float(self.occupancy.mean())


@dataclass(frozen=True)
class SparseObservation:
    """Observed RSS samples at a subset of voxels (flat C-order indices)."""

    indices: np.ndarray
    values: np.ndarray
    sample_rate: float
    spec: VoxelGridSpec

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or vals.shape != idx.shape:
            raise ValueError("indices and values must be 1-D arrays of equal length")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("observation indices must be unique")
        if idx.size and (idx.min() < 0 or idx.max() >= self.spec.n_voxels):
            raise ValueError("observation indices out of grid bounds")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ValueError(f"sample_rate must lie in (0, 1], got {self.sample_rate}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.indices.size)

    def coords(self) -> np.ndarray:
        """(S, 3) integer voxel coordinates for each observation."""
        return np.stack(np.unravel_index(self.indices, self.spec.shape), axis=1)


@dataclass(frozen=True)
class PatchPlan:
    """Partition of the voxel grid into non-overlapping 3D patches.

    Patch ids enumerate the patch grid row-major with axis order (l, w, h),
    h fastest: pid = (pl * n_w + pw) * n_h + ph.
    """

    spec: VoxelGridSpec
    patch: tuple[int, int, int]
    coords: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        l_p, w_p, h_p = self.patch
        if self.spec.L % l_p or self.spec.W % w_p or self.spec.H % h_p:
            raise ValueError(f"grid {self.spec.shape} not divisible by patch {self.patch}")
        n_l, n_w, n_h = self.grid_dims
        cl, cw, ch = np.meshgrid(np.arange(n_l), np.arange(n_w), np.arange(n_h),
                                 indexing="ij")
        coords = np.stack([cl.ravel(), cw.ravel(), ch.ravel()], axis=1)
        object.__setattr__(self, "coords", coords)
        self.coords.setflags(write=False)

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return (self.spec.L // self.patch[0],
                self.spec.W // self.patch[1],
                self.spec.H // self.patch[2])

    @property
    def n_patches(self) -> int:
        n_l, n_w, n_h = self.grid_dims
        return n_l * n_w * n_h

    @property
    def voxels_per_patch(self) -> int:
        return self.patch[0] * self.patch[1] * self.patch[2]

    def slices(self, pid: int) -> tuple[slice, slice, slice]:
        pl, pw, ph = self.coords[pid]
        l_p, w_p, h_p = self.patch
        return (slice(pl * l_p, (pl + 1) * l_p),
                slice(pw * w_p, (pw + 1) * w_p),
                slice(ph * h_p, (ph + 1) * h_p))

    def patch_of_voxel(self, l: int, w: int, h: int) -> int:
        n_l, n_w, n_h = self.grid_dims
        pl, pw, ph = l // self.patch[0], w // self.patch[1], h // self.patch[2]
        return (pl * n_w + pw) * n_h + ph

    def patchify(self, arr: np.ndarray) -> np.ndarray:
        """(C, L, W, H) or (L, W, H) -> (N_p, C * l_p * w_p * h_p).

        Per-patch flattening is channel-major, then (l, w, h) C-order.
        """
        if arr.ndim == 3:
            arr = arr[None]
        c = arr.shape[0]
        n_l, n_w, n_h = self.grid_dims
        l_p, w_p, h_p = self.patch
        x = arr.reshape(c, n_l, l_p, n_w, w_p, n_h, h_p)
        x = x.transpose(1, 3, 5, 0, 2, 4, 6)
        return x.reshape(self.n_patches, c * l_p * w_p * h_p)

    def unpatchify(self, patches: np.ndarray) -> np.ndarray:
        """(N_p, l_p * w_p * h_p) single-channel tokens -> (L, W, H) volume."""
        n_l, n_w, n_h = self.grid_dims
        l_p, w_p, h_p = self.patch
        x = patches.reshape(n_l, n_w, n_h, l_p, w_p, h_p)
        x = x.transpose(0, 3, 1, 4, 2, 5)
        return x.reshape(self.spec.L, self.spec.W, self.spec.H)


def normalize(volume: ArmVolume, norm: NormRange) -> np.ndarray:
    """Map dBm values into [-1, 1] with the dataset affine map (clamped)."""
    return norm.normalize(volume.values)


def denormalize(values: np.ndarray, norm: NormRange) -> np.ndarray:
    return norm.denormalize(values)


def patch_plan(spec: VoxelGridSpec, patch: tuple[int, int, int]) -> PatchPlan:
    """Build the deterministic patch partition for a grid."""
    return PatchPlan(spec=spec, patch=tuple(int(p) for p in patch))


# ---------------------------------------------------------------------------
# Blob serialization: float32/uint8 little-endian, C-order, plus content hashes
# ---------------------------------------------------------------------------

def volume_to_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def save_volume_f32(path: str | Path, values: np.ndarray) -> str:
    """Write one volume blob; returns its sha256 content hash."""
    data = volume_to_bytes(values)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_volume_f32(path: str | Path, shape: tuple[int, int, int]) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} float32 values, got {data.size}")
    return data.reshape(shape).astype(np.float64)


def save_building_u8(path: str | Path, occupancy: np.ndarray) -> str:
    data = np.ascontiguousarray(occupancy, dtype=np.uint8).tobytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_building_u8(path: str | Path, shape: tuple[int, int, int]) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} uint8 values, got {data.size}")
    return data.reshape(shape).copy()


def sha256_of(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
