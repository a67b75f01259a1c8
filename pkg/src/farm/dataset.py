"""Desk-scale dataset pipeline: procedural scenes crossed with transmitter
placements and RF configurations, rendered by the analytic oracle and
serialized as float32 blobs plus a JSON manifest.

Layout of a dataset directory:

    manifest.json
    volumes/<sample_id>.f32      little-endian float32, C-order (L, W, H)
    buildings/<scene_id>.u8      uint8 occupancy, same order
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .conditioning import sample_mask
from .core import (ArmVolume, BsConfig, BuildingGrid, NormRange, PatchPlan,
                   SparseObservation, VoxelGridSpec, load_building_u8,
                   load_volume_f32, save_building_u8, save_volume_f32, sha256_of)
from .synth import (CARRIER_FREQUENCIES_HZ, FSPL_CONSTANT_DB, PropagationParams,
                    ShadowingParams, generate_buildings, place_transmitter, render_arm)

MANIFEST_NAME = "manifest.json"

# rng stream tags so every randomized stage draws from an independent stream
_SCENE, _TX, _BORESIGHT, _SPLIT, _OBS = 0, 1, 2, 3, 4


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (master seed, stream key)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


def config_hash(obj) -> str:
    return sha256_of(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode())


@dataclass
class DatasetConfig:
    """Scenes x transmitters x RF configurations to render."""

    name: str = "desk"
    L: int = 64
    W: int = 64
    H: int = 8
    delta: float = 4.0
    n_scenes: int = 4
    n_buildings: int = 10
    tx_per_scene: int = 2
    frequencies_ghz: list[float] = field(default_factory=lambda: [2.1, 3.3])
    antenna_types: list[str] = field(default_factory=lambda: ["iso"])
    p_tx_dbm: float = 30.0
    alpha_b: float = 1.5
    fspl_c: float = FSPL_CONSTANT_DB
    shadowing_sigma_db: float = 0.0
    shadowing_correlation_m: float = 20.0
    seed: int = 0

    def __post_init__(self):
        known = set(CARRIER_FREQUENCIES_HZ)
        for f in self.frequencies_ghz:
            if f"{float(f):g}" not in known:
                raise ValueError(f"frequency {f} GHz not in the supported set "
                                 f"{sorted(known)}")

    @property
    def spec(self) -> VoxelGridSpec:
        return VoxelGridSpec(L=self.L, W=self.W, H=self.H, delta=self.delta)

    def propagation(self, sample_seed: int | None = None) -> PropagationParams:
        shadowing = None
        if self.shadowing_sigma_db > 0:
            shadowing = ShadowingParams(sigma_db=self.shadowing_sigma_db,
                                        correlation_m=self.shadowing_correlation_m,
                                        seed=sample_seed if sample_seed is not None else self.seed)
        return PropagationParams(C=self.fspl_c, alpha_b=self.alpha_b, shadowing=shadowing)

    @property
    def n_samples(self) -> int:
        return (self.n_scenes * self.tx_per_scene
                * len(self.frequencies_ghz) * len(self.antenna_types))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


def split_counts(n: int) -> tuple[int, int, int]:
    """8:1:1 train/val/test by sample count."""
    n_val = n // 10
    n_test = n // 10
    return n - n_val - n_test, n_val, n_test


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> dict:
    """Render every sample, write blobs and the manifest; returns the manifest."""
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "buildings").mkdir(parents=True, exist_ok=True)
    spec = config.spec

    scenes, samples = [], []
    blob_hashes = []
    sample_idx = 0
    for s in range(config.n_scenes):
        scene_id = f"scene{s:04d}"
        building = generate_buildings(derive_rng(config.seed, _SCENE, s), spec,
                                      config.n_buildings)
        bpath = out / "buildings" / f"{scene_id}.u8"
        try:
            bhash = save_building_u8(bpath, building.occupancy)
        except OSError as e:
            raise OSError(f"failed writing {bpath}: {e}") from e
        blob_hashes.append(bhash)
        scenes.append({"id": scene_id, "file": f"buildings/{scene_id}.u8",
                       "sha256": bhash, "n_buildings": config.n_buildings,
                       "occupied_fraction": building.fraction_occupied})

        for tx in range(config.tx_per_scene):
            p_tx = place_transmitter(derive_rng(config.seed, _TX, s, tx), building)
            az_rng = derive_rng(config.seed, _BORESIGHT, s, tx)
            az = float(az_rng.uniform(-np.pi, np.pi))
            el = float(az_rng.uniform(-0.3, 0.0))
            for f_ghz in config.frequencies_ghz:
                for ant in config.antenna_types:
                    sample_id = f"s{sample_idx:06d}"
                    bs = BsConfig(p_tx=p_tx, P_tx=config.p_tx_dbm,
                                  f_c=float(f_ghz) * 1e9, antenna_type=ant,
                                  boresight_az=az, boresight_el=el)
                    vol = render_arm(building, bs, config.propagation(sample_idx))
                    vpath = out / "volumes" / f"{sample_id}.f32"
                    try:
                        vhash = save_volume_f32(vpath, vol.values)
                    except OSError as e:
                        raise OSError(f"failed writing {vpath}: {e}") from e
                    blob_hashes.append(vhash)
                    samples.append({"id": sample_id, "scene": scene_id,
                                    "file": f"volumes/{sample_id}.f32", "sha256": vhash,
                                    "bs": bs.to_dict(),
                                    "value_min": float(vol.values.min()),
                                    "value_max": float(vol.values.max())})
                    sample_idx += 1

    n_train, n_val, n_test = split_counts(len(samples))
    order = derive_rng(config.seed, _SPLIT).permutation(len(samples))
    for rank, i in enumerate(order):
        samples[i]["split"] = ("train" if rank < n_train
                               else "val" if rank < n_train + n_val else "test")

    vmin = min(s["value_min"] for s in samples)
    vmax = max(s["value_max"] for s in samples)
    manifest = {
        "format": 1,
        "version": f"farm-{__version__}",
        "name": config.name,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "spec": spec.to_dict(),
        "norm": {"min_dbm": vmin, "max_dbm": vmax},
        "propagation": {"C": config.fspl_c, "alpha_b": config.alpha_b,
                        "shadowing_sigma_db": config.shadowing_sigma_db,
                        "shadowing_correlation_m": config.shadowing_correlation_m},
        "scenes": scenes,
        "samples": samples,
        "content_hash": sha256_of("".join(sorted(blob_hashes)).encode()),
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1))
    return manifest


class FarmDataset:
    """Read access to a built dataset directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        mpath = self.root / MANIFEST_NAME
        if not mpath.exists():
            raise FileNotFoundError(f"no dataset manifest at {mpath}")
        self.manifest = json.loads(mpath.read_text())
        self.spec = VoxelGridSpec.from_dict(self.manifest["spec"])
        self.norm = NormRange.from_dict(self.manifest["norm"])
        self._samples = {s["id"]: s for s in self.manifest["samples"]}
        self._scenes = {s["id"]: s for s in self.manifest["scenes"]}
        self._building_cache: dict[str, BuildingGrid] = {}

    def propagation(self) -> PropagationParams:
        p = self.manifest["propagation"]
        shadowing = None
        if p.get("shadowing_sigma_db", 0.0) > 0:
            shadowing = ShadowingParams(sigma_db=p["shadowing_sigma_db"],
                                        correlation_m=p["shadowing_correlation_m"],
                                        seed=self.manifest["seed"])
        return PropagationParams(C=p["C"], alpha_b=p["alpha_b"], shadowing=shadowing)

    @property
    def value_range(self) -> float:
        """Dataset-wide signal variation range r used by PSNR/SSIM."""
        return self.norm.span

    def sample_ids(self, split: str | None = None) -> list[str]:
        return [s["id"] for s in self.manifest["samples"]
                if split is None or s["split"] == split]

    def sample_record(self, sample_id: str) -> dict:
        return self._samples[sample_id]

    def bs(self, sample_id: str) -> BsConfig:
        return BsConfig.from_dict(self._samples[sample_id]["bs"])

    def load_volume(self, sample_id: str) -> ArmVolume:
        rec = self._samples[sample_id]
        values = load_volume_f32(self.root / rec["file"], self.spec.shape)
        return ArmVolume(values=values, spec=self.spec, norm=self.norm)

    def load_building(self, scene_id: str) -> BuildingGrid:
        if scene_id not in self._building_cache:
            rec = self._scenes[scene_id]
            occ = load_building_u8(self.root / rec["file"], self.spec.shape)
            self._building_cache[scene_id] = BuildingGrid(occupancy=occ, spec=self.spec)
        return self._building_cache[scene_id]

    def building_for(self, sample_id: str) -> BuildingGrid:
        return self.load_building(self._samples[sample_id]["scene"])


def sample_observations(volume: ArmVolume, rate: float, seed: int,
                        plan: PatchPlan | None = None,
                        granularity: str = "patch") -> SparseObservation:
    """Draw sparse RSS observations from a ground-truth volume.

    Patch granularity keeps whole patches (the complement of a masking draw
    with p_mask = 1 - rate), matching the token-level visibility the model
    consumes. Voxel granularity draws independent voxels, which suits kriging.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sample rate must lie in (0, 1], got {rate}")
    spec = volume.spec
    if granularity == "patch":
        if plan is None:
            raise ValueError("patch-granular observations require a patch plan")
        mask = sample_mask(plan.n_patches, p_mask=1.0 - rate, seed=seed)
        flat = np.arange(spec.n_voxels).reshape(spec.shape)
        idx = np.concatenate([flat[plan.slices(int(pid))].ravel()
                              for pid in mask.visible_ids]) if mask.n_visible else np.empty(0, np.int64)
        idx = np.sort(idx.astype(np.int64))
    elif granularity == "voxel":
        n = max(1, int(round(rate * spec.n_voxels)))
        rng = derive_rng(seed, _OBS)
        idx = np.sort(rng.choice(spec.n_voxels, size=n, replace=False))
    else:
        raise ValueError(f"unknown observation granularity {granularity!r}")
    values = volume.values.ravel()[idx]
    return SparseObservation(indices=idx, values=values, sample_rate=rate, spec=spec)
