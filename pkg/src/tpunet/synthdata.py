"""Synthetic timestamped slice sequences.

Each patient is an ordered stack of N slices. Every organ's visibility
follows a Gaussian in normalized slice position i/N: it appears when
the presence weight clears a threshold and its rendered radius scales
with the weight. Organs sharing a texture_class are drawn identically,
so in the confusable regime only the timestamp can tell them apart.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import checkpoint

PRESENCE_THRESHOLD = 0.1
NOISE_SIGMA = 0.05
BACKGROUND_LEVEL = 0.15
TEXTURE_LEVELS = (0.45, 0.65, 0.85)

_GEOM_TAG = 101
_NOISE_TAG = 202
_SPLIT_TAG = 303


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class OrganSpec:
    name: str
    mu: float
    sigma: float
    texture_class: int
    base_radius: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise SynthError(f"mu must lie in (0, 1), got {self.mu}")
        if not 0.0 < self.sigma <= 0.3:
            raise SynthError(f"sigma must lie in (0, 0.3], got {self.sigma}")
        if not 0.0 < self.base_radius <= 0.5:
            raise SynthError(f"base_radius must lie in (0, 0.5], got {self.base_radius}")
        if not 0 <= self.texture_class < len(TEXTURE_LEVELS):
            raise SynthError(f"texture_class must index {TEXTURE_LEVELS}")


@dataclass
class SliceSample:
    image: np.ndarray      # [1, H, W] in [0, 1]
    masks: np.ndarray      # [K, H, W] binary
    patient_id: int
    slice_index: int
    slice_total: int
    modality: str


def default_organs(confusable: bool = True) -> Tuple[OrganSpec, ...]:
    """Three organs with staggered windows; in the confusable regime the
    first and last share a texture so images alone cannot separate them."""
    return (
        OrganSpec("stomach", 0.3, 0.1, texture_class=0),
        OrganSpec("small_bowel", 0.5, 0.1, texture_class=1),
        OrganSpec("large_bowel", 0.7, 0.1, texture_class=0 if confusable else 2),
    )


def presence_weight(spec: OrganSpec, i: int, N: int) -> float:
    """Gaussian visibility weight of the organ at slice i of N."""
    if not 1 <= i <= N:
        raise SynthError(f"slice index must satisfy 1 <= i <= N, got i={i} N={N}")
    t = i / N
    return float(np.exp(-((t - spec.mu) ** 2) / (2.0 * spec.sigma**2)))


def patient_geometry(specs: Sequence[OrganSpec], master_seed: int, patient_id: int,
                     size: int) -> Dict[str, np.ndarray]:
    """Organ centers and aspect ratios, fixed across a patient's slices."""
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, patient_id, _GEOM_TAG)))
    k = len(specs)
    return {
        "centers": rng.uniform(0.3 * size, 0.7 * size, size=(k, 2)),
        "aspects": rng.uniform(0.7, 1.3, size=(k, 2)),
    }


def render_slice(specs: Sequence[OrganSpec], master_seed: int, patient_id: int,
                 i: int, N: int, size: int = 64, modality: str = "MRI") -> SliceSample:
    """Render one slice; deterministic in (master_seed, patient_id, i)."""
    geom = patient_geometry(specs, master_seed, patient_id, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.full((size, size), BACKGROUND_LEVEL)
    masks = np.zeros((len(specs), size, size))
    for k, spec in enumerate(specs):
        w = presence_weight(spec, i, N)
        if w < PRESENCE_THRESHOLD:
            continue
        cy, cx = geom["centers"][k]
        ay, ax = geom["aspects"][k]
        r = spec.base_radius * w * size
        inside = ((yy - cy) / (r * ay)) ** 2 + ((xx - cx) / (r * ax)) ** 2 <= 1.0
        masks[k] = inside
        image[inside] = TEXTURE_LEVELS[spec.texture_class]  # later organs overwrite pixels
    noise_rng = np.random.default_rng(
        np.random.SeedSequence((master_seed, patient_id, i, _NOISE_TAG)))
    image = np.clip(image + noise_rng.normal(0.0, NOISE_SIGMA, image.shape), 0.0, 1.0)
    return SliceSample(image[None], masks, patient_id, i, N, modality)


@dataclass
class SynthConfig:
    patients: int = 40
    slices_per_patient: int = 16
    image_size: int = 64
    master_seed: int = 0
    modality: str = "MRI"
    confusable: bool = True

    def organs(self) -> Tuple[OrganSpec, ...]:
        return default_organs(self.confusable)


def split_patients(P: int, master_seed: int) -> Dict[str, List[int]]:
    """Patient-level 7:1:2 split; a patient never crosses splits."""
    if P < 10:
        raise SynthError(f"need at least 10 patients for a 7:1:2 split, got {P}")
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, _SPLIT_TAG)))
    order = rng.permutation(P).tolist()
    n_train = int(P * 0.7)
    n_val = int(P * 0.1)
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train:n_train + n_val]),
        "test": sorted(order[n_train + n_val:]),
    }


def generate_dataset(config: SynthConfig, out_dir: str) -> dict:
    """Write manifest.json plus one tensor file per split; returns the manifest."""
    specs = config.organs()
    splits = split_patients(config.patients, config.master_seed)
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "organs": [asdict(s) for s in specs],
        "splits": splits,
        "seeds": {"master": config.master_seed},
        "image_size": config.image_size,
        "slices_per_patient": config.slices_per_patient,
        "modality": config.modality,
        "records": [],
    }
    N = config.slices_per_patient
    for split, patients in splits.items():
        images, masks = [], []
        fname = f"{split}.bin"
        for pid in patients:
            for i in range(1, N + 1):
                s = render_slice(specs, config.master_seed, pid, i, N,
                                 config.image_size, config.modality)
                manifest["records"].append({
                    "patient": pid, "i": i, "N": N, "modality": s.modality,
                    "file": fname, "index": len(images),
                })
                images.append(s.image)
                masks.append(s.masks)
        checkpoint.save_tensors(os.path.join(out_dir, fname), {
            "images": np.stack(images),
            "masks": np.stack(masks),
        })
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class SplitData:
    images: np.ndarray       # [n, 1, H, W]
    masks: np.ndarray        # [n, K, H, W]
    records: List[dict]


class Dataset:
    """Loaded dataset directory: manifest plus per-split arrays."""

    def __init__(self, manifest: dict, splits: Dict[str, SplitData]):
        self.manifest = manifest
        self.splits = splits

    @property
    def num_classes(self) -> int:
        return len(self.manifest["organs"])

    @property
    def hash(self) -> str:
        return manifest_hash(self.manifest)

    def split(self, name: str) -> SplitData:
        if name not in self.splits:
            raise SynthError(f"no split named {name!r}; have {sorted(self.splits)}")
        return self.splits[name]


def load_dataset(path: str) -> Dataset:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    splits = {}
    for split in manifest["splits"]:
        fname = f"{split}.bin"
        payload = checkpoint.load_tensors(os.path.join(path, fname))
        records = [r for r in manifest["records"] if r["file"] == fname]
        records.sort(key=lambda r: r["index"])
        splits[split] = SplitData(payload["images"], payload["masks"], records)
    return Dataset(manifest, splits)
