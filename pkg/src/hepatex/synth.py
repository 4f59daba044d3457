"""Deterministic synthetic multi-phase CT generator.

Each study is four voxel-aligned volumes (NC, A, V, D) in Hounsfield-like
units: a soft-tissue background, a liver ellipsoid with per-phase
enhancement and a per-study "confuser" parenchyma texture, one primary
lesion with a class-specific contrast profile and band-limited texture,
plus distractors (bright vessel-like tubes, flat water-density cysts).

Class signatures are configurable caricatures, not clinical claims. They
are built so that contrast dynamics separate the class *pairs*
(HCC/Benign arterial-bright vs ICC/Metastasis hypodense-progressive)
while texture frequency in physical mm separates classes *within* a pair.
Everything is a pure function of the corpus seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .config import CLASS_NAMES
from .detection import Box3D
from .volume import PHASES, Volume


@dataclass
class ClassSignature:
    phase_profile: tuple[float, float, float, float]  # liver-base multipliers NC,A,V,D
    texture_freq: float                               # cycles per mm
    texture_amp: float                                # HU


# Contrast dynamics separate the pairs; texture frequency separates the
# classes within a pair. The 2x frequency ratios sit inside the lesion
# size spread, so a resized crop cannot recover the physical scale.
_ARTERIAL_BRIGHT = (0.86, 1.48, 0.88, 0.78)
_HYPO_PROGRESSIVE = (0.66, 0.78, 0.98, 1.20)

CLASS_SIGNATURES = {
    "HCC":        ClassSignature(_ARTERIAL_BRIGHT, 0.36, 24.0),
    "Benign":     ClassSignature(_ARTERIAL_BRIGHT, 0.09, 24.0),
    "ICC":        ClassSignature(_HYPO_PROGRESSIVE, 0.48, 24.0),
    "Metastasis": ClassSignature(_HYPO_PROGRESSIVE, 0.12, 24.0),
}

LIVER_BASE_HU = 60.0
LIVER_ENHANCEMENT = (1.0, 1.15, 1.30, 1.20)
TISSUE_HU = 25.0
CYST_HU = 8.0
VESSEL_PROFILE = (1.0, 1.9, 1.7, 1.25)
ACQUISITION_NOISE_HU = 0.7
PARENCHYMA_AMP = 18.0


@dataclass
class LesionSpec:
    class_id: str
    center_mm: np.ndarray
    radii_mm: np.ndarray
    texture_freq: float
    phase_profile: tuple[float, float, float, float]
    texture_amp: float

    def __post_init__(self):
        self.center_mm = np.asarray(self.center_mm, dtype=float)
        self.radii_mm = np.asarray(self.radii_mm, dtype=float)
        if self.class_id not in CLASS_NAMES:
            raise ValueError(f"unknown lesion class {self.class_id!r}")
        if np.any(self.radii_mm <= 0):
            raise ValueError("lesion radii must be positive")


@dataclass
class VesselSpec:
    point_mm: np.ndarray
    direction: np.ndarray
    radius_mm: float


@dataclass
class CystSpec:
    center_mm: np.ndarray
    radii_mm: np.ndarray


@dataclass
class StudySpec:
    study_id: str
    seed: int
    shape: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    liver_center_mm: np.ndarray
    liver_radii_mm: np.ndarray
    liver_base: float
    parenchyma_freq: float
    lesions: list[LesionSpec] = field(default_factory=list)
    vessels: list[VesselSpec] = field(default_factory=list)
    cysts: list[CystSpec] = field(default_factory=list)


@dataclass
class TruthBox:
    box: Box3D
    label: str
    primary: bool


@dataclass
class StudyTruth:
    boxes: list[TruthBox]
    mask: np.ndarray          # (W,H,D) uint8, noisy per-slice primary lesion mask


def value_noise_3d(shape, spacing_mm, freq_per_mm, rng, octaves=2):
    """Band-limited value noise sampled in physical coordinates, in [-1,1]."""
    out = np.zeros(shape, dtype=np.float64)
    amp, total = 1.0, 0.0
    freq = freq_per_mm
    for _ in range(octaves):
        axes = []
        for n, sp in zip(shape, spacing_mm):
            u = np.arange(n) * sp * freq
            i0 = u.astype(int)
            t = u - i0
            t = t * t * (3.0 - 2.0 * t)
            axes.append((i0, t, int(u.max()) + 2))
        (ix, tx, nx), (iy, ty, ny), (iz, tz, nz) = axes
        g = rng.uniform(-1.0, 1.0, (nx, ny, nz))
        a = g[ix] * (1 - tx)[:, None, None] + g[ix + 1] * tx[:, None, None]
        b = a[:, iy] * (1 - ty)[None, :, None] + a[:, iy + 1] * ty[None, :, None]
        c = b[:, :, iz] * (1 - tz)[None, None, :] + b[:, :, iz + 1] * tz[None, None, :]
        out += amp * c
        total += amp
        freq *= 2.0
        amp *= 0.5
    return out / total


def _mm_grids(shape, spacing_mm):
    return [np.arange(n) * sp for n, sp in zip(shape, spacing_mm)]


def _ellipsoid_alpha(grids, center_mm, radii_mm, edge_mm=1.5):
    """Soft indicator in [0,1]: 1 deep inside, 0 outside, smooth edge."""
    gx, gy, gz = grids
    q = np.sqrt(
        ((gx - center_mm[0])[:, None, None] / radii_mm[0]) ** 2
        + ((gy - center_mm[1])[None, :, None] / radii_mm[1]) ** 2
        + ((gz - center_mm[2])[None, None, :] / radii_mm[2]) ** 2)
    dist = (q - 1.0) * float(np.min(radii_mm))
    return np.clip(0.5 - dist / edge_mm, 0.0, 1.0)


def _tube_alpha(shape, spacing_mm, vessel: VesselSpec):
    gx, gy, gz = _mm_grids(shape, spacing_mm)
    px = gx[:, None, None] - vessel.point_mm[0]
    py = gy[None, :, None] - vessel.point_mm[1]
    pz = gz[None, None, :] - vessel.point_mm[2]
    u = vessel.direction / np.linalg.norm(vessel.direction)
    proj = px * u[0] + py * u[1] + pz * u[2]
    d2 = (px - proj * u[0]) ** 2 + (py - proj * u[1]) ** 2 + (pz - proj * u[2]) ** 2
    return np.clip((vessel.radius_mm - np.sqrt(d2)) / 0.8 + 0.5, 0.0, 1.0)


def _support_box(indicator: np.ndarray) -> Box3D:
    ix, iy, iz = np.nonzero(indicator)
    # voxel i occupies [i, i+1) in continuous voxel coordinates
    return Box3D(float(ix.min()), float(iy.min()), float(iz.min()),
                 float(ix.max()) + 1.0, float(iy.max()) + 1.0, float(iz.max()) + 1.0)


def generate_study(spec: StudySpec) -> tuple[dict[str, Volume], StudyTruth]:
    """Render the four phase volumes and ground truth for one study."""
    shape = spec.shape
    spacing = spec.spacing_mm
    grids = _mm_grids(shape, spacing)
    ss = np.random.SeedSequence(entropy=spec.seed)
    tex_rng, noise_rng = [np.random.default_rng(s) for s in ss.spawn(2)]

    liver_alpha = _ellipsoid_alpha(grids, spec.liver_center_mm, spec.liver_radii_mm, edge_mm=2.0)
    for lesion in spec.lesions:
        rel = np.abs(lesion.center_mm - spec.liver_center_mm) + lesion.radii_mm
        if np.any(rel / spec.liver_radii_mm > 0.95):
            raise ValueError(
                f"lesion at {lesion.center_mm} (radii {lesion.radii_mm}) extends outside "
                f"the liver ellipsoid")

    parenchyma = value_noise_3d(shape, spacing, spec.parenchyma_freq, tex_rng, octaves=1)

    blends = []   # (alpha, per-phase values)
    for vessel in spec.vessels:
        alpha = _tube_alpha(shape, spacing, vessel) * (liver_alpha >= 0.5)
        blends.append((alpha, [spec.liver_base * m for m in VESSEL_PROFILE]))
    for cyst in spec.cysts:
        alpha = _ellipsoid_alpha(grids, cyst.center_mm, cyst.radii_mm, edge_mm=1.0)
        blends.append((alpha, [CYST_HU] * 4))

    lesion_layers = []
    primary_indicator = np.zeros(shape, dtype=bool)
    for lesion in spec.lesions:
        alpha = _ellipsoid_alpha(grids, lesion.center_mm, lesion.radii_mm, edge_mm=2.0)
        tex = value_noise_3d(shape, spacing, lesion.texture_freq, tex_rng, octaves=1)
        lesion_layers.append((alpha, lesion, tex))
        primary_indicator |= alpha >= 0.5

    volumes: dict[str, Volume] = {}
    for pi, phase in enumerate(PHASES):
        vol = np.full(shape, TISSUE_HU, dtype=np.float64)
        liver_val = spec.liver_base * LIVER_ENHANCEMENT[pi] + PARENCHYMA_AMP * parenchyma
        vol = vol * (1 - liver_alpha) + liver_val * liver_alpha
        for alpha, values in blends:
            vol = vol * (1 - alpha) + values[pi] * alpha
        for alpha, lesion, tex in lesion_layers:
            val = spec.liver_base * lesion.phase_profile[pi] + lesion.texture_amp * tex
            vol = vol * (1 - alpha) + val * alpha
        vol = vol + noise_rng.normal(0.0, ACQUISITION_NOISE_HU, shape)
        volumes[phase] = Volume(vol.astype(np.float32), spacing, phase)

    # noisy per-slice mask: per-slice threshold in [0.5, 0.62] keeps the
    # mask inside the clean support, so every mask voxel stays in its box
    mask = np.zeros(shape, dtype=np.uint8)
    mask_rng = np.random.default_rng(ss.spawn(1)[0])
    boxes: list[TruthBox] = []
    for alpha, lesion, _ in lesion_layers:
        indicator = alpha >= 0.5
        thresh = 0.5 + 0.12 * mask_rng.random(shape[2])
        noisy = alpha >= thresh[None, None, :]
        mask |= noisy.astype(np.uint8)
        boxes.append(TruthBox(_support_box(indicator), lesion.class_id, primary=True))
    for cyst in spec.cysts:
        alpha = _ellipsoid_alpha(grids, cyst.center_mm, cyst.radii_mm, edge_mm=1.0)
        if np.any(alpha >= 0.5):
            boxes.append(TruthBox(_support_box(alpha >= 0.5), "NonPrimary", primary=False))

    return volumes, StudyTruth(boxes=boxes, mask=mask)


def sample_study_spec(study_id: str, class_id: str, seed: int) -> StudySpec:
    """Deterministic per-study geometry draw."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    W = int(rng.integers(28, 37)) * 2
    H = int(rng.integers(28, 37)) * 2
    D = int(rng.integers(10, 15)) * 2
    spacing = (1.0, 1.0, 5.0)
    extent = np.array([W, H, D]) * spacing

    liver_center = extent / 2 + rng.uniform(-3, 3, 3)
    liver_radii = extent * np.array([0.40, 0.40, 0.42]) * rng.uniform(0.92, 1.05, 3)
    liver_base = float(rng.uniform(56.0, 64.0))

    sig = CLASS_SIGNATURES[class_id]
    radii = np.array([rng.uniform(9.0, 16.0), rng.uniform(9.0, 16.0), rng.uniform(7.0, 12.0)])
    for _ in range(200):
        u = rng.uniform(-0.55, 0.55, 3)
        center = liver_center + u * liver_radii
        if np.all((np.abs(center - liver_center) + radii) / liver_radii <= 0.92):
            break
    lesion = LesionSpec(class_id, center, radii, sig.texture_freq,
                        sig.phase_profile, sig.texture_amp)

    vessels = []
    for _ in range(int(rng.integers(1, 4))):
        direction = rng.normal(size=3)
        direction[2] *= 0.3
        point = liver_center + rng.uniform(-0.5, 0.5, 3) * liver_radii
        vessels.append(VesselSpec(point, direction, float(rng.uniform(1.4, 2.2))))

    cysts = []
    if rng.random() < 0.5:
        cradii = np.array([rng.uniform(3.0, 5.5), rng.uniform(3.0, 5.5), rng.uniform(4.0, 7.0)])
        for _ in range(200):
            u = rng.uniform(-0.55, 0.55, 3)
            ccenter = liver_center + u * liver_radii
            far = np.linalg.norm(ccenter - lesion.center_mm) > (
                np.max(cradii) + np.max(radii) + 6.0)
            inside = np.all((np.abs(ccenter - liver_center) + cradii) / liver_radii <= 0.92)
            if far and inside:
                cysts.append(CystSpec(ccenter, cradii))
                break

    # per-study confuser: the parenchyma texture takes the exact frequency
    # of one of the OTHER classes, so unmasked context is misleading
    other = [s.texture_freq for c, s in CLASS_SIGNATURES.items() if c != class_id]
    parenchyma_freq = float(other[int(rng.integers(len(other)))])

    return StudySpec(study_id=study_id, seed=seed, shape=(W, H, D), spacing_mm=spacing,
                     liver_center_mm=liver_center, liver_radii_mm=liver_radii,
                     liver_base=liver_base, parenchyma_freq=parenchyma_freq,
                     lesions=[lesion], vessels=vessels, cysts=cysts)


def largest_remainder_counts(n: int, mix: list[float]) -> list[int]:
    if n < 1:
        raise ValueError("need at least one study")
    if abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError(f"class mix must sum to 1, got {sum(mix)}")
    quotas = [n * m for m in mix]
    base = [int(q) for q in quotas]
    rem = n - sum(base)
    order = sorted(range(len(mix)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:rem]:
        base[i] += 1
    return base


def split_tags(counts: list[int]) -> list[list[str]]:
    """Per class: first the train studies, then val, then test."""
    out = []
    for n_c in counts:
        n_test = n_c // 5
        n_val = n_c // 10
        tags = ["train"] * (n_c - n_val - n_test) + ["val"] * n_val + ["test"] * n_test
        out.append(tags)
    return out


@dataclass
class StudyRecord:
    study_id: str
    split: str
    label: str
    volumes: dict[str, str]        # phase -> json path (relative to manifest dir)
    mask: str
    boxes: list[TruthBox]
    shape: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]


@dataclass
class Manifest:
    seed: int
    class_mix: list[float]
    studies: list[StudyRecord]
    root: str = "."

    def split_records(self, split: str) -> list[StudyRecord]:
        return [s for s in self.studies if s.split == split]

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "schema_version": 1,
        "seed": m.seed,
        "class_mix": m.class_mix,
        "studies": [
            {
                "study_id": s.study_id,
                "split": s.split,
                "label": s.label,
                "volumes": s.volumes,
                "mask": s.mask,
                "shape": list(s.shape),
                "spacing_mm": list(s.spacing_mm),
                "boxes": [
                    {"x1": b.box.x1, "y1": b.box.y1, "z1": b.box.z1,
                     "x2": b.box.x2, "y2": b.box.y2, "z2": b.box.z2,
                     "label": b.label, "primary": b.primary}
                    for b in s.boxes
                ],
            }
            for s in m.studies
        ],
    }


def manifest_from_dict(data: dict, root: str = ".") -> Manifest:
    studies = []
    for s in data["studies"]:
        boxes = [TruthBox(Box3D(b["x1"], b["y1"], b["z1"], b["x2"], b["y2"], b["z2"]),
                          b["label"], b["primary"]) for b in s["boxes"]]
        studies.append(StudyRecord(
            study_id=s["study_id"], split=s["split"], label=s["label"],
            volumes=s["volumes"], mask=s["mask"], boxes=boxes,
            shape=tuple(s["shape"]), spacing_mm=tuple(s["spacing_mm"])))
    return Manifest(seed=data["seed"], class_mix=data["class_mix"],
                    studies=studies, root=root)


def generate_corpus(n_studies: int, class_mix, seed: int, out_dir: str) -> Manifest:
    """Write a reproducible corpus (volumes, masks, manifest) to out_dir."""
    from . import formats

    class_mix = list(class_mix)
    counts = largest_remainder_counts(n_studies, class_mix)
    tags = split_tags(counts)

    # interleave classes, then shuffle deterministically for study-id order
    assignments: list[tuple[str, str]] = []
    for ci, cname in enumerate(CLASS_NAMES):
        assignments.extend((cname, tag) for tag in tags[ci])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xC0)))
    order = rng.permutation(len(assignments))

    formats.ensure_dir(out_dir)
    studies: list[StudyRecord] = []
    for i, idx in enumerate(order):
        cname, split = assignments[idx]
        study_id = f"study_{i:04d}"
        study_seed = int(np.random.SeedSequence(entropy=(seed, 1, i)).generate_state(1)[0])
        spec = sample_study_spec(study_id, cname, study_seed)
        volumes, truth = generate_study(spec)

        study_dir = formats.ensure_dir(os.path.join(out_dir, "studies", study_id))
        vol_paths = {}
        for phase, vol in volumes.items():
            base = os.path.join(study_dir, phase.lower())
            formats.write_volume(base, vol)
            vol_paths[phase] = os.path.relpath(base + ".json", out_dir)
        mask_vol = Volume(truth.mask, spec.spacing_mm, "UNKNOWN")
        formats.write_volume(os.path.join(study_dir, "mask"), mask_vol)

        studies.append(StudyRecord(
            study_id=study_id, split=split, label=cname, volumes=vol_paths,
            mask=os.path.relpath(os.path.join(study_dir, "mask.json"), out_dir),
            boxes=truth.boxes, shape=spec.shape, spacing_mm=spec.spacing_mm))

    manifest = Manifest(seed=seed, class_mix=class_mix, studies=studies, root=out_dir)
    formats.write_json(os.path.join(out_dir, "manifest.json"), manifest_to_dict(manifest))
    return manifest


def load_manifest(path: str) -> Manifest:
    from . import formats

    return manifest_from_dict(formats.read_json(path), root=os.path.dirname(path) or ".")
