"""Synthetic breast-RT phantoms whose target volume is decided by the clinical record.

Grid axes are (H, W, S): H runs anterior -> posterior, W runs across the
patient and S inferior -> superior.  Display convention is radiological, so the
patient's right lies at low W (w < W/2) and the patient's left at high W.

The intensity volume and anatomy depend on the seed only; the record decides
which labelled structures form the target.  Geometry is mirror-symmetric about
the midline, so an image carries no information about the diseased side.
"""

from __future__ import annotations

import dataclasses
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LATERALITIES = ("left", "right")
T_STAGES = ("T1", "T2", "T3", "T4")
N_STAGES = ("N0", "N1", "N2")
SURGERIES = ("breast-conserving", "mastectomy")
AGE_RANGE = (30, 80)  # half-open
FIELDS = ("laterality", "t_stage", "n_stage", "surgery", "age")
CLINICAL_FIELDS = ("laterality", "n_stage", "t_stage", "surgery")

BACKGROUND, LEFT_BREAST, RIGHT_BREAST, LEFT_NODES, RIGHT_NODES, CHEST_WALL, SKIN = range(7)
LABEL_NAMES = ("background", "left-breast", "right-breast", "left-nodes", "right-nodes", "chest-wall", "skin-shell")

DEFAULT_GRID = (64, 64, 32)
DEFAULT_SPACING = (1.0, 1.0, 3.0)
NOISE_SIGMA = 0.03

_SURGERY_TEXT = {"breast-conserving": "breast conserving surgery", "mastectomy": "total mastectomy"}
_SURGERY_DIGIT = {"mastectomy": "0", "breast-conserving": "1"}
_LATERALITY_DIGIT = {"left": "0", "right": "1"}


class SynthesisError(ValueError):
    pass


class VolumeFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ClinicalRecord:
    """Structured clinical fields.  A field set to None is omitted."""

    laterality: str | None
    t_stage: str | None
    n_stage: str | None
    surgery: str | None
    age: int | None = None

    def __post_init__(self):
        for name, allowed in (("laterality", LATERALITIES), ("t_stage", T_STAGES),
                              ("n_stage", N_STAGES), ("surgery", SURGERIES)):
            value = getattr(self, name)
            if value is not None and value not in allowed:
                raise ValueError(f"{name}={value!r} not in {allowed}")

    @property
    def omitted(self) -> frozenset[str]:
        return frozenset(f for f in FIELDS if getattr(self, f) is None)

    def without(self, *fields: str) -> "ClinicalRecord":
        return dataclasses.replace(self, **{f: None for f in fields})

    def replace(self, **changes) -> "ClinicalRecord":
        return dataclasses.replace(self, **changes)

    def needs_nodes(self) -> bool:
        return self.n_stage in ("N1", "N2") or self.t_stage in ("T3", "T4")


def sample_record(seed) -> ClinicalRecord:
    """Independent uniform draw of every field; same seed, same record."""
    rng = np.random.default_rng(seed)
    return ClinicalRecord(
        laterality=LATERALITIES[rng.integers(2)],
        t_stage=T_STAGES[rng.integers(4)],
        n_stage=N_STAGES[rng.integers(3)],
        surgery=SURGERIES[rng.integers(2)],
        age=int(rng.integers(*AGE_RANGE)),
    )


def render_text(r: ClinicalRecord, omit=()) -> str:
    omit = set(omit) | r.omitted
    parts = []
    if "age" not in omit:
        parts.append(f"age {r.age}.")
    stage = [s.lower() for f, s in (("t_stage", r.t_stage), ("n_stage", r.n_stage)) if f not in omit]
    sentence = " ".join(stage + ["m0", "cancer"])
    if "laterality" not in omit:
        sentence += f" in the {r.laterality} breast"
    parts.append(sentence + ".")
    if "surgery" not in omit:
        parts.append(f"surgery: {_SURGERY_TEXT[r.surgery]}.")
    return " ".join(parts)


def render_numeric(r: ClinicalRecord, omit=()) -> str:
    """Four-character code: N digit, T digit, surgery digit, laterality digit; '?' when omitted."""
    omit = set(omit) | r.omitted
    return "".join([
        "?" if "n_stage" in omit else r.n_stage[1],
        "?" if "t_stage" in omit else r.t_stage[1],
        "?" if "surgery" in omit else _SURGERY_DIGIT[r.surgery],
        "?" if "laterality" in omit else _LATERALITY_DIGIT[r.laterality],
    ])


def template_corpus() -> list[str]:
    """Every sentence the template can produce for complete records."""
    out = []
    for lat in LATERALITIES:
        for t in T_STAGES:
            for n in N_STAGES:
                for s in SURGERIES:
                    for age in range(*AGE_RANGE):
                        out.append(render_text(ClinicalRecord(lat, t, n, s, age)))
    return out


# ---------------------------------------------------------------- record / manifest files

def write_record(path, r: ClinicalRecord) -> None:
    lines = [f"{f}: {getattr(r, f)}" for f in FIELDS if getattr(r, f) is not None]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_record(path) -> ClinicalRecord:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or key not in FIELDS:
            raise ValueError(f"{path}: bad record line {line!r}")
        values[key] = value.strip()
    if "age" in values:
        values["age"] = int(values["age"])
    return ClinicalRecord(**{f: values.get(f) for f in FIELDS})


@dataclass
class ManifestEntry:
    case_id: str
    record: Path
    volume: Path
    mask: Path
    labels: Path | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """One case per line: record, volume, mask and optionally labels paths (relative to the manifest)."""
    path = Path(path)
    root = path.parent
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        cols = line.split()
        if not cols or cols[0].startswith("#"):
            continue
        if len(cols) not in (3, 4):
            raise ValueError(f"{path}: expected 3 or 4 columns, got {line!r}")
        paths = [root / c for c in cols]
        case_id = Path(cols[0]).name.split(".")[0]
        entries.append(ManifestEntry(case_id, *paths))
    return entries


def write_manifest(path, entries) -> None:
    path = Path(path)
    rows = []
    for e in entries:
        cols = [e.record, e.volume, e.mask] + ([e.labels] if e.labels is not None else [])
        rows.append(" ".join(os.path.relpath(c, path.parent) for c in cols))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- volume files

_MAGIC = b"CTV1"
_HEADER = struct.Struct("<4s3I3fB")
KIND_TAGS = {"intensity-f32": 0, "mask-u8": 1, "labels-u8": 2}
_KIND_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("u1")}


def write_volume(path, grid: np.ndarray, spacing, kind: str) -> None:
    if kind not in KIND_TAGS:
        raise ValueError(f"kind must be one of {sorted(KIND_TAGS)}")
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValueError(f"volume must be 3-D (H, W, S), got shape {grid.shape}")
    tag = KIND_TAGS[kind]
    h, w, s = grid.shape
    header = _HEADER.pack(_MAGIC, h, w, s, *[float(v) for v in spacing], tag)
    # W fastest, then H, then S
    payload = np.ascontiguousarray(grid.transpose(2, 0, 1), dtype=_KIND_DTYPES[tag]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_volume(path):
    """Returns (grid (H, W, S), spacing tuple, kind name)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise VolumeFormatError(f"bad magic {raw[:4]!r}", 0)
    if len(raw) < _HEADER.size:
        raise VolumeFormatError("truncated header", len(raw))
    _, h, w, s, sx, sy, sz, tag = _HEADER.unpack_from(raw)
    if tag not in _KIND_DTYPES:
        raise VolumeFormatError(f"unknown kind tag {tag}", _HEADER.size - 1)
    dtype = _KIND_DTYPES[tag]
    need = h * w * s * dtype.itemsize
    have = len(raw) - _HEADER.size
    if have < need:
        raise VolumeFormatError(f"payload truncated: need {need} bytes, have {have}", len(raw))
    if have > need:
        raise VolumeFormatError(f"{have - need} trailing bytes", _HEADER.size + need)
    arr = np.frombuffer(raw, dtype=dtype, count=h * w * s, offset=_HEADER.size).reshape(s, h, w)
    kind = {v: k for k, v in KIND_TAGS.items()}[tag]
    return arr.transpose(1, 2, 0).copy(), (sx, sy, sz), kind


def normalize_hu(raw) -> np.ndarray:
    """Clip to [-1000, 1000] HU and map linearly onto [0, 1]."""
    return (np.clip(np.asarray(raw, dtype=np.float64), -1000.0, 1000.0) + 1000.0) / 2000.0


# ---------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class Anatomy:
    """Seed-level jitter of the (bilaterally identical) structures, in normalised units."""

    breast_lat: float
    breast_u: float
    breast_z: float
    breast_scale: float
    node_z: float
    node_lat: float


def _draw_anatomy(rng) -> Anatomy:
    return Anatomy(
        breast_lat=0.46 + rng.uniform(-0.04, 0.04),
        breast_u=rng.uniform(-0.02, 0.02),
        breast_z=0.42 + rng.uniform(-0.05, 0.05),
        breast_scale=1.0 + rng.uniform(-0.08, 0.08),
        node_z=0.80 + rng.uniform(-0.04, 0.04),
        node_lat=0.78 + rng.uniform(-0.04, 0.04),
    )


_TORSO_U0, _TORSO_AU, _TORSO_AL = 0.60, 0.34, 0.90
_INTENSITY = {"air": 0.02, "lung": 0.12, "tissue": 0.42, BACKGROUND: 0.42, LEFT_BREAST: 0.52,
              RIGHT_BREAST: 0.52, LEFT_NODES: 0.64, RIGHT_NODES: 0.64, CHEST_WALL: 0.72, SKIN: 0.58}


def _coords(grid):
    h, w, s = grid
    u = ((np.arange(h) + 0.5) / h)[:, None, None]
    # exact mirror symmetry: integer distance from the midline
    lat = (np.abs(2 * np.arange(w) + 1 - w) / w)[None, :, None]
    z = ((np.arange(s) + 0.5) / s)[None, None, :]
    left = (np.arange(w) >= w // 2)[None, :, None]
    return u, lat, z, left


def _face_boundary(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with a 6-neighbour outside the mask or the grid."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = mask.copy()
    for ax in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=ax)[1:-1, 1:-1, 1:-1]
    return mask & ~interior


def build_anatomy(grid, rng) -> tuple[np.ndarray, dict]:
    """Label grid plus the auxiliary masks (body, lung) used to paint intensities."""
    h, w, s = grid
    if h < 16 or w < 16 or s < 4 or w % 2:
        raise SynthesisError(f"grid {tuple(grid)} too small for the phantom (need H, W >= 16, even W, S >= 4)")
    a = _draw_anatomy(rng)
    u, lat, z, left = _coords(grid)

    rho = np.sqrt(((u - _TORSO_U0) / _TORSO_AU) ** 2 + (lat / _TORSO_AL) ** 2)
    torso = np.broadcast_to(rho <= 1.0, grid)
    lung = np.broadcast_to((rho <= 0.72) & (lat > 0.12) & (u > _TORSO_U0 - 0.15), grid)

    # breast: ellipsoid sitting on the anterior torso surface
    surf_u = _TORSO_U0 - _TORSO_AU * np.sqrt(max(0.0, 1 - (a.breast_lat / _TORSO_AL) ** 2))
    bu = surf_u - 0.03 + a.breast_u
    sc = a.breast_scale
    breast_ell = (((u - bu) / (0.15 * sc)) ** 2 + ((lat - a.breast_lat) / (0.30 * sc)) ** 2
                  + ((z - a.breast_z) / (0.30 * sc)) ** 2) <= 1.0
    breast_ell = np.broadcast_to(breast_ell, grid)
    body = torso | breast_ell
    skin = _face_boundary(body) & breast_ell
    breast = breast_ell & ~torso & ~skin

    z_lo, z_hi = a.breast_z - 0.24 * sc, a.breast_z + 0.24 * sc
    lat_lo, lat_hi = a.breast_lat - 0.26 * sc, a.breast_lat + 0.26 * sc
    chest = torso & (rho >= 0.88) & (u < _TORSO_U0) & (lat >= lat_lo) & (lat <= lat_hi) & (z >= z_lo) & (z <= z_hi)

    node_u = _TORSO_U0 - _TORSO_AU * np.sqrt(max(0.0, 1 - (a.node_lat / _TORSO_AL) ** 2)) + 0.08
    nodes = ((((u - node_u) / 0.12) ** 2 + ((lat - a.node_lat) / 0.16) ** 2
              + ((z - a.node_z) / 0.20) ** 2) <= 1.0) & torso & ~chest

    labels = np.zeros(grid, dtype=np.uint8)
    labels[nodes & left] = LEFT_NODES
    labels[nodes & ~left] = RIGHT_NODES
    labels[chest] = CHEST_WALL
    labels[breast & left] = LEFT_BREAST
    labels[breast & ~left] = RIGHT_BREAST
    labels[skin] = SKIN
    return labels, {"body": body, "lung": lung & ~np.isin(labels, (CHEST_WALL, LEFT_NODES, RIGHT_NODES))}


def target_mask(r: ClinicalRecord, labels: np.ndarray) -> np.ndarray:
    """Apply the delineation rules to a label grid."""
    if r.laterality is None or r.surgery is None or (r.n_stage is None and r.t_stage is None):
        raise ValueError("the target is undefined for a record with omitted fields")
    w = labels.shape[1]
    side = np.zeros(labels.shape, dtype=bool)
    if r.laterality == "left":
        side[:, w // 2:, :] = True
        breast, nodes = LEFT_BREAST, LEFT_NODES
    else:
        side[:, :w // 2, :] = True
        breast, nodes = RIGHT_BREAST, RIGHT_NODES
    mask = labels == breast
    if r.needs_nodes():
        mask |= labels == nodes
    if r.surgery == "mastectomy":
        mask |= ((labels == CHEST_WALL) | (labels == SKIN)) & side
    return mask.astype(np.uint8)


def paint_intensity(labels: np.ndarray, aux: dict, rng) -> np.ndarray:
    vol = np.full(labels.shape, _INTENSITY["air"], dtype=np.float64)
    vol[aux["body"]] = _INTENSITY["tissue"]
    vol[aux["lung"]] = _INTENSITY["lung"]
    for lab in range(1, 7):
        vol[labels == lab] = _INTENSITY[lab]
    vol += rng.normal(0.0, NOISE_SIGMA, size=vol.shape)
    return np.clip(vol, 0.0, 1.0).astype(np.float32)


def synthesize(r: ClinicalRecord, seed, grid=DEFAULT_GRID):
    """(intensity volume in [0, 1], label grid, target mask) for one case.

    Volume and labels depend on ``seed`` only; the record picks the target.
    """
    rng = np.random.default_rng(seed)
    labels, aux = build_anatomy(tuple(grid), rng)
    volume = paint_intensity(labels, aux, rng)
    return volume, labels, target_mask(r, labels)


def generate_dataset(out_dir, n: int, seed: int, grid=DEFAULT_GRID, spacing=DEFAULT_SPACING) -> Path:
    """Write ``n`` cases plus ``manifest.txt`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        case = f"case_{i:04d}"
        r = sample_record([seed, i, 0])
        vol, labels, mask = synthesize(r, [seed, i, 1], grid)
        e = ManifestEntry(case, out / f"{case}.rec", out / f"{case}.vol", out / f"{case}.mask", out / f"{case}.labels")
        write_record(e.record, r)
        write_volume(e.volume, vol, spacing, "intensity-f32")
        write_volume(e.mask, mask, spacing, "mask-u8")
        write_volume(e.labels, labels, spacing, "labels-u8")
        entries.append(e)
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


_WORD = re.compile(r"[a-z0-9]+")


def words(text: str) -> list[str]:
    """Lowercased word split with punctuation stripped (shared by the tokenizer)."""
    return _WORD.findall(text.lower())
