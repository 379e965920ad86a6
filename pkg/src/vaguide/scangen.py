"""Expert scan synthesis, guidance labels, segmental sequence sampling, and
the on-disk scan/dataset format.

A scan visits the ten standard planes in their canonical order, pausing at
each one for a few frames while the cardiac phase keeps advancing; the
paused frames share an identical pose and therefore identical labels.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Action6, Pose, apply_action, interpolate, relative_action
from .phantom import Phantom, SliceImage, make_phantom, phase_at, render_slice, standard_planes
from .rng import SplitMix64

SCAN_MAGIC = b"USCN"
SCAN_VERSION = 1


class ScanFormatError(ValueError):
    """Wrong magic or unsupported version."""


class ScanTruncatedError(ValueError):
    """File ends before the declared payload."""


class ScanChecksumError(ValueError):
    """Payload bytes do not match the stored CRC32C."""


class InsufficientHistoryError(ValueError):
    """Query frame has fewer than L-1 predecessors."""


@dataclass(frozen=True)
class Frame:
    timestamp_s: float
    pose: Pose
    phase: float
    image: SliceImage


@dataclass(frozen=True)
class Scan:
    frames: tuple[Frame, ...]
    plane_marks: dict[int, int]  # plane index (1..10) -> frame index
    phantom_seed: int

    def __post_init__(self):
        if sorted(self.plane_marks) != list(range(1, 11)):
            raise ValueError("plane_marks must cover planes 1..10")
        ts = [f.timestamp_s for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")


@dataclass(frozen=True)
class SequenceSample:
    images: tuple[SliceImage, ...]  # L images, query last
    actions: tuple[Action6, ...]  # L-1 inter-frame actions
    labels: tuple[Action6, ...]  # 10 target actions, plane order 1..10
    query_index: int
    frame_indices: tuple[int, ...]
    padded: bool = False  # history shorter than L-1, earliest frame repeated


@dataclass(frozen=True)
class ScanConfig:
    frames_per_leg: int = 6
    pause_frames: int = 3
    frame_rate_hz: float = 5.0
    heart_rate_hz: float = 1.2
    jitter_mm: float = 2.0
    jitter_deg: float = 2.0
    width: int = 64
    height: int = 64
    fov_mm: float = 120.0
    speckle: bool = True  # per-frame speckle noise; off for clean-image runs

    def __post_init__(self):
        if self.frames_per_leg < 2:
            raise ValueError("frames_per_leg must be >= 2")


def generate_scan(ph: Phantom, seed: int, config: ScanConfig = ScanConfig()) -> Scan:
    """Synthesize one expert scan over the ten standard planes.

    Frame count is 10 * (frames_per_leg + pause_frames) - frames_per_leg:
    a pause at every plane plus nine interpolated legs.
    """
    rng = SplitMix64(seed)
    planes = standard_planes(ph).planes
    poses: list[Pose] = []
    marks: dict[int, int] = {}

    def jittered(p: Pose) -> Pose:
        dt = np.array([rng.uniform(-config.jitter_mm, config.jitter_mm) for _ in range(3)])
        dr = np.array([rng.uniform(-config.jitter_deg, config.jitter_deg) for _ in range(3)])
        return apply_action(p, Action6(dt, dr))

    for i, plane in enumerate(planes):
        if i > 0:
            f = config.frames_per_leg
            for k in range(1, f + 1):
                s = k / (f + 1)
                poses.append(jittered(interpolate(planes[i - 1], plane, s)))
        marks[i + 1] = len(poses)
        poses.extend([plane] * config.pause_frames)

    frames = []
    for idx, pose in enumerate(poses):
        t = idx / config.frame_rate_hz
        phase = phase_at(t, config.heart_rate_hz)
        noise_seed = (seed * 0x10001 + idx) & ((1 << 64) - 1) if config.speckle else None
        img = render_slice(
            ph, pose, phase, config.width, config.height, noise_seed, config.fov_mm
        )
        frames.append(Frame(timestamp_s=t, pose=pose, phase=phase, image=img))
    return Scan(frames=tuple(frames), plane_marks=marks, phantom_seed=ph.seed)


def compute_labels(scan: Scan, frame_index: int) -> tuple[Action6, ...]:
    """Ten relative actions from a frame to each marked standard plane."""
    if not 0 <= frame_index < len(scan.frames):
        raise IndexError(f"frame index {frame_index} out of range")
    pose = scan.frames[frame_index].pose
    return tuple(
        relative_action(pose, scan.frames[scan.plane_marks[i]].pose) for i in range(1, 11)
    )


def segmental_sample(
    scan: Scan,
    query_index: int,
    L: int,
    rng_seed: int,
    allow_fallback: bool = False,
) -> SequenceSample:
    """History frames drawn one-per-segment from the query's past.

    Frames 0..query_index-1 are split into L-1 equal segments (remainder to
    the earliest segments) and one frame is drawn uniformly from each. With
    allow_fallback, short histories repeat the earliest frame instead of
    raising.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    if not 0 <= query_index < len(scan.frames):
        raise IndexError(f"query index {query_index} out of range")

    n_hist = query_index
    n_seg = L - 1
    padded = False
    if n_hist < n_seg:
        if not allow_fallback:
            raise InsufficientHistoryError(
                f"query frame {query_index} has only {n_hist} predecessors, need {n_seg}"
            )
        indices = [0] * (n_seg - n_hist) + list(range(n_hist))
        padded = True
    else:
        rng = SplitMix64(rng_seed)
        base = n_hist // n_seg
        rem = n_hist % n_seg
        indices = []
        start = 0
        for s in range(n_seg):
            size = base + (1 if s < rem else 0)
            indices.append(start + rng.next_u64() % size)
            start += size
    indices.append(query_index)

    frames = [scan.frames[i] for i in indices]
    actions = tuple(
        relative_action(a.pose, b.pose) for a, b in zip(frames, frames[1:])
    )
    return SequenceSample(
        images=tuple(f.image for f in frames),
        actions=actions,
        labels=compute_labels(scan, query_index),
        query_index=query_index,
        frame_indices=tuple(indices),
        padded=padded,
    )


_CRC32C_TABLES: list[list[int]] = []


def _crc32c_tables() -> list[list[int]]:
    if not _CRC32C_TABLES:
        t0 = []
        for i in range(256):
            c = i
            for _ in range(8):
                c = (c >> 1) ^ 0x82F63B78 if c & 1 else c >> 1
            t0.append(c)
        _CRC32C_TABLES.append(t0)
        for k in range(1, 8):
            prev = _CRC32C_TABLES[k - 1]
            _CRC32C_TABLES.append([t0[prev[i] & 0xFF] ^ (prev[i] >> 8) for i in range(256)])
    return _CRC32C_TABLES


def crc32c(data: bytes) -> int:
    """CRC32C (Castagnoli), slice-by-8 table-driven."""
    t = _crc32c_tables()
    t0, t1, t2, t3, t4, t5, t6, t7 = t
    crc = 0xFFFFFFFF
    n = len(data)
    i = 0
    for i in range(0, n - 7, 8):
        w = int.from_bytes(data[i : i + 4], "little") ^ crc
        crc = (
            t7[w & 0xFF]
            ^ t6[(w >> 8) & 0xFF]
            ^ t5[(w >> 16) & 0xFF]
            ^ t4[(w >> 24) & 0xFF]
            ^ t3[data[i + 4]]
            ^ t2[data[i + 5]]
            ^ t1[data[i + 6]]
            ^ t0[data[i + 7]]
        )
        i += 8
    for j in range(n - (n % 8), n):
        crc = t0[(crc ^ data[j]) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def write_scan(scan: Scan, path) -> None:
    path = Path(path)
    w = scan.frames[0].image.width
    h = scan.frames[0].image.height
    header = {
        "width": w,
        "height": h,
        "channels": 1,
        "frame_count": len(scan.frames),
        "phantom_seed": scan.phantom_seed,
        "plane_marks": {str(k): v for k, v in sorted(scan.plane_marks.items())},
        "poses": [f.pose.to_array().tolist() for f in scan.frames],
        "timestamps": [f.timestamp_s for f in scan.frames],
        "phases": [f.phase for f in scan.frames],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    payload = b"".join(
        f.image.data.astype("<f4").tobytes() for f in scan.frames
    )
    with open(path, "wb") as fh:
        fh.write(SCAN_MAGIC)
        fh.write(struct.pack("<H", SCAN_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", crc32c(payload)))


def read_scan(path) -> Scan:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:4] != SCAN_MAGIC:
        raise ScanFormatError(f"{path}: not a scan file (bad magic)")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != SCAN_VERSION:
        raise ScanFormatError(f"{path}: unsupported scan version {version}")
    (hlen,) = struct.unpack("<I", raw[6:10])
    if len(raw) < 10 + hlen:
        raise ScanTruncatedError(f"{path}: truncated header")
    header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    w, h, n = header["width"], header["height"], header["frame_count"]
    payload_len = n * w * h * 4
    body = raw[10 + hlen :]
    if len(body) < payload_len + 4:
        raise ScanTruncatedError(f"{path}: truncated payload")
    payload = body[:payload_len]
    (stored_crc,) = struct.unpack("<I", body[payload_len : payload_len + 4])
    if crc32c(payload) != stored_crc:
        raise ScanChecksumError(f"{path}: payload checksum mismatch")

    pixels = np.frombuffer(payload, dtype="<f4").reshape(n, h, w)
    frames = tuple(
        Frame(
            timestamp_s=header["timestamps"][i],
            pose=Pose.from_array(header["poses"][i]),
            phase=header["phases"][i],
            image=SliceImage(width=w, height=h, data=pixels[i].copy()),
        )
        for i in range(n)
    )
    marks = {int(k): v for k, v in header["plane_marks"].items()}
    return Scan(frames=frames, plane_marks=marks, phantom_seed=header["phantom_seed"])


@dataclass(frozen=True)
class DatasetManifest:
    scans: tuple[dict, ...]  # {"path", "split", "phantom_seed", "scan_seed"}

    def paths(self, split: str) -> list[str]:
        return [s["path"] for s in self.scans if s["split"] == split]

    def to_json(self) -> str:
        return json.dumps({"scans": list(self.scans)}, indent=2)

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        return DatasetManifest(scans=tuple(json.loads(text)["scans"]))


def build_dataset(
    phantom_seeds: list[int],
    scans_per_phantom: int,
    out_dir,
    train_fraction: float = 0.8,
    config: ScanConfig = ScanConfig(),
) -> DatasetManifest:
    """Generate scans for each phantom and split by phantom seed.

    The split partitions phantoms, never individual scans, so no phantom
    contributes to both train and validation.
    """
    if not phantom_seeds:
        raise ValueError("need at least one phantom seed")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n_train = round(train_fraction * len(phantom_seeds))
    entries = []
    for pi, pseed in enumerate(phantom_seeds):
        split = "train" if pi < n_train else "val"
        ph = make_phantom(pseed)
        for si in range(scans_per_phantom):
            scan_seed = (pseed * 1000003 + si) & ((1 << 64) - 1)
            scan = generate_scan(ph, scan_seed, config)
            rel = f"phantom_{pi:03d}/scan_{si:03d}.uscn"
            dest = out / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            try:
                write_scan(scan, dest)
            except OSError as e:
                raise OSError(f"failed writing scan to {dest}: {e}") from e
            entries.append(
                {"path": rel, "split": split, "phantom_seed": pseed, "scan_seed": scan_seed}
            )

    train_seeds = {e["phantom_seed"] for e in entries if e["split"] == "train"}
    val_seeds = {e["phantom_seed"] for e in entries if e["split"] == "val"}
    assert not (train_seeds & val_seeds), "split must be disjoint by phantom"

    manifest = DatasetManifest(scans=tuple(entries))
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(Path(path).read_text())
