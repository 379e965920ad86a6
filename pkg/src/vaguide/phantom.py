"""Procedural cardiac phantom: posed ellipsoid chambers with a cardiac-phase
pulsation, ten named standard-plane poses derived from chamber geometry, and
a slice renderer that images any probe pose.

Intensity model: background 0.1, chamber interiors at their own intensity,
and a 2 mm Gaussian-soft boundary shell at 0.9 standing in for echogenic
walls. Chamber radii scale by (1 + phase_amplitude * sin(2*pi*phase)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, compose, euler_zyx_to_quat, matrix_to_quat, pose_distance, quat_to_matrix
from .rng import SplitMix64, counter_uniform_pm1

BACKGROUND = 0.1
WALL_INTENSITY = 0.9
WALL_SIGMA_MM = 2.0
SPECKLE_AMP = 0.15
DEFAULT_FOV_MM = 120.0

PLANE_NAMES = (
    "PLAX",
    "PSAX-AV",
    "PSAX-MV",
    "PSAX-PM",
    "A4C",
    "A5C",
    "A2C",
    "A3C",
    "SC4C",
    "SC-IVC",
)


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray  # mm
    radii: np.ndarray  # mm
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    intensity: float  # in [0, 1]
    phase_amplitude: float  # in [0, 0.3]
    label: str = ""


@dataclass(frozen=True)
class Phantom:
    chambers: tuple[Ellipsoid, ...]
    seed: int
    bounds: np.ndarray = field(default_factory=lambda: np.array([80.0, 80.0, 80.0]))

    def __post_init__(self):
        labels = [c.label for c in self.chambers]
        if sum(1 for l in labels if l.endswith("ventricle")) < 2:
            raise ValueError("phantom needs two ventricles")
        if sum(1 for l in labels if l.endswith("atrium")) < 2:
            raise ValueError("phantom needs two atria")
        if "vessel" not in labels:
            raise ValueError("phantom needs a vessel")
        for c in self.chambers:
            if np.any(np.abs(c.center) + np.max(c.radii) > self.bounds):
                raise ValueError(f"chamber {c.label} outside phantom bounds")

    def chamber(self, label: str) -> Ellipsoid:
        for c in self.chambers:
            if c.label == label:
                return c
        raise KeyError(label)


@dataclass(frozen=True)
class SliceImage:
    width: int
    height: int
    data: np.ndarray  # (height, width) float32 in [0, 1], row-major

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise ValueError("image data shape mismatch")


@dataclass(frozen=True)
class StandardPlaneSet:
    planes: tuple[Pose, ...]
    names: tuple[str, ...] = PLANE_NAMES

    def __post_init__(self):
        if len(self.planes) != 10:
            raise ValueError("exactly 10 standard planes required")
        for i in range(10):
            for j in range(i + 1, 10):
                t, r = pose_distance(self.planes[i], self.planes[j])
                if t <= 5.0 and r <= 5.0:
                    raise ValueError(
                        f"planes {self.names[i]} and {self.names[j]} too close "
                        f"({t:.2f} mm, {r:.2f} deg)"
                    )


def make_phantom(seed: int) -> Phantom:
    """Deterministic phantom from a 64-bit seed.

    Parameter draw ranges (mm): ventricle radii 15-28, atrium radii 10-18,
    vessel cross radii 6-10 with a 25-38 long axis; chamber centers jitter
    a few mm around a fixed heart layout.
    """
    rng = SplitMix64(seed)

    def jitter(base, amount):
        return np.array(base) + rng.uniform3([-amount] * 3, [amount] * 3)

    def tilt(max_deg):
        return euler_zyx_to_quat(
            rng.uniform(-max_deg, max_deg),
            rng.uniform(-max_deg, max_deg),
            rng.uniform(-max_deg, max_deg),
        )

    lv = Ellipsoid(
        center=jitter([-18.0, -15.0, 0.0], 4.0),
        radii=np.array(
            [rng.uniform(15, 22), rng.uniform(15, 22), rng.uniform(20, 28)]
        ),
        orientation=tilt(15.0),
        intensity=rng.uniform(0.25, 0.35),
        phase_amplitude=rng.uniform(0.05, 0.18),
        label="left ventricle",
    )
    rv = Ellipsoid(
        center=jitter([18.0, -12.0, 2.0], 4.0),
        radii=np.array(
            [rng.uniform(15, 20), rng.uniform(15, 20), rng.uniform(17, 24)]
        ),
        orientation=tilt(15.0),
        intensity=rng.uniform(0.35, 0.45),
        phase_amplitude=rng.uniform(0.05, 0.18),
        label="right ventricle",
    )
    la = Ellipsoid(
        center=jitter([-14.0, 20.0, 2.0], 3.0),
        radii=np.array(
            [rng.uniform(10, 15), rng.uniform(10, 15), rng.uniform(12, 18)]
        ),
        orientation=tilt(12.0),
        intensity=rng.uniform(0.45, 0.55),
        phase_amplitude=rng.uniform(0.03, 0.12),
        label="left atrium",
    )
    ra = Ellipsoid(
        center=jitter([16.0, 18.0, 0.0], 3.0),
        radii=np.array(
            [rng.uniform(10, 15), rng.uniform(10, 15), rng.uniform(12, 18)]
        ),
        orientation=tilt(12.0),
        intensity=rng.uniform(0.55, 0.65),
        phase_amplitude=rng.uniform(0.03, 0.12),
        label="right atrium",
    )
    vessel = Ellipsoid(
        center=jitter([0.0, 10.0, -8.0], 3.0),
        radii=np.array(
            [rng.uniform(6, 10), rng.uniform(6, 10), rng.uniform(25, 38)]
        ),
        orientation=tilt(10.0),
        intensity=rng.uniform(0.65, 0.75),
        phase_amplitude=rng.uniform(0.0, 0.05),
        label="vessel",
    )
    return Phantom(chambers=(lv, rv, la, ra, vessel), seed=seed)


def _plane_pose(origin, u_dir, v_hint) -> Pose:
    """Pose whose imaging plane (frame x/y) contains u_dir and v_hint."""
    u = np.asarray(u_dir, dtype=np.float64)
    u = u / np.linalg.norm(u)
    v = np.asarray(v_hint, dtype=np.float64)
    v = v - np.dot(v, u) * u
    v = v / np.linalg.norm(v)
    n = np.cross(u, v)
    rot = np.stack([u, v, n], axis=1)
    return Pose(np.asarray(origin, dtype=np.float64), matrix_to_quat(rot))


def standard_planes(ph: Phantom) -> StandardPlaneSet:
    """Ten standard-plane poses built deterministically from chamber geometry.

    Constructions (imaging plane = probe frame x/y):
    - PLAX: through LV, vessel root, and LA centers.
    - PSAX-AV/MV/PM: perpendicular to the LV-vessel long axis at 80%/45%/15%
      of the LV-to-vessel distance.
    - A4C: through both ventricle centers and the atria midpoint.
    - A5C: through both ventricle centers and the vessel center.
    - A2C: through LV and LA centers, containing the A4C normal.
    - A3C: through LV, LA, and vessel centers.
    - SC4C: the A4C plane shifted 25 mm along its in-plane y and tilted 20
      degrees about its x axis.
    - SC-IVC: along the vessel long axis through the vessel/RA midpoint.
    """
    c_lv = ph.chamber("left ventricle").center
    c_rv = ph.chamber("right ventricle").center
    c_la = ph.chamber("left atrium").center
    c_ra = ph.chamber("right atrium").center
    ves = ph.chamber("vessel")
    c_ao = ves.center
    m_a = 0.5 * (c_la + c_ra)
    m_v = 0.5 * (c_lv + c_rv)

    long_axis = c_ao - c_lv
    lv_ao_dist = np.linalg.norm(long_axis)
    axis = long_axis / lv_ao_dist
    # stable in-plane basis for the short-axis stack
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])

    plax = _plane_pose(0.5 * (c_lv + c_ao), c_ao - c_lv, c_la - c_lv)
    psax_av = _plane_pose(c_lv + 0.80 * long_axis, np.cross(axis, ref), ref)
    psax_mv = _plane_pose(c_lv + 0.45 * long_axis, np.cross(axis, ref), ref)
    psax_pm = _plane_pose(c_lv + 0.15 * long_axis, np.cross(axis, ref), ref)
    a4c = _plane_pose((c_lv + c_rv + m_a) / 3.0, c_rv - c_lv, m_a - m_v)
    a5c = _plane_pose((c_lv + c_rv + c_ao) / 3.0, c_rv - c_lv, c_ao - m_v)
    n_a4c = quat_to_matrix(a4c.orientation)[:, 2]
    a2c = _plane_pose(0.5 * (c_lv + c_la), c_la - c_lv, n_a4c)
    a3c = _plane_pose((c_lv + c_la + c_ao) / 3.0, c_la - c_lv, c_ao - c_lv)
    sc_offset = Pose(np.array([0.0, 25.0, 0.0]), euler_zyx_to_quat(20.0, 0.0, 0.0))
    sc4c = compose(a4c, sc_offset)
    vessel_axis = quat_to_matrix(ves.orientation)[:, 2]
    sc_ivc = _plane_pose(0.5 * (c_ao + c_ra), vessel_axis, c_ra - c_ao)

    return StandardPlaneSet(
        planes=(plax, psax_av, psax_mv, psax_pm, a4c, a5c, a2c, a3c, sc4c, sc_ivc)
    )


def phase_at(time_s: float, heart_rate_hz: float) -> float:
    """Cardiac phase in [0, 1) at a given time."""
    if heart_rate_hz <= 0:
        raise ValueError("heart rate must be positive")
    return math.fmod(time_s * heart_rate_hz, 1.0)


def _plane_grid(probe: Pose, width: int, height: int, fov_mm: float) -> np.ndarray:
    """(height, width, 3) world coordinates of the imaging-plane pixel grid."""
    rot = quat_to_matrix(probe.orientation)
    u = (np.arange(width) / (width - 1) - 0.5) * fov_mm
    v = (np.arange(height) / (height - 1) - 0.5) * fov_mm
    uu, vv = np.meshgrid(u, v)
    return (
        probe.position[None, None, :]
        + uu[:, :, None] * rot[:, 0][None, None, :]
        + vv[:, :, None] * rot[:, 1][None, None, :]
    )


def chamber_normalized_radius(
    chamber: Ellipsoid, points: np.ndarray, phase: float
) -> np.ndarray:
    """Normalized ellipsoid radius of world points (< 1 means in-chamber)."""
    scale = 1.0 + chamber.phase_amplitude * math.sin(2.0 * math.pi * phase)
    rot = quat_to_matrix(chamber.orientation)
    local = (points - chamber.center) @ rot  # R^T (p - c), row-wise
    return np.linalg.norm(local / (chamber.radii * scale), axis=-1)


def render_slice(
    ph: Phantom,
    probe: Pose,
    phase: float,
    width: int = 64,
    height: int = 64,
    noise_seed: int | None = 0,
    fov_mm: float = DEFAULT_FOV_MM,
) -> SliceImage:
    """Grayscale slice of the phantom on the probe's imaging plane.

    Deterministic in all arguments; noise_seed=None disables speckle.
    """
    if width < 8 or height < 8:
        raise ValueError("width and height must be >= 8")
    if not 0.0 <= phase < 1.0:
        raise ValueError(f"phase {phase} outside [0, 1)")

    points = _plane_grid(probe, width, height, fov_mm)
    img = np.full((height, width), BACKGROUND, dtype=np.float64)
    for chamber in ph.chambers:
        scale = 1.0 + chamber.phase_amplitude * math.sin(2.0 * math.pi * phase)
        rho = chamber_normalized_radius(chamber, points, phase)
        d_mm = (rho - 1.0) * float(np.exp(np.mean(np.log(chamber.radii * scale))))
        wall = WALL_INTENSITY * np.exp(-(d_mm**2) / (2.0 * WALL_SIGMA_MM**2))
        img = np.maximum(img, np.where(rho < 1.0, chamber.intensity, BACKGROUND))
        img = np.maximum(img, wall)

    if noise_seed is not None:
        u = counter_uniform_pm1(noise_seed, np.arange(height * width, dtype=np.uint64))
        img = img * (1.0 + SPECKLE_AMP * u.reshape(height, width))
    img = np.clip(img, 0.0, 1.0)
    return SliceImage(width=width, height=height, data=img.astype(np.float32))
