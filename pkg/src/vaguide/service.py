"""Interactive guidance service.

One websocket connection per probe session: the client sends JSON frames
{type, seq, body...}; every accepted frame is answered with a full "state"
frame carrying the rendered slice (base64 of the raw little-endian float32
pixels, row-major), the probe pose, ten predicted actions, and a debug block
with the true distance to every standard plane. Sessions are isolated — each
connection owns its probe, history buffer, and step counter; the model
snapshot is shared read-only.
"""

from __future__ import annotations

import base64
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .geometry import Action6, Pose, apply_action, pose_distance, relative_action
from .phantom import (
    PLANE_NAMES,
    Phantom,
    make_phantom,
    phase_at,
    render_slice,
    standard_planes,
)
from .rng import MASK64, SplitMix64, mix64

HISTORY_CAPACITY = 64
DEFAULT_HEART_RATE_HZ = 1.2

_session_ids = itertools.count(1)


@dataclass
class HistoryEntry:
    image: np.ndarray  # (H, W) float32
    pose: Pose
    timestamp: float


@dataclass
class Session:
    """Rolling state of one connected probe operator."""

    id: int
    phantom: Phantom
    pose: Pose
    model: object
    heart_rate_hz: float = DEFAULT_HEART_RATE_HZ
    image_size: int = 64
    fov_mm: float = 120.0
    selected_plane: int = 1
    history: list[HistoryEntry] = field(default_factory=list)
    step_count: int = 0

    def _clamp(self, pose: Pose) -> Pose:
        bounds = self.phantom.bounds
        clipped = np.clip(pose.position, -bounds, bounds)
        if np.array_equal(clipped, pose.position):
            return pose
        return Pose(clipped, pose.orientation)

    def reset(self, pose: Pose) -> None:
        self.pose = pose
        self.history.clear()
        self.step_count = 0

    def step(self, delta: Action6, now: float) -> dict:
        """Apply a probe motion and produce the full guidance payload."""
        arr = delta.to_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError("probe motion must be finite")
        self.pose = self._clamp(apply_action(self.pose, delta))
        phase = phase_at(now, self.heart_rate_hz)
        noise_seed = mix64((self.id * 0x10001 + self.step_count) & MASK64)
        img = render_slice(
            self.phantom, self.pose, phase,
            self.image_size, self.image_size, noise_seed, self.fov_mm,
        )
        ts = now if not self.history or now > self.history[-1].timestamp else (
            self.history[-1].timestamp + 1e-6
        )
        self.history.append(HistoryEntry(img.data, self.pose, ts))
        if len(self.history) > HISTORY_CAPACITY:
            del self.history[: len(self.history) - HISTORY_CAPACITY]
        self.step_count += 1

        L = self.model.cfg.adapter.seq_len
        entries = sample_history(
            self.history, L, rng_seed=mix64(self.id * 0x2545F491 + self.step_count)
        )
        images = np.stack([e.image for e in entries]).astype(np.float32)
        actions = np.stack(
            [
                relative_action(a.pose, b.pose).to_array()
                for a, b in zip(entries, entries[1:])
            ]
        ).astype(np.float32)
        guidance = self.model.forward(images[None], actions[None]).data[0]

        planes = standard_planes(self.phantom).planes
        plane_dist = [list(pose_distance(self.pose, p)) for p in planes]
        return {
            "type": "state",
            "pose": self.pose.to_array().tolist(),
            "image": encode_image(img.data),
            "guidance": guidance.astype(float).tolist(),
            "selected": self.selected_plane,
            "history_len": len(self.history),
            "debug": {"plane_dist": plane_dist},
        }


def sample_history(history: list[HistoryEntry], L: int, rng_seed: int) -> list[HistoryEntry]:
    """Segmental draw of L-1 past entries plus the newest as query.

    Short histories repeat the oldest entry, mirroring the dataset sampler's
    insufficient-history fallback.
    """
    n_hist = len(history) - 1
    n_seg = L - 1
    if n_hist < n_seg:
        indices = [0] * (n_seg - n_hist) + list(range(n_hist))
    else:
        rng = SplitMix64(rng_seed)
        base, rem = divmod(n_hist, n_seg)
        indices = []
        start = 0
        for s in range(n_seg):
            size = base + (1 if s < rem else 0)
            indices.append(start + rng.next_u64() % size)
            start += size
    indices.append(len(history) - 1)
    return [history[i] for i in indices]


def encode_image(pixels: np.ndarray) -> dict:
    h, w = pixels.shape
    return {
        "w": w,
        "h": h,
        "b64": base64.b64encode(pixels.astype("<f4").tobytes()).decode("ascii"),
    }


def decode_image(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["b64"])
    return np.frombuffer(raw, dtype="<f4").reshape(blob["h"], blob["w"])


def _error(seq, code: str, msg: str) -> dict:
    return {"type": "error", "seq": seq, "code": code, "msg": msg}


def create_app(model, phantom_seed: int, heart_rate_hz: float = DEFAULT_HEART_RATE_HZ,
               image_size: int = 64, fov_mm: float = 120.0, clock=time.monotonic) -> FastAPI:
    """Build the guidance service around one shared read-only model."""
    app = FastAPI(title="probe guidance service")
    phantom = make_phantom(phantom_seed)
    start_pose = Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @app.get("/health")
    def health():
        return {"status": "ok", "phantom_seed": phantom_seed}

    @app.get("/planes")
    def planes():
        return {
            "planes": [
                {"id": i + 1, "name": name} for i, name in enumerate(PLANE_NAMES)
            ]
        }

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        session = Session(
            id=next(_session_ids),
            phantom=phantom,
            pose=start_pose,
            model=model,
            heart_rate_hz=heart_rate_hz,
            image_size=image_size,
            fov_mm=fov_mm,
        )
        # initial state so the client has something to draw before moving
        first = session.step(Action6.zero(), clock())
        first["seq"] = 0
        await ws.send_json(first)
        try:
            while True:
                msg = await ws.receive_json()
                seq = msg.get("seq")
                kind = msg.get("type")
                try:
                    if kind == "move":
                        delta = msg.get("delta")
                        if not (isinstance(delta, list) and len(delta) == 6):
                            await ws.send_json(_error(seq, "bad_request", "delta must be a 6-list"))
                            continue
                        vals = [float(x) for x in delta]
                        if not all(math.isfinite(v) for v in vals):
                            await ws.send_json(_error(seq, "non_finite", "delta must be finite"))
                            continue
                        state = session.step(
                            Action6(np.array(vals[:3]), np.array(vals[3:])), clock()
                        )
                    elif kind == "select_plane":
                        plane = msg.get("plane")
                        if not isinstance(plane, int) or not 1 <= plane <= 10:
                            await ws.send_json(_error(seq, "bad_request", "plane must be 1..10"))
                            continue
                        session.selected_plane = plane
                        state = session.step(Action6.zero(), clock())
                    elif kind == "reset":
                        session.reset(start_pose)
                        state = session.step(Action6.zero(), clock())
                    else:
                        await ws.send_json(_error(seq, "bad_request", f"unknown type {kind!r}"))
                        continue
                except ValueError as e:
                    await ws.send_json(_error(seq, "bad_request", str(e)))
                    continue
                state["seq"] = seq
                await ws.send_json(state)
        except WebSocketDisconnect:
            pass

    return app
