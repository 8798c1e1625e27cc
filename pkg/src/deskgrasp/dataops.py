"""Episode files, multi-rate sample alignment, and dataset manifests.

An episode is a JSON-lines file (one header line, one line per control
tick, one footer line, fixed key order) plus binary sidecars next to it:
depth frames (magic ``DXF1``), raw tactile frames (``DXT1``), fingertip
latents (``DXL1``), all little-endian float32, frame-major, plus the
native-rate command streams (``DXA1`` arm, ``DXB1`` hand) in float64 so
a replay reproduces the simulation bit-exactly. Re-serializing a read
episode reproduces the original bytes.

Manifests map episode ids to content hashes and partition labels;
aggregation is a union keyed by id where the newer entry wins.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

FORMAT_VERSION = 1
DEPTH_MAGIC = b"DXF1"
TACTILE_MAGIC = b"DXT1"
LATENT_MAGIC = b"DXL1"
ARM_CMD_MAGIC = b"DXA1"
HAND_CMD_MAGIC = b"DXB1"
DEPTH_SHAPE = (32, 32)
TACTILE_SHAPE = (5, 10, 12, 3)
LATENT_SHAPE = (5, 128)

# kind -> (magic, frame shape, dtype, file extension); the fixed order
# here also fixes hashing order
SIDECARS = {
    "depth": (DEPTH_MAGIC, DEPTH_SHAPE, "<f4", ".depth"),
    "tactile": (TACTILE_MAGIC, TACTILE_SHAPE, "<f4", ".tact"),
    "latent": (LATENT_MAGIC, LATENT_SHAPE, "<f4", ".lat"),
    "arm_cmds": (ARM_CMD_MAGIC, (6,), "<f8", ".acmd"),
    "hand_cmds": (HAND_CMD_MAGIC, (12,), "<f8", ".hcmd"),
}

HEADER_KEYS = ("kind", "version", "task", "instruction_id", "instruction",
               "robot", "rates", "seed", "scene", "sidecars")
TICK_KEYS = ("kind", "t_idx", "t_sec", "q_arm", "q_hand", "cmd_arm",
             "cmd_hand", "ee_pose", "tactile_res", "frames", "flags")
FOOTER_KEYS = ("kind", "success", "failure", "ticks")
FLAG_KEYS = ("operator_engaged", "copilot_active", "intervention")


class IntegrityError(RuntimeError):
    pass


class MissingSourceError(KeyError):
    pass


@dataclass
class Tick:
    t_idx: int
    t_sec: float
    q_arm: np.ndarray            # (6,) rad
    q_hand: np.ndarray           # (12,) rad
    cmd_arm: np.ndarray          # (6,) rad
    cmd_hand: np.ndarray         # (12,) rad
    ee_pose: np.ndarray          # (7,) x y z qw qx qy qz
    tactile_res: np.ndarray      # (15,) five fingertip force sums, N
    frames: Dict[str, int]       # camera name -> depth sidecar index
    operator_engaged: bool = False
    copilot_active: bool = False
    intervention: bool = False

    def to_json(self) -> dict:
        return {
            "kind": "tick",
            "t_idx": self.t_idx,
            "t_sec": self.t_sec,
            "q_arm": [float(v) for v in self.q_arm],
            "q_hand": [float(v) for v in self.q_hand],
            "cmd_arm": [float(v) for v in self.cmd_arm],
            "cmd_hand": [float(v) for v in self.cmd_hand],
            "ee_pose": [float(v) for v in self.ee_pose],
            "tactile_res": [float(v) for v in self.tactile_res],
            "frames": {k: int(v) for k, v in sorted(self.frames.items())},
            "flags": {
                "operator_engaged": self.operator_engaged,
                "copilot_active": self.copilot_active,
                "intervention": self.intervention,
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "Tick":
        return cls(
            t_idx=int(d["t_idx"]), t_sec=float(d["t_sec"]),
            q_arm=np.array(d["q_arm"]), q_hand=np.array(d["q_hand"]),
            cmd_arm=np.array(d["cmd_arm"]),
            cmd_hand=np.array(d["cmd_hand"]),
            ee_pose=np.array(d["ee_pose"]),
            tactile_res=np.array(d["tactile_res"]),
            frames=dict(d["frames"]),
            operator_engaged=bool(d["flags"]["operator_engaged"]),
            copilot_active=bool(d["flags"]["copilot_active"]),
            intervention=bool(d["flags"]["intervention"]),
        )


@dataclass
class EpisodeRecord:
    task: str
    instruction_id: int
    instruction: str
    robot: str
    rates: Dict[str, int]
    seed: int
    scene: dict = field(default_factory=dict)
    ticks: List[Tick] = field(default_factory=list)
    depth_frames: List[np.ndarray] = field(default_factory=list)
    tactile_frames: List[np.ndarray] = field(default_factory=list)
    latent_frames: List[np.ndarray] = field(default_factory=list)
    arm_cmd_frames: List[np.ndarray] = field(default_factory=list)
    hand_cmd_frames: List[np.ndarray] = field(default_factory=list)
    success: bool = False
    failure: Optional[str] = None
    footer_present: bool = True

    def expected_cmd_counts(self) -> Tuple[int, int]:
        """Command-stream lengths implied by the rates and tick count.

        Commands are held piecewise-constant: one arm value per operator
        tick, one hand value per hand tick, covering every inner step up
        to the last logged tick.
        """
        inner = int(self.rates["inner"])
        n_inner = len(self.ticks) * (inner // int(self.rates["log"]))
        per_op = inner // int(self.rates["operator"])
        per_hand = inner // int(self.rates["hand"])
        return (-(-n_inner // per_op), -(-n_inner // per_hand))

    def validate(self):
        for i, tick in enumerate(self.ticks):
            if tick.t_idx != i:
                raise IntegrityError(f"tick index gap at {i}: {tick.t_idx}")
            for name, ref in tick.frames.items():
                if not 0 <= ref < len(self.depth_frames):
                    raise IntegrityError(
                        f"tick {i} camera {name!r} frame {ref} unresolvable")
        if self.tactile_frames and \
                len(self.tactile_frames) != len(self.ticks):
            raise IntegrityError("tactile sidecar length mismatch")
        if self.latent_frames and len(self.latent_frames) != len(self.ticks):
            raise IntegrityError("latent sidecar length mismatch")
        if self.arm_cmd_frames or self.hand_cmd_frames:
            n_arm, n_hand = self.expected_cmd_counts()
            if self.arm_cmd_frames and len(self.arm_cmd_frames) != n_arm:
                raise IntegrityError(
                    f"arm command stream has {len(self.arm_cmd_frames)} "
                    f"entries, rates imply {n_arm}")
            if self.hand_cmd_frames and \
                    len(self.hand_cmd_frames) != n_hand:
                raise IntegrityError(
                    f"hand command stream has {len(self.hand_cmd_frames)} "
                    f"entries, rates imply {n_hand}")


def _write_sidecar(path: Path, kind: str, frames: Sequence[np.ndarray]):
    magic, shape, dtype, _ = SIDECARS[kind]
    with open(path, "wb") as f:
        f.write(magic)
        for frame in frames:
            arr = np.ascontiguousarray(frame, dtype=dtype)
            if arr.shape != shape:
                raise IntegrityError(
                    f"sidecar frame shape {arr.shape}, expected {shape}")
            f.write(arr.tobytes())


def _read_sidecar(path: Path, kind: str, expected: int) -> List[np.ndarray]:
    magic, shape, dtype, _ = SIDECARS[kind]
    blob = path.read_bytes()
    if blob[:4] != magic:
        raise IntegrityError(f"{path.name}: bad sidecar magic")
    payload = blob[4:]
    frame_bytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(payload) % frame_bytes != 0:
        raise IntegrityError(f"{path.name}: payload not a whole number "
                             "of frames")
    count = len(payload) // frame_bytes
    if count < expected:
        raise IntegrityError(
            f"{path.name}: truncated, frame {count} missing "
            f"(expected {expected})")
    data = np.frombuffer(payload, dtype=dtype).reshape((count,) + shape)
    native = np.float32 if dtype == "<f4" else np.float64
    return [data[i].astype(native) for i in range(count)]


def episode_paths(path: str) -> Dict[str, Path]:
    base = Path(path)
    stem = base.with_suffix("")
    out = {"episode": base}
    for kind, (_, _, _, ext) in SIDECARS.items():
        out[kind] = stem.with_suffix(ext)
    return out


def _sidecar_frames(record: EpisodeRecord, kind: str) -> List[np.ndarray]:
    return {"depth": record.depth_frames, "tactile": record.tactile_frames,
            "latent": record.latent_frames,
            "arm_cmds": record.arm_cmd_frames,
            "hand_cmds": record.hand_cmd_frames}[kind]


def write_episode(path: str, record: EpisodeRecord):
    record.validate()
    paths = episode_paths(path)
    sidecars = sorted(
        kind for kind in SIDECARS
        if _sidecar_frames(record, kind)
        or (kind == "depth" and any(t.frames for t in record.ticks)))
    header = {"kind": "header", "version": FORMAT_VERSION,
              "task": record.task, "instruction_id": record.instruction_id,
              "instruction": record.instruction, "robot": record.robot,
              "rates": {k: int(record.rates[k])
                        for k in sorted(record.rates)},
              "seed": record.seed,
              "scene": json.loads(json.dumps(record.scene, sort_keys=True)),
              "sidecars": sidecars}
    lines = [json.dumps(header, sort_keys=False)]
    lines.extend(json.dumps(t.to_json()) for t in record.ticks)
    if record.footer_present:
        lines.append(json.dumps({"kind": "footer", "success": record.success,
                                 "failure": record.failure,
                                 "ticks": len(record.ticks)}))
    paths["episode"].write_text("\n".join(lines) + "\n")
    for kind in sidecars:
        _write_sidecar(paths[kind], kind, _sidecar_frames(record, kind))


def read_episode(path: str) -> EpisodeRecord:
    paths = episode_paths(path)
    text = paths["episode"].read_text()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise IntegrityError("empty episode file")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise IntegrityError("first line is not a header")
    if header.get("version") != FORMAT_VERSION:
        raise IntegrityError(f"unsupported format version "
                             f"{header.get('version')}")
    ticks: List[Tick] = []
    footer = None
    for ln in lines[1:]:
        d = json.loads(ln)
        if d["kind"] == "tick":
            if footer is not None:
                raise IntegrityError("tick after footer")
            ticks.append(Tick.from_json(d))
        elif d["kind"] == "footer":
            footer = d
        else:
            raise IntegrityError(f"unknown line kind {d['kind']!r}")
    record = EpisodeRecord(
        task=header["task"], instruction_id=header["instruction_id"],
        instruction=header["instruction"], robot=header["robot"],
        rates=dict(header["rates"]), seed=header["seed"],
        scene=dict(header.get("scene", {})), ticks=ticks,
        success=bool(footer["success"]) if footer else False,
        failure=footer.get("failure") if footer else None,
        footer_present=footer is not None)
    if footer is not None and footer["ticks"] != len(ticks):
        raise IntegrityError(
            f"footer claims {footer['ticks']} ticks, found {len(ticks)}")
    sidecars = header.get("sidecars", [])
    for kind in sidecars:
        if kind not in SIDECARS:
            raise IntegrityError(f"unknown sidecar kind {kind!r}")
    if "depth" in sidecars:
        max_ref = max((r for t in ticks for r in t.frames.values()),
                      default=-1)
        record.depth_frames = _read_sidecar(paths["depth"], "depth",
                                            max_ref + 1)
    if "tactile" in sidecars:
        record.tactile_frames = _read_sidecar(paths["tactile"], "tactile",
                                              len(ticks))
    if "latent" in sidecars:
        record.latent_frames = _read_sidecar(paths["latent"], "latent",
                                             len(ticks))
    if "arm_cmds" in sidecars or "hand_cmds" in sidecars:
        n_arm, n_hand = record.expected_cmd_counts()
        if "arm_cmds" in sidecars:
            record.arm_cmd_frames = _read_sidecar(paths["arm_cmds"],
                                                  "arm_cmds", n_arm)
        if "hand_cmds" in sidecars:
            record.hand_cmd_frames = _read_sidecar(paths["hand_cmds"],
                                                   "hand_cmds", n_hand)
    record.validate()
    return record


def episode_hash(path: str) -> str:
    """sha256 over the episode file and every sidecar it declares."""
    paths = episode_paths(path)
    h = hashlib.sha256()
    h.update(paths["episode"].read_bytes())
    header = json.loads(paths["episode"].read_text().split("\n", 1)[0])
    for kind in SIDECARS:
        if kind in header.get("sidecars", []):
            h.update(paths[kind].read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Multi-rate alignment
# ---------------------------------------------------------------------------

@dataclass
class RateSyncBuffer:
    """Timestamped samples from one source running at a fixed rate."""

    rate: float
    times: List[float] = field(default_factory=list)
    values: List[object] = field(default_factory=list)

    def push(self, t: float, value):
        if self.times and t <= self.times[-1]:
            raise ValueError(f"timestamps must increase, got {t} after "
                             f"{self.times[-1]}")
        self.times.append(t)
        self.values.append(value)


@dataclass
class AlignedSample:
    value: object
    t_source: float
    stale: bool


def sync_sample(buffers: Dict[str, RateSyncBuffer],
                tick_time: float) -> Dict[str, AlignedSample]:
    """Latest-value-hold: newest sample with timestamp <= tick_time per
    source; stale when older than two source periods."""
    out = {}
    for name, buf in buffers.items():
        if not buf.times:
            raise MissingSourceError(name)
        i = bisect_right(buf.times, tick_time) - 1
        if i < 0:
            raise MissingSourceError(f"{name}: no sample at or before "
                                     f"t={tick_time}")
        t_src = buf.times[i]
        out[name] = AlignedSample(value=buf.values[i], t_source=t_src,
                                  stale=(tick_time - t_src) > 2.0 / buf.rate)
    return out


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

PARTITIONS = ("D_uni", "D_success", "D_corrective", "D_orient", "D_corner")


class ManifestConflict(RuntimeError):
    pass


def new_manifest() -> dict:
    return {"version": FORMAT_VERSION, "episodes": {}}


def manifest_add(manifest: dict, episode_id: str, path: str,
                 partition: str, created: float,
                 label: Optional[str] = None) -> dict:
    if partition.split("(")[0] not in PARTITIONS:
        raise ValueError(f"unknown partition {partition!r}")
    entry = {"file": Path(path).name, "hash": episode_hash(path),
             "partition": partition, "created": float(created)}
    if label is not None:
        entry["label"] = label
    manifest["episodes"][episode_id] = entry
    return manifest


def save_manifest(path: str, manifest: dict):
    body = {"version": manifest["version"],
            "episodes": {k: manifest["episodes"][k]
                         for k in sorted(manifest["episodes"])}}
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def load_manifest(path: str, verify_dir: Optional[str] = None) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise IntegrityError("unsupported manifest version")
    if verify_dir is not None:
        base = Path(verify_dir)
        for eid, entry in manifest["episodes"].items():
            actual = episode_hash(str(base / entry["file"]))
            if actual != entry["hash"]:
                raise IntegrityError(
                    f"episode {eid}: content hash mismatch "
                    f"(manifest {entry['hash'][:12]}, file {actual[:12]})")
    return manifest


def aggregate(base: dict, new: dict) -> dict:
    """Union keyed by episode id; on duplicates the newer entry wins."""
    merged = {"version": FORMAT_VERSION,
              "episodes": dict(base["episodes"])}
    replaced = []
    for eid, entry in new["episodes"].items():
        if eid in merged["episodes"]:
            old = merged["episodes"][eid]
            if old["hash"] == entry["hash"]:
                continue
            if old["created"] == entry["created"]:
                raise ManifestConflict(
                    f"episode {eid}: differing content with equal "
                    f"timestamps")
            if entry["created"] > old["created"]:
                merged["episodes"][eid] = entry
                replaced.append(eid)
        else:
            merged["episodes"][eid] = entry
    if replaced:
        print(f"aggregate: replaced {len(replaced)} episode(s): "
              + ", ".join(sorted(replaced)))
    return merged


def partition_ids(manifest: dict, prefix: str) -> List[str]:
    """Episode ids whose partition matches, e.g. 'D_success(1)' or
    the bare family name 'D_success'."""
    out = []
    for eid, entry in manifest["episodes"].items():
        p = entry["partition"]
        if p == prefix or p.split("(")[0] == prefix:
            out.append(eid)
    return sorted(out)
