"""MMDS dataset container, normalization statistics, and training samplers.

File layout (all little-endian):
    magic b"MMDS" | u32 version | u32 header length | header JSON
    | per episode: u32 meta length | meta JSON | f32 obs array | f32 action array
    | index JSON (u32 length-prefixed) | trailing u64 offset of the index

Observations/actions are stored float32 (compute is float64); round-trips are
byte-exact.  The header carries the observation/action spec, per-feature
normalization stats over successful episodes, and creation metadata (tool
version + invocation parameters; deliberately no wall-clock timestamp so that
regenerating a dataset reproduces identical bytes).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MMDS"
VERSION = 1
STD_FLOOR = 1e-6


class DatasetError(Exception):
    pass


@dataclass
class Episode:
    task_id: str
    seed: int
    operator: str                 # expert | suboptimal | human
    success: bool
    obs: np.ndarray               # (length, obs_dim) float32
    actions: np.ndarray           # (length, action_dim) float32
    stage_events: list = field(default_factory=list)   # [(t, stage name), ...]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.ascontiguousarray(self.obs, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        if len(self.obs) != len(self.actions):
            raise DatasetError("observation/action arrays differ in length")

    @property
    def length(self) -> int:
        return len(self.obs)

    def meta(self) -> dict:
        return {
            "task": self.task_id, "seed": self.seed, "operator": self.operator,
            "success": bool(self.success), "length": self.length,
            "stages": [[int(t), name] for t, name in self.stage_events],
            "extra": self.extra,
        }


def compute_norm_stats(episodes, include_failures: bool = False):
    """Per-feature mean/std over all frames of successful episodes.

    Population std, clamped to STD_FLOOR.  Raises on an empty selection.
    """
    frames = [ep.obs for ep in episodes if ep.success or include_failures]
    if not frames:
        raise DatasetError("no episodes to compute stats over")
    stacked = np.concatenate(frames).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return mean, std


def write_dataset(path, episodes: list[Episode], header_extra: dict | None = None,
                  stats: tuple[np.ndarray, np.ndarray] | None = None) -> None:
    """Single-pass writer; computes stats over successful episodes unless given."""
    if not episodes:
        raise DatasetError("refusing to write an empty dataset")
    obs_dim = episodes[0].obs.shape[1]
    action_dim = episodes[0].actions.shape[1]
    for ep in episodes:
        if ep.obs.shape[1] != obs_dim or ep.actions.shape[1] != action_dim:
            raise DatasetError("episode dims do not match the dataset spec")
    if stats is None:
        try:
            mean, std = compute_norm_stats(episodes)
        except DatasetError:
            mean, std = compute_norm_stats(episodes, include_failures=True)
    else:
        mean, std = stats

    header = {
        "obs_dim": int(obs_dim),
        "action_dim": int(action_dim),
        "norm_mean": [float(x) for x in mean],
        "norm_std": [float(x) for x in std],
        "created": {"tool": "momart", "version": VERSION},
    }
    if header_extra:
        header["created"].update(header_extra)

    index = []
    with open(path, "wb") as f:
        hblob = json.dumps(header, separators=(",", ":")).encode()
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(hblob)))
        f.write(hblob)
        for ep in episodes:
            mblob = json.dumps(ep.meta(), separators=(",", ":")).encode()
            entry = {"offset": f.tell(), "length": ep.length,
                     "success": bool(ep.success), "meta_len": len(mblob)}
            index.append(entry)
            f.write(struct.pack("<I", len(mblob)))
            f.write(mblob)
            f.write(ep.obs.astype("<f4").tobytes())
            f.write(ep.actions.astype("<f4").tobytes())
        iblob = json.dumps(index, separators=(",", ":")).encode()
        index_offset = f.tell()
        f.write(struct.pack("<I", len(iblob)))
        f.write(iblob)
        f.write(struct.pack("<Q", index_offset))


class DatasetReader:
    """Random-access reader over an MMDS file (data stays memory-mapped)."""

    def __init__(self, path):
        self.path = Path(path)
        raw = self.path.read_bytes()
        if len(raw) < 16 or raw[:4] != MAGIC:
            raise DatasetError(f"{path}: bad magic {raw[:4]!r}")
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise DatasetError(f"{path}: unsupported version {version}")
        try:
            self.header = json.loads(raw[12:12 + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DatasetError(f"{path}: corrupt header: {e}") from None
        (index_offset,) = struct.unpack_from("<Q", raw, len(raw) - 8)
        if index_offset >= len(raw):
            raise DatasetError(f"{path}: truncated file (index offset out of range)")
        (ilen,) = struct.unpack_from("<I", raw, index_offset)
        self.index = json.loads(raw[index_offset + 4:index_offset + 4 + ilen].decode())
        self._raw = raw
        self.obs_dim = self.header["obs_dim"]
        self.action_dim = self.header["action_dim"]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def norm_stats(self):
        return (np.array(self.header["norm_mean"]), np.array(self.header["norm_std"]))

    def read_episode(self, i: int) -> Episode:
        entry = self.index[i]
        off = entry["offset"]
        (mlen,) = struct.unpack_from("<I", self._raw, off)
        meta = json.loads(self._raw[off + 4:off + 4 + mlen].decode())
        n = meta["length"]
        obs_bytes = n * self.obs_dim * 4
        act_bytes = n * self.action_dim * 4
        start = off + 4 + mlen
        if start + obs_bytes + act_bytes > len(self._raw):
            raise DatasetError(f"{self.path}: truncated episode {i}")
        obs = np.frombuffer(self._raw, dtype="<f4", count=n * self.obs_dim,
                            offset=start).reshape(n, self.obs_dim)
        actions = np.frombuffer(self._raw, dtype="<f4", count=n * self.action_dim,
                                offset=start + obs_bytes).reshape(n, self.action_dim)
        return Episode(task_id=meta["task"], seed=meta["seed"], operator=meta["operator"],
                       success=meta["success"], obs=obs.copy(), actions=actions.copy(),
                       stage_events=[(t, s) for t, s in meta["stages"]],
                       extra=meta.get("extra", {}))

    def episodes(self):
        return [self.read_episode(i) for i in range(len(self))]


# -- samplers -------------------------------------------------------------------


class WindowSampler:
    """Uniform T-step windows over the valid start indices of usable episodes.

    A window starting at s covers [s, s+T); episodes shorter than T yield one
    left-padded window (first frame repeated) with the padded steps masked out.
    Batches come out step-major: row t*B + b.
    """

    def __init__(self, reader: DatasetReader, window: int, rng: np.random.Generator,
                 include_failures: bool = False):
        self.reader = reader
        self.window = window
        self.rng = rng
        self._episodes = [reader.read_episode(i) for i in range(len(reader))
                          if reader.index[i]["success"] or include_failures]
        if not self._episodes:
            raise DatasetError("no usable episodes for the window sampler")
        self._starts = []
        for ei, ep in enumerate(self._episodes):
            n_starts = max(ep.length - window, 0) + 1
            for s in range(n_starts):
                self._starts.append((ei, s))

    def sample(self, batch: int):
        """Returns (obs, actions, mask) with T*batch step-major rows, float64."""
        T = self.window
        D, A = self.reader.obs_dim, self.reader.action_dim
        obs = np.zeros((T, batch, D))
        act = np.zeros((T, batch, A))
        mask = np.zeros((T, batch, 1))
        picks = self.rng.integers(0, len(self._starts), size=batch)
        for b, pick in enumerate(picks):
            ei, start = self._starts[pick]
            ep = self._episodes[ei]
            chunk = min(T, ep.length - start)
            pad = T - chunk
            if pad:
                obs[:pad, b] = ep.obs[0]
                act[:pad, b] = ep.actions[0]
            obs[pad:, b] = ep.obs[start:start + chunk]
            act[pad:, b] = ep.actions[start:start + chunk]
            mask[pad:, b] = 1.0
        return (obs.reshape(T * batch, D), act.reshape(T * batch, A),
                mask.reshape(T * batch, 1))

    def start_index_counts(self, draws: int) -> dict:
        """Empirical draw frequencies (for the uniformity check)."""
        counts = {}
        for pick in self.rng.integers(0, len(self._starts), size=draws):
            counts[self._starts[pick]] = counts.get(self._starts[pick], 0) + 1
        return counts


class PairSampler:
    """(state, goal-state) pairs a fixed gap apart within one episode."""

    def __init__(self, reader: DatasetReader, gap: int, rng: np.random.Generator,
                 include_failures: bool = False):
        self.reader = reader
        self.gap = gap
        self.rng = rng
        self._episodes = []
        self._pairs = []
        for i in range(len(reader)):
            if not (reader.index[i]["success"] or include_failures):
                continue
            ep = reader.read_episode(i)
            if ep.length < gap + 1:
                continue    # too short to hold any pair
            ei = len(self._episodes)
            self._episodes.append(ep)
            for s in range(ep.length - gap):
                self._pairs.append((ei, s))
        if not self._pairs:
            raise DatasetError(f"no episode long enough for pairs with gap {gap}")

    def sample(self, batch: int):
        D = self.reader.obs_dim
        s = np.zeros((batch, D))
        sg = np.zeros((batch, D))
        picks = self.rng.integers(0, len(self._pairs), size=batch)
        for b, pick in enumerate(picks):
            ei, i = self._pairs[pick]
            ep = self._episodes[ei]
            s[b] = ep.obs[i]
            sg[b] = ep.obs[i + self.gap]
        return s, sg
