"""Binary member checkpoints.

Layout (all little-endian):

    magic   4 bytes  b"PBTC"
    version u32      currently 1
    kind    u8       0 = adam, 1 = diag_ggn, 2 = kfac
    hyper   4 x f64  lr_actor, lr_critic, batch_size, damping (NaN if absent)
    6 x (count u64 + count x f64)   flat parameters of actor, critic1,
                                    critic2, target_actor, target_critic1,
                                    target_critic2, in flatten() order
    length  u64      stored transitions, oldest first
    rows    length x (2*obs_dim + action_dim + 2) x f64
                                    s, a, r, s', done per transition

Checkpoint identity for determinism checks is the SHA-256 of the file bytes.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nets
from .optim import HyperparamSet, OptimizerKind
from .td3 import ReplayBuffer, TD3Agent

MAGIC = b"PBTC"
VERSION = 1

_KIND_TAGS = {
    OptimizerKind.ADAM: 0,
    OptimizerKind.DIAG_GGN: 1,
    OptimizerKind.KFAC: 2,
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def checkpoint_bytes(agent: TD3Agent, buffer: ReplayBuffer) -> bytes:
    parts = [struct.pack("<4sIB", MAGIC, VERSION, _KIND_TAGS[agent.kind])]
    h = agent.hyper
    damping = math.nan if h.damping is None else h.damping
    parts.append(struct.pack("<4d", h.lr_actor, h.lr_critic, float(h.batch_size), damping))
    for net in agent.networks():
        flat = nets.flatten(net)
        parts.append(struct.pack("<Q", flat.size))
        parts.append(flat.astype("<f8").tobytes())
    rows = buffer.rows()
    parts.append(struct.pack("<Q", rows.shape[0]))
    parts.append(rows.astype("<f8").tobytes())
    return b"".join(parts)


def write_checkpoint(path: str | Path, agent: TD3Agent, buffer: ReplayBuffer) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(agent, buffer))
    return path


@dataclass
class CheckpointData:
    kind: OptimizerKind
    hyper: HyperparamSet
    flat_params: list[np.ndarray]  # six entries
    transition_floats: np.ndarray  # flat, row-major
    n_transitions: int


def read_checkpoint(path: str | Path) -> CheckpointData:
    raw = Path(path).read_bytes()
    magic, version, tag = struct.unpack_from("<4sIB", raw, 0)
    if magic != MAGIC:
        raise ValueError(f"not a PBTC checkpoint: magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if tag not in _TAG_KINDS:
        raise ValueError(f"unknown optimizer tag {tag}")
    offset = struct.calcsize("<4sIB")
    lr_actor, lr_critic, batch, damping = struct.unpack_from("<4d", raw, offset)
    offset += struct.calcsize("<4d")
    hyper = HyperparamSet(
        lr_actor, lr_critic, int(batch), None if math.isnan(damping) else damping
    )
    flats = []
    for _ in range(6):
        (count,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        flats.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).copy())
        offset += 8 * count
    (length,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    floats = np.frombuffer(raw, dtype="<f8", offset=offset).copy()
    if length and floats.size % length:
        raise ValueError("transition block does not divide into rows")
    return CheckpointData(_TAG_KINDS[tag], hyper, flats, floats, length)


def apply_checkpoint(data: CheckpointData, agent: TD3Agent, buffer: ReplayBuffer) -> None:
    """Restore networks, hyperparameters and buffer contents in place.

    The agent supplies the architecture; its optimizer kind must match the
    checkpoint's.  Optimizer moments/factors are not stored and start fresh.
    """
    if agent.kind is not data.kind:
        raise ValueError(f"agent kind {agent.kind} != checkpoint kind {data.kind}")
    agent.set_networks(
        [nets.unflatten(net, flat) for net, flat in zip(agent.networks(), data.flat_params)]
    )
    agent.hyper = data.hyper
    agent.reset_optimizer_state()
    if data.n_transitions:
        buffer.load_rows(data.transition_floats.reshape(data.n_transitions, -1))
    else:
        buffer.size = 0
        buffer.cursor = 0


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
