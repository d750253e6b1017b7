import math
import struct

import numpy as np
import pytest

from popforge import nets
from popforge.checkpoint import (
    MAGIC,
    VERSION,
    apply_checkpoint,
    checkpoint_bytes,
    read_checkpoint,
    sha256_file,
    write_checkpoint,
)
from popforge.optim import HyperparamSet, OptimizerKind
from popforge.td3 import ReplayBuffer, make_agent


def build_agent(kind=OptimizerKind.ADAM, damping=None, seed=0):
    rng = np.random.default_rng(seed)
    hyper = HyperparamSet(3e-4, 4e-4, 128, damping)
    return make_agent(2, 1, 1.0, kind, hyper, rng, hidden=(3, 3))


def build_buffer(n=5, seed=1):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(16, 2, 1)
    for _ in range(n):
        buf.push(rng.normal(size=2), rng.normal(size=1), float(rng.normal()), rng.normal(size=2), False)
    return buf


class TestFormat:
    def test_header_layout(self):
        agent = build_agent()
        raw = checkpoint_bytes(agent, build_buffer(0))
        magic, version, tag = struct.unpack_from("<4sIB", raw, 0)
        assert magic == MAGIC == b"PBTC"
        assert version == VERSION
        assert tag == 0  # adam
        lr_a, lr_c, batch, damping = struct.unpack_from("<4d", raw, 9)
        assert (lr_a, lr_c, batch) == (3e-4, 4e-4, 128.0)
        assert math.isnan(damping)

    def test_kind_tags(self):
        for kind, tag in [
            (OptimizerKind.ADAM, 0),
            (OptimizerKind.DIAG_GGN, 1),
            (OptimizerKind.KFAC, 2),
        ]:
            damping = None if kind is OptimizerKind.ADAM else 1.5
            raw = checkpoint_bytes(build_agent(kind, damping), build_buffer(0))
            assert raw[8] == tag

    def test_network_block_sizes(self):
        agent = build_agent()
        raw = checkpoint_bytes(agent, build_buffer(0))
        offset = 9 + 32
        for net in agent.networks():
            (count,) = struct.unpack_from("<Q", raw, offset)
            assert count == net.num_params
            first = struct.unpack_from("<d", raw, offset + 8)[0]
            assert first == nets.flatten(net)[0]
            offset += 8 + 8 * count
        (length,) = struct.unpack_from("<Q", raw, offset)
        assert length == 0
        assert len(raw) == offset + 8

    def test_transition_block(self):
        buf = build_buffer(3)
        raw = checkpoint_bytes(build_agent(), buf)
        row_width = 2 * 2 + 1 + 2  # s, a, r, s', done
        tail = np.frombuffer(raw[-3 * row_width * 8 :], dtype="<f8").reshape(3, row_width)
        np.testing.assert_array_equal(tail, buf.rows())


class TestRoundTrip:
    def test_write_read_apply(self, tmp_path):
        agent = build_agent(OptimizerKind.KFAC, damping=2.0, seed=3)
        buf = build_buffer(7)
        path = write_checkpoint(tmp_path / "m.pbtc", agent, buf)

        data = read_checkpoint(path)
        assert data.kind is OptimizerKind.KFAC
        assert data.hyper.damping == 2.0
        assert data.n_transitions == 7

        fresh = build_agent(OptimizerKind.KFAC, damping=1.0, seed=99)
        fresh_buf = ReplayBuffer(16, 2, 1)
        apply_checkpoint(data, fresh, fresh_buf)
        for a_net, b_net in zip(agent.networks(), fresh.networks()):
            np.testing.assert_array_equal(nets.flatten(a_net), nets.flatten(b_net))
        np.testing.assert_array_equal(fresh_buf.rows(), buf.rows())
        assert fresh.hyper == agent.hyper

    def test_kind_mismatch_rejected(self, tmp_path):
        path = write_checkpoint(tmp_path / "m.pbtc", build_agent(), build_buffer(1))
        data = read_checkpoint(path)
        other = build_agent(OptimizerKind.DIAG_GGN, damping=0.1)
        with pytest.raises(ValueError):
            apply_checkpoint(data, other, ReplayBuffer(16, 2, 1))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pbtc"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_checkpoint(path)


def test_sha256_is_of_file_bytes(tmp_path):
    agent = build_agent()
    buf = build_buffer(2)
    path = write_checkpoint(tmp_path / "m.pbtc", agent, buf)
    import hashlib

    assert sha256_file(path) == hashlib.sha256(path.read_bytes()).hexdigest()


def test_identical_state_identical_bytes():
    a1, a2 = build_agent(seed=5), build_agent(seed=5)
    b1, b2 = build_buffer(4, seed=2), build_buffer(4, seed=2)
    assert checkpoint_bytes(a1, b1) == checkpoint_bytes(a2, b2)
