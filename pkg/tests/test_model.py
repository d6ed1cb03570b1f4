#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import os
import shutil
import struct
import tempfile

import numpy as np
import pytest
import torch

from core.config import VARIANTS, ModelConfig
from core.data.dataset import WindowBatch
from core.errors import CheckpointError, ShapeAuditError, ShapeError, StructureError
from core.model.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from core.model.layers import DTYPE
from core.model.network import (
    audit_shapes,
    forward,
    init_model,
    parameter_inventory,
    structure_tensors,
)
from core.region.features import build_structure

from tests import oracles as ref

SMALL = ModelConfig(lookback=12, clusters=2, encoder_blocks=2, d_model=8, dropout=0.0)


def _batch(n_samples, n_areas, lookback=12, seed=0, horizons=4):
    rng = np.random.default_rng(seed)
    return WindowBatch(
        rng.random((n_samples, n_areas, lookback, 3)),
        rng.random((n_samples, n_areas, horizons)),
        (3, 6, 9, 12)[:horizons],
    )


def _structure(n_areas=5):
    labels = np.arange(n_areas) % 2
    pairs = [(k, k + 1) for k in range(n_areas - 1)]
    return build_structure(labels, pairs)


def _same_state(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


class TestInitialization:
    """Test cases for deterministic parameter initialization"""

    def test_same_seed_same_parameters(self):
        assert _same_state(init_model(SMALL, seed=3), init_model(SMALL, seed=3))

    def test_different_seeds_differ(self):
        assert not _same_state(init_model(SMALL, seed=3), init_model(SMALL, seed=4))

    def test_returned_in_eval_mode(self):
        assert init_model(SMALL).mode == "eval"

    def test_shape_audit_passes(self):
        model = init_model(SMALL)
        shapes = {name: tuple(p.shape) for name, p in model.named_parameters()}
        assert audit_shapes(SMALL, shapes) == []
        assert shapes["encoder.0.attention.query.fc1.weight"] == (8, 8)

    def test_shape_audit_reports_mismatch(self):
        shapes = parameter_inventory(SMALL)
        wider = SMALL.model_copy(update={"d_model": 16})
        mismatches = audit_shapes(wider, shapes)
        assert mismatches
        assert any("lift.weight" in m for m in mismatches)

    @pytest.mark.parametrize("variant,absent", [
        ("no_module_a", "hypergraph"),
        ("no_module_b", "graph"),
        ("no_module_c", "encoder"),
        ("no_var_sel", "variable_selection"),
    ])
    def test_ablated_submodules(self, variant, absent):
        model = init_model(ModelConfig(lookback=12, d_model=4, variant=variant))
        assert getattr(model, absent) is None

    @pytest.mark.parametrize("variant,n_features", [("full", 3), ("no_price", 2), ("no_temperature", 2)])
    def test_selection_width(self, variant, n_features):
        model = init_model(ModelConfig(lookback=12, d_model=4, variant=variant))
        assert model.variable_selection.n_features == n_features


class TestForward:
    """Test cases for the network forward pass"""

    @classmethod
    def setup_class(cls):
        cls.structure = _structure(5)
        cls.batch = _batch(2, 5)

    def test_output_shape(self):
        out = forward(init_model(SMALL), self.batch, self.structure)
        assert out.shape == (2, 5, 4)
        assert bool(torch.isfinite(out).all())

    def test_eval_calls_are_identical(self):
        model = init_model(SMALL)
        assert torch.equal(forward(model, self.batch, self.structure), forward(model, self.batch, self.structure))

    def test_train_mode_samples_noise(self):
        model = init_model(SMALL).train()
        first = forward(model, self.batch, self.structure, seed=1)
        again = forward(model, self.batch, self.structure, seed=1)
        other = forward(model, self.batch, self.structure, seed=2)
        assert torch.equal(first, again)
        assert not torch.equal(first, other)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_every_variant_runs(self, variant):
        config = SMALL.model_copy(update={"variant": variant})
        out = forward(init_model(config), self.batch, self.structure)
        assert out.shape == (2, 5, 4)
        assert bool(torch.isfinite(out).all())

    @pytest.mark.parametrize("variant,channel", [("no_price", 1), ("no_temperature", 2)])
    def test_dropped_covariate_is_ignored(self, variant, channel):
        model = init_model(SMALL.model_copy(update={"variant": variant}))
        inputs = np.array(self.batch.inputs)
        inputs[..., channel] += 3.0
        changed = WindowBatch(inputs, self.batch.targets, self.batch.horizon_offsets)
        assert torch.equal(forward(model, self.batch, self.structure), forward(model, changed, self.structure))

    def test_anchor_is_opt_in(self):
        assert ModelConfig().anchor_last_value is False
        assert SMALL.anchor_last_value is False

    def test_anchor_adds_last_value(self):
        plain = init_model(SMALL, seed=1)
        anchored = init_model(SMALL.model_copy(update={"anchor_last_value": True}), seed=1)
        diff = forward(anchored, self.batch, self.structure) - forward(plain, self.batch, self.structure)
        expected = torch.as_tensor(self.batch.inputs[..., -1, 0:1]).expand_as(diff)
        torch.testing.assert_close(diff, expected, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("anchor", [False, True])
    def test_composition_oracle(self, anchor):
        config = ModelConfig(lookback=2, clusters=2, encoder_blocks=1, d_model=2, dropout=0.0,
                             anchor_last_value=anchor)
        model = init_model(config)
        gen = torch.Generator().manual_seed(0)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(0.3 * torch.randn(p.shape, generator=gen, dtype=DTYPE))
        structure = build_structure([0, 0, 1], [(0, 1), (1, 2)])
        batch = _batch(2, 3, lookback=2, seed=1)
        out = ref.as_numpy(forward(model, batch, structure))
        for s in range(2):
            expected = ref.network(model, batch.inputs[s], structure.incidence, structure.adjacency)
            np.testing.assert_allclose(out[s], expected, atol=1e-10)

    def test_permutation_consistency(self):
        model = init_model(SMALL, seed=2)
        order = [3, 0, 4, 1, 2]
        permuted = WindowBatch(self.batch.inputs[:, order], self.batch.targets[:, order], self.batch.horizon_offsets)
        out = forward(model, self.batch, self.structure)
        out_permuted = forward(model, permuted, self.structure.permuted(order))
        torch.testing.assert_close(out_permuted, out[:, order], atol=1e-12, rtol=0)

    def test_spatial_locality(self):
        # area 0 is alone in its hyperedge and has no neighbors
        structure = build_structure([0, 1, 1], [(1, 2)])
        model = init_model(SMALL.model_copy(update={"clusters": 2}), seed=5)
        batch = _batch(2, 3, seed=5)
        inputs = np.array(batch.inputs)
        inputs[:, 2, :, 0] = 1.0 - inputs[:, 2, :, 0]
        perturbed = WindowBatch(inputs, batch.targets, batch.horizon_offsets)
        before = forward(model, batch, structure)
        after = forward(model, perturbed, structure)
        assert torch.equal(before[:, 0], after[:, 0])
        assert not torch.equal(before[:, 1], after[:, 1])

    def test_finite_over_many_seeds(self):
        config = ModelConfig(lookback=12, clusters=2, encoder_blocks=1, d_model=4)
        model = init_model(config, seed=0).train()
        incidence, adjacency = structure_tensors(_structure(4))
        with torch.no_grad():
            for seed in range(1000):
                gen = torch.Generator().manual_seed(seed)
                inputs = torch.rand(2, 4, 12, 3, generator=gen, dtype=DTYPE)
                out = model(inputs, incidence, adjacency, "sampled", gen)
                assert bool(torch.isfinite(out).all()), f"non-finite output for seed {seed}"

    def test_wrong_lookback(self):
        with pytest.raises(ShapeError):
            forward(init_model(SMALL), _batch(1, 5, lookback=6), self.structure)

    def test_structure_mismatch(self):
        with pytest.raises(StructureError):
            forward(init_model(SMALL), _batch(1, 4), self.structure)


class TestCheckpoint:
    """Test cases for checkpoint files"""

    @classmethod
    def setup_class(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.structure = _structure(5)
        cls.batch = _batch(3, 5)
        cls.model = init_model(SMALL, seed=11)
        cls.path = save_checkpoint(cls.model, os.path.join(cls.tmp, "model.ckpt"), epoch=4, history={"x": [1.0]})

    @classmethod
    def teardown_class(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def _write(self, name, data):
        path = os.path.join(self.tmp, name)
        with open(path, "wb") as handle:
            handle.write(data)
        return path

    def test_round_trip_predictions(self):
        restored = load_checkpoint(self.path)
        assert restored.config == SMALL
        assert torch.equal(forward(self.model, self.batch, self.structure),
                           forward(restored, self.batch, self.structure))

    def test_saving_twice_is_byte_identical(self):
        again = save_checkpoint(self.model, os.path.join(self.tmp, "again.ckpt"), epoch=4, history={"x": [1.0]})
        assert again.read_bytes() == self.path.read_bytes()

    def test_header_contents(self):
        checkpoint = read_checkpoint(self.path)
        assert checkpoint.epoch == 4
        assert checkpoint.extra["history"] == {"x": [1.0]}
        assert checkpoint.header["feature_order"] == ["demand", "price", "temperature"]
        assert checkpoint.optimizer_state is None

    def test_truncated_file(self):
        data = self.path.read_bytes()
        for cut in (4, len(MAGIC) + 20, len(data) - 8):
            with pytest.raises(CheckpointError):
                load_checkpoint(self._write(f"cut_{cut}.ckpt", data[:cut]))

    def test_corrupted_payload(self):
        data = bytearray(self.path.read_bytes())
        data[-3] ^= 0xFF
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(self._write("flipped.ckpt", bytes(data)))
        assert "checksum" in str(excinfo.value)

    def _rewrite_header(self, name, edit):
        data = self.path.read_bytes()
        offset = len(MAGIC) + 8
        (length,) = struct.unpack_from("<Q", data, len(MAGIC))
        header = json.loads(data[offset:offset + length])
        edit(header)
        encoded = json.dumps(header).encode("utf-8")
        return self._write(name, MAGIC + struct.pack("<Q", len(encoded)) + encoded + data[offset + length:])

    def test_version_mismatch(self):
        path = self._rewrite_header("future.ckpt", lambda header: header.update(format_version=99))
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert "version 99" in str(excinfo.value)

    @pytest.mark.parametrize("key", ["tensors", "payload_sha256", "model_config"])
    def test_missing_header_key(self, key):
        path = self._rewrite_header(f"no_{key}.ckpt", lambda header: header.pop(key))
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert excinfo.value.exit_code == 2

    def test_tensor_entry_without_shape(self):
        path = self._rewrite_header("no_shape.ckpt", lambda header: header["tensors"][0].pop("shape"))
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert "tensor table" in str(excinfo.value)

    def test_wider_config_fails_audit(self):
        narrow = save_checkpoint(init_model(SMALL), os.path.join(self.tmp, "narrow.ckpt"))
        with pytest.raises(ShapeAuditError):
            load_checkpoint(narrow, SMALL.model_copy(update={"d_model": 16}))

    def test_optimizer_state_round_trip(self):
        model = init_model(SMALL, seed=1).train()
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        loss = forward(model, self.batch, self.structure, seed=0).pow(2).mean()
        loss.backward()
        optimizer.step()
        path = save_checkpoint(model, os.path.join(self.tmp, "resume.ckpt"), optimizer.state_dict())

        checkpoint = read_checkpoint(path)
        fresh = torch.optim.Adam(checkpoint.model.parameters(), lr=1e-3)
        fresh.load_state_dict(checkpoint.optimizer_state)
        original = optimizer.state_dict()
        restored = fresh.state_dict()
        for index, slot in original["state"].items():
            for key, value in slot.items():
                assert torch.equal(torch.as_tensor(value), torch.as_tensor(restored["state"][index][key]))
        assert restored["param_groups"][0]["betas"] == (0.9, 0.999)
