import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgekt import archspec, compressor
from edgekt.compressor import (PruningConfig, average_prunable, count_prunable, filter_zero_fraction,
                               parse_report, reduce_depth, reduce_width, reduced_width)
from edgekt.errors import ConfigError, DataError, FormatError, SpecError
from oracles import (average_prunable_loops, prunable_count_loops, shallow_resnet_params,
                     zero_fraction_loops)


def sparse_acts(rng, shape, zero_rate=None):
    """ReLU-like maps with a per-filter zero rate spread over [0, 1]."""
    c = shape[-3]
    rates = rng.uniform(0, 1, c) if zero_rate is None else np.full(c, zero_rate)
    vals = rng.uniform(0.1, 2.0, shape)
    mask = rng.uniform(0, 1, shape) < rates.reshape((c, 1, 1))
    vals[mask] = 0
    return vals


class StubModel:
    """Stands in for a network: 'images' are indices into stored activations."""

    def __init__(self, acts_by_layer):
        self.acts = acts_by_layer

    def conv_layer_names(self):
        return list(self.acts)

    def forward(self, idx, train=False, capture=False):
        assert not train and capture
        idx = np.asarray(idx).astype(int).ravel()
        return SimpleNamespace(activations={k: v[idx] for k, v in self.acts.items()})


class TestCounting:
    def test_zero_fraction_examples(self):
        assert filter_zero_fraction(np.zeros((4, 4))) == 1.0
        assert filter_zero_fraction(np.ones((4, 4))) == 0.0
        m = np.ones((4, 4))
        m[0, :3] = 0
        assert filter_zero_fraction(m) == 3 / 16

    def test_negative_zero_counts_as_zero(self):
        assert filter_zero_fraction(np.array([[-0.0, 1.0]])) == 0.5

    def test_tiny_values_are_not_zero(self):
        assert filter_zero_fraction(np.array([[1e-30, 0.0]])) == 0.5

    def test_empty_map(self):
        with pytest.raises(DataError):
            filter_zero_fraction(np.zeros((0, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 0.7, 0.9, 1.0]))
    def test_count_matches_loops(self, seed, p):
        acts = sparse_acts(np.random.default_rng(seed), (6, 5, 5))
        for k in range(6):
            assert filter_zero_fraction(acts[k]) == zero_fraction_loops(acts[k])
        assert count_prunable(acts, p) == prunable_count_loops(acts, p)

    def test_threshold_boundary_inclusive(self):
        acts = np.ones((1, 10, 1))
        acts[0, :9, 0] = 0  # exactly 0.9 zeros
        assert count_prunable(acts, 0.9) == 1

    def test_average_matches_loops_with_stub(self):
        rng = np.random.default_rng(7)
        acts = {"stem": sparse_acts(rng, (12, 4, 6, 6)), "l1": sparse_acts(rng, (12, 3, 3, 3))}
        cfg = PruningConfig(threshold=0.6, sample_count=5, calibration_seed=1, batch_size=2)
        report = average_prunable(StubModel(acts), np.arange(12), cfg)
        idx = compressor.calibration_indices(12, cfg)
        for name, a in acts.items():
            expected = average_prunable_loops([a[i] for i in idx], 0.6)
            assert report[name].avgc == pytest.approx(expected, abs=1e-9)
            assert report[name].width == max(1, a.shape[1] - math.floor(expected))

    def test_calibration_needs_enough_images(self):
        with pytest.raises(DataError):
            compressor.calibration_indices(3, PruningConfig(sample_count=4))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PruningConfig(threshold=1.2)
        with pytest.raises(ConfigError):
            PruningConfig(sample_count=0)


class TestReducedWidth:
    @pytest.mark.parametrize("n,avgc,w", [(16, 0.0, 16), (16, 3.99, 13), (16, 4.0, 12),
                                          (8, 8.0, 1), (8, 7.5, 1), (1, 1.0, 1)])
    def test_floor_and_clamp(self, n, avgc, w):
        assert reduced_width(n, avgc) == w


def _teacher_spec():
    return archspec.resnet_spec((8, 12, 16), 3, 5, stem_width=6, input_size=16)


class TestDepth:
    def test_keeps_last_block_and_resolution(self):
        t = _teacher_spec()
        s = reduce_depth(t)
        assert len(s.groups) == len(t.groups)
        assert all(len(g.blocks) == 1 for g in s.groups)
        ti, si = archspec.propagate_shapes(t), archspec.propagate_shapes(s)
        for g in range(3):
            assert si.blocks[(g, 0)] == ti.blocks[(g, 2)]

    def test_idempotent(self):
        s = reduce_depth(_teacher_spec())
        assert reduce_depth(s) == s

    def test_closed_form_count(self):
        s = reduce_depth(_teacher_spec())
        assert archspec.count_params(s) == shallow_resnet_params(6, [(8, 8), (12, 12), (16, 16)], 5)

    def test_plain_network(self):
        t = archspec.plain_spec(((4, 4, 4), (8, 8)), class_count=3, stem_width=4, input_size=8)
        s = reduce_depth(t)
        info = archspec.propagate_shapes(s)
        assert info.blocks[(1, 0)] == (8, 4, 4)

    def test_origins(self):
        o = compressor.shallow_origins(_teacher_spec())
        assert o["group.1.block.0.layer.1"] == "group.1.block.2.layer.1"


def _report_for(spec, avgcs):
    names = ["stem"] + [archspec.layer_name(g, b, k) for g, grp in enumerate(spec.groups)
                        for b, blk in enumerate(grp.blocks) for k in range(len(blk.layers))]
    info = archspec.propagate_shapes(spec)
    filters = {"stem": spec.stem.out_channels, **{n: info.layers[n][0] for n in names[1:]}}
    layers = [compressor.LayerSparsity(n, filters[n], avgcs[n], reduced_width(filters[n], avgcs[n]))
              for n in names]
    return compressor.SparsityReport(0.9, 1, layers)


class TestWidth:
    def test_formula_and_param_oracle(self):
        t = _teacher_spec()
        rng = np.random.default_rng(3)
        names = ["stem"] + [archspec.layer_name(g, b, k) for g in range(3) for b in range(3)
                            for k in range(2)]
        widths = {"stem": 6, **{n: (8, 12, 16)[int(n.split(".")[1])] for n in names[1:]}}
        avgcs = {n: float(rng.uniform(0, widths[n] + 1)) for n in names}
        report = _report_for(t, avgcs)
        s = reduce_width(reduce_depth(t), report, compressor.shallow_origins(t))
        w = {n: max(1, widths[n] - math.floor(avgcs[n])) for n in names}
        assert s.stem.out_channels == w["stem"]
        got = [(s.groups[g].blocks[0].layers[0].out_channels,
                s.groups[g].blocks[0].layers[1].out_channels) for g in range(3)]
        expected = [(w[f"group.{g}.block.2.layer.0"], w[f"group.{g}.block.2.layer.1"]) for g in range(3)]
        assert got == expected
        assert archspec.count_params(s) == shallow_resnet_params(w["stem"], expected, 5)

    def test_missing_layer(self):
        t = _teacher_spec()
        report = compressor.SparsityReport(0.9, 1, [])
        with pytest.raises(SpecError):
            reduce_width(reduce_depth(t), report, compressor.shallow_origins(t))

    def test_filter_mismatch(self):
        t = _teacher_spec()
        avgcs = {}
        report = _report_for(t, {n: 0.0 for n in ["stem"] + [archspec.layer_name(g, b, k) for g in range(3)
                                                             for b in range(3) for k in range(2)]})
        report.layers[0].filters = 99
        with pytest.raises(SpecError, match="99"):
            reduce_width(reduce_depth(t), report, compressor.shallow_origins(t))
        del avgcs


class TestReportText:
    def test_round_trip(self):
        t = archspec.resnet_spec((4,), 1, 2, stem_width=4, input_size=8)
        report = _report_for(t, {"stem": 1.25, "group.0.block.0.layer.0": 0.1,
                                 "group.0.block.0.layer.1": 4.0})
        text = report.to_text()
        assert text.splitlines()[0] == "layer=stem n=4 avgc=1.25 w=3"
        parsed = parse_report(text)
        assert [(l.name, l.filters, l.avgc, l.width) for l in parsed.layers] == \
            [(l.name, l.filters, l.avgc, l.width) for l in report.layers]

    def test_malformed(self):
        with pytest.raises(FormatError, match="line 2"):
            parse_report("layer=stem n=4 avgc=1.0 w=3\nlayer=x n=four avgc=1 w=1\n")


class TestCompressModel:
    def test_threshold_monotone_and_ratio(self):
        spec = archspec.resnet_spec((8, 16), 2, 3, stem_width=8, input_size=16)
        model = archspec.build_network(spec, seed=4)
        images = np.random.default_rng(0).standard_normal((24, 3, 16, 16)).astype(np.float32)
        students = {}
        for p in (0.5, 0.7, 1.0):
            students[p], _ = compressor.compress(model, images, PruningConfig(p, 16, 2, 8))
        counts = {p: archspec.count_params(s) for p, s in students.items()}
        assert counts[0.5] <= counts[0.7] <= counts[1.0]
        depth_only = archspec.count_params(reduce_depth(spec))
        assert counts[1.0] <= depth_only
        assert archspec.compression_ratio(spec, students[1.0]) >= archspec.count_params(spec) / depth_only

    def test_inference_only(self):
        spec = archspec.resnet_spec((4,), 1, 2, stem_width=4, input_size=8)
        model = archspec.build_network(spec, seed=1)
        before = archspec.checkpoint_bytes(model)
        images = np.random.default_rng(0).standard_normal((8, 3, 8, 8)).astype(np.float32)
        compressor.compress(model, images, PruningConfig(0.9, 8))
        assert archspec.checkpoint_bytes(model) == before
