"""Network blocks: sinusoidal position encoding closed forms, window
bookkeeping as an exact inverse pair, attention against a hand-rolled
numpy oracle, the four-direction scan plumbing, and residual identities."""

import math

import numpy as np
import pytest

from hybridevs.blocks import (
    AttnScanBlock,
    ConvScanBlock,
    CrossAttentionBlock,
    LayerNorm,
    MultiDirScan,
    ResidualConvBlock,
    ResidualScanBlock,
    SpatialGate,
    WindowCrossAttention,
    fourier_features,
    relative_index,
    seam_mask,
    window_merge,
    window_partition,
)
from hybridevs.errors import ShapeError
from hybridevs.tensor import Tensor

DT = np.float64


def _t(shape, seed, scale=1.0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape) * scale, dtype=DT)


def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class TestFourierFeatures:
    def test_zero_position(self):
        pos = Tensor(np.zeros((2, 2, 3)), dtype=DT)
        out = fourier_features(pos, 2).data
        assert out.shape == (2, 2, 12)
        assert np.array_equal(out[..., 0:3], np.zeros((2, 2, 3)))   # sin level 0
        assert np.array_equal(out[..., 3:6], np.ones((2, 2, 3)))    # cos level 0
        assert np.array_equal(out[..., 6:9], np.zeros((2, 2, 3)))   # sin level 1
        assert np.array_equal(out[..., 9:12], np.ones((2, 2, 3)))   # cos level 1

    def test_quarter_position(self):
        pos = Tensor(np.full((1, 1, 1), 0.25), dtype=DT)
        out = fourier_features(pos, 2).data[0, 0]
        # level 0: sin/cos(pi/2); level 1: sin/cos(pi)
        assert out == pytest.approx([1.0, 0.0, 0.0, -1.0], abs=1e-12)

    def test_channel_count(self):
        pos = Tensor(np.zeros((4, 4, 4)), dtype=DT)
        assert fourier_features(pos, 3).shape == (4, 4, 24)

    def test_rejects_bad_freqs(self):
        with pytest.raises(ValueError):
            fourier_features(Tensor(np.zeros((2, 2, 1))), 0)


class TestWindows:
    @pytest.mark.parametrize("shift", [0, 2])
    def test_partition_merge_inverse(self, shift):
        x = _t((8, 12, 5), seed=0)
        wins = window_partition(x, 4, shift)
        assert wins.shape == (2 * 3, 16, 5)
        back = window_merge(wins, 8, 12, 4, shift)
        assert np.array_equal(back.data, x.data)

    def test_first_window_content(self):
        x = _t((8, 8, 2), seed=1)
        wins = window_partition(x, 4).data
        assert np.array_equal(wins[0], x.data[:4, :4].reshape(16, 2))

    def test_rejects_unaligned(self):
        with pytest.raises(ShapeError):
            window_partition(_t((6, 8, 1), seed=2), 4)

    def test_rejects_bad_shift(self):
        with pytest.raises(ValueError):
            window_partition(_t((8, 8, 1), seed=3), 4, shift=1)

    def test_relative_index_table(self):
        idx = relative_index(2)
        assert idx.shape == (16,)
        assert idx.min() >= 0 and idx.max() < 9
        # zero offset (token attending to itself) maps to the table center
        assert idx[0] == idx[5] == idx[10] == idx[15] == 4

    def test_seam_mask_blocks_wrapped_pairs(self):
        mask = seam_mask(8, 8, 4, 2)
        assert mask.shape == (4, 16, 16)
        assert np.array_equal(np.unique(mask[0]), [0.0])  # interior window: no seam
        assert (mask < 0).any()  # boundary windows do get masked pairs
        # masked relation is symmetric
        assert np.array_equal(mask[3], mask[3].T)


class TestAttentionOracle:
    def test_matches_numpy_loops(self):
        rng = np.random.default_rng(4)
        d, heads, m = 8, 2, 2
        attn = WindowCrossAttention(rng, d, heads, m, DT)
        attn.brel.data[...] = rng.standard_normal(attn.brel.shape)
        xw = _t((3, 4, 8), seed=5)
        yw = _t((3, 4, 8), seed=6)
        out = attn(xw, yw).data

        dh = d // heads
        bias = attn.brel.data[relative_index(m)].reshape(4, 4, heads)
        expect = np.zeros((3, 4, d))
        for n in range(3):
            q = yw.data[n] @ attn.pq.data
            k = xw.data[n] @ attn.pk.data
            v = xw.data[n] @ attn.pv.data
            for hd in range(heads):
                sl = slice(hd * dh, (hd + 1) * dh)
                logits = q[:, sl] @ k[:, sl].T / math.sqrt(dh) + bias[:, :, hd]
                expect[n, :, sl] = _softmax(logits) @ v[:, sl]
        expect = expect @ attn.po.data + attn.bo.data
        assert np.abs(out - expect).max() < 1e-10

    def test_mask_excludes_pairs(self):
        rng = np.random.default_rng(7)
        attn = WindowCrossAttention(rng, 4, 1, 2, DT)
        xw = _t((1, 4, 4), seed=8)
        # forbid attending across the 2-token halves
        mask = np.full((1, 4, 4), -1e9)
        mask[0, :2, :2] = 0.0
        mask[0, 2:, 2:] = 0.0
        out = attn(xw, xw, mask).data

        q = xw.data[0] @ attn.pq.data
        k = xw.data[0] @ attn.pk.data
        v = xw.data[0] @ attn.pv.data
        bias = attn.brel.data[relative_index(2)].reshape(4, 4)
        logits = q @ k.T / 2.0 + bias + mask[0]
        expect = _softmax(logits) @ v @ attn.po.data + attn.bo.data
        assert np.abs(out[0] - expect).max() < 1e-10
        # forbidden pairs receive (numerically) zero attention weight
        w = _softmax(logits)
        assert w[:2, 2:].max() < 1e-30 and w[2:, :2].max() < 1e-30

    def test_rejects_head_mismatch(self):
        with pytest.raises(ShapeError):
            WindowCrossAttention(np.random.default_rng(0), 6, 4, 2, DT)


class TestScanBlock:
    def test_pure_skip_returns_four_f(self):
        # with the input projections zeroed, every direction reduces to
        # the d-skip path (d init = 1), so the four sums give exactly 4F
        rng = np.random.default_rng(9)
        scan = MultiDirScan(rng, 3, 4, DT)
        scan.wx.data[...] = 0.0
        f = _t((4, 6, 3), seed=10)
        out = scan(f).data
        assert np.abs(out - 4.0 * f.data).max() < 1e-12

    def test_matches_per_direction_oracle(self):
        rng = np.random.default_rng(11)
        c, state = 3, 4
        scan = MultiDirScan(rng, c, state, DT)
        f = _t((3, 5, c), seed=12, scale=0.5)
        out = scan(f).data

        def one_direction(seq, k):
            L = seq.shape[0]
            proj = seq @ scan.wx.data[k]
            r = scan.dt_rank
            dtr, b, cm = proj[:, :r], proj[:, r:r + state], proj[:, r + state:]
            delta = np.logaddexp(0.0, dtr @ scan.wdt.data[k] + scan.bdt.data[k, 0]) + 1e-8
            a = -np.exp(scan.alog.data[k])
            y = np.zeros_like(seq)
            for ch in range(c):
                h = np.zeros(state)
                for t in range(L):
                    h = np.exp(delta[t, ch] * a[ch]) * h + delta[t, ch] * b[t] * seq[t, ch]
                    y[t, ch] = cm[t] @ h + scan.dskip.data[k, ch] * seq[t, ch]
            return y

        h, w = 3, 5
        row = f.data.reshape(h * w, c)
        col = f.data.transpose(1, 0, 2).reshape(h * w, c)
        expect = one_direction(row, 0).reshape(h, w, c)
        expect += one_direction(row[::-1], 1)[::-1].reshape(h, w, c)
        expect += one_direction(col, 2).reshape(w, h, c).transpose(1, 0, 2)
        expect += one_direction(col[::-1], 3)[::-1].reshape(w, h, c).transpose(1, 0, 2)
        assert np.abs(out - expect).max() < 1e-9


class TestResidualIdentities:
    def test_conv_block_identity_when_zeroed(self):
        rng = np.random.default_rng(13)
        blk = ResidualConvBlock(rng, 4, DT)
        blk.conv2.w.data[...] = 0.0
        blk.conv2.b.data[...] = 0.0
        f = _t((6, 6, 4), seed=14)
        assert np.array_equal(blk(f).data, f.data)

    def test_scan_block_identity_when_zeroed(self):
        rng = np.random.default_rng(15)
        blk = ResidualScanBlock(rng, 4, 2, 3, DT)
        blk.out_proj.w.data[...] = 0.0
        blk.out_proj.b.data[...] = 0.0
        f = _t((4, 4, 4), seed=16)
        assert np.array_equal(blk(f).data, f.data)

    def test_split_block_identity_when_zeroed(self):
        rng = np.random.default_rng(17)
        pos = _t((4, 4, 6), seed=18)
        blk = AttnScanBlock(rng, 4, 6, 2, 2, 2, 2, 3, DT)
        blk.exit.w.data[...] = 0.0
        blk.exit.b.data[...] = 0.0
        f = _t((4, 4, 4), seed=19)
        assert np.array_equal(blk(f, pos).data, f.data)

    def test_gate_formula(self):
        rng = np.random.default_rng(20)
        gate = SpatialGate(rng, 3, 5, DT)
        fi = _t((4, 4, 3), seed=21)
        fp = _t((4, 4, 5), seed=22)
        out = gate(fi, fp).data

        def ln(x, mod):
            mu = x.mean(axis=-1, keepdims=True)
            var = x.var(axis=-1, keepdims=True)
            return (x - mu) / np.sqrt(var + 1e-6) * mod.gain.data + mod.bias.data

        img = ln(fi.data, gate.ln_img) @ gate.conv_img.w.data + gate.conv_img.b.data
        g = ln(fp.data, gate.ln_pos) @ gate.conv_pos.w.data + gate.conv_pos.b.data
        expect = img * np.maximum(g, 0.0) + fi.data
        assert np.abs(out - expect).max() < 1e-10

    def test_gate_rejects_extent_mismatch(self):
        rng = np.random.default_rng(23)
        gate = SpatialGate(rng, 3, 5, DT)
        with pytest.raises(ShapeError):
            gate(_t((4, 4, 3), seed=24), _t((8, 8, 5), seed=25))


class TestBlockShapes:
    def test_cross_attention_block_shapes(self):
        rng = np.random.default_rng(26)
        blk = CrossAttentionBlock(rng, 8, 2, 4, 2, DT)
        fi = _t((8, 8, 8), seed=27)
        fp = _t((8, 8, 8), seed=28)
        assert blk(fi, fp).shape == (8, 8, 8)
        assert blk(fi, fp, shift=2).shape == (8, 8, 8)

    def test_self_attention_fallback(self):
        rng = np.random.default_rng(29)
        blk = CrossAttentionBlock(rng, 8, 2, 4, 2, DT, cross=False)
        fi = _t((8, 8, 8), seed=30)
        assert blk(fi, None).shape == (8, 8, 8)

    def test_cross_requires_position(self):
        rng = np.random.default_rng(31)
        blk = CrossAttentionBlock(rng, 8, 2, 4, 2, DT)
        with pytest.raises(ShapeError):
            blk(_t((8, 8, 8), seed=32), None)

    def test_decoder_block_shapes(self):
        rng = np.random.default_rng(33)
        blk = ConvScanBlock(rng, 6, 2, 3, DT)
        assert blk(_t((4, 8, 6), seed=34)).shape == (4, 8, 6)

    def test_odd_channels_rejected(self):
        rng = np.random.default_rng(35)
        with pytest.raises(ShapeError):
            AttnScanBlock(rng, 5, 4, 1, 2, 2, 2, 3, DT)

    def test_layer_norm_normalizes(self):
        ln = LayerNorm(6, DT)
        x = _t((3, 3, 6), seed=36, scale=4.0)
        out = ln(x).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-9
