import pytest
import torch

from triplane_inversion.config import EncoderConfig
from triplane_inversion.encoder import (
    GeometryEncoder,
    PyramidBackbone,
    StageSchedule,
    assemble_wplus,
    delta_wplus,
    encode,
)
from triplane_inversion.errors import InvalidArgument

GROUPS = [[1, 2], [3, 4], [5, 6, 7]]


def random_parts(batch=2, dim=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    w0 = torch.randn(batch, dim, generator=g)
    deltas = [torch.randn(batch, len(rows), dim, generator=g) for rows in GROUPS]
    return w0, deltas, torch.randn(dim, generator=g)


class TestBackbone:
    def test_level_shapes(self):
        bb = PyramidBackbone([8, 8, 16, 16], 64).eval()
        feats = bb(torch.rand(1, 64, 64, 3))
        assert [f.shape[-1] for f in feats] == [4, 8, 16, 32]

    def test_deterministic(self):
        bb = PyramidBackbone([8, 8, 16, 16], 32, window_attention=True, window=4).eval()
        x = torch.rand(2, 32, 32, 3)
        for a, b in zip(bb(x), bb(x)):
            assert torch.equal(a, b)

    def test_wrong_resolution(self):
        with pytest.raises(InvalidArgument):
            PyramidBackbone([8, 8, 16, 16], 64)(torch.rand(1, 32, 32, 3))

    def test_input_gradient_connected(self):
        bb = PyramidBackbone([8, 8, 16, 16], 32)
        x = torch.rand(1, 32, 32, 3, requires_grad=True)
        bb(x).query.sum().backward()
        assert x.grad.abs().max() > 0


class TestAssemble:
    def test_zero_deltas(self):
        w0, deltas, w_avg = random_parts()
        wp = assemble_wplus(w0, [torch.zeros_like(d) for d in deltas], w_avg, GROUPS)
        torch.testing.assert_close(wp, (w_avg + w0)[:, None].expand(-1, 8, -1), rtol=0, atol=0)

    def test_coarse_stage_masks_later_groups(self):
        w0, deltas, w_avg = random_parts()
        wp = assemble_wplus(w0, deltas, w_avg, GROUPS, "coarse")
        base = w_avg + w0
        for r in [0, 3, 4, 5, 6, 7]:
            assert torch.equal(wp[:, r], base)
        torch.testing.assert_close(wp[:, 1:3], base[:, None] + deltas[0])

    def test_fine_stage_full_stack(self):
        w0, deltas, w_avg = random_parts()
        wp = assemble_wplus(w0, deltas, w_avg, GROUPS, "fine")
        full = torch.cat([torch.zeros_like(w0)[:, None]] + deltas, 1)
        torch.testing.assert_close(wp, (w_avg + w0)[:, None] + full)

    def test_partition_checked(self):
        w0, deltas, w_avg = random_parts()
        with pytest.raises(InvalidArgument):
            assemble_wplus(w0, deltas, w_avg, [[1, 2], [2, 4], [5, 6, 7]])

    def test_linear_in_deltas(self):
        w0, d1, w_avg = random_parts(seed=1)
        _, d2, _ = random_parts(seed=2)
        f = lambda d: assemble_wplus(w0, d, w_avg, GROUPS) - assemble_wplus(w0, [torch.zeros_like(x) for x in d], w_avg, GROUPS)
        torch.testing.assert_close(f([a + 2 * b for a, b in zip(d1, d2)]), f(d1) + 2 * f(d2))

    def test_stage_monotonic(self):
        w0, deltas, w_avg = random_parts()
        coarse = assemble_wplus(w0, deltas, w_avg, GROUPS, "coarse")
        mid = assemble_wplus(w0, deltas, w_avg, GROUPS, "mid")
        fine = assemble_wplus(w0, deltas, w_avg, GROUPS, "fine")
        assert torch.equal(coarse[:, :3], mid[:, :3])
        assert torch.equal(mid[:, :5], fine[:, :5])

    def test_delta_wplus(self):
        w0, deltas, w_avg = random_parts()
        wp = assemble_wplus(w0, deltas, w_avg, GROUPS)
        torch.testing.assert_close(delta_wplus(wp), torch.cat(deltas, 1))


class TestSchedule:
    def test_active_stage(self):
        s = StageSchedule((0, 10, 20))
        assert [s.active_stage(i) for i in (0, 9, 10, 19, 20, 100)] == [0, 0, 1, 1, 2, 2]

    def test_nondecreasing(self):
        with pytest.raises(InvalidArgument):
            StageSchedule((0, 20, 10))


class TestEncoder:
    def test_shape_and_determinism(self):
        enc = GeometryEncoder(EncoderConfig(channels=[8, 8, 16, 16]), 32, 8, 12).eval()
        x = torch.rand(3, 32, 32, 3)
        wp = encode(enc, x)
        assert wp.shape == (3, 8, 12)
        assert torch.equal(wp, encode(enc, x))

    def test_w_avg_anchor(self):
        enc = GeometryEncoder(EncoderConfig(channels=[8, 8, 16, 16]), 32, 8, 12).eval()
        x = torch.rand(1, 32, 32, 3)
        a = enc(x)
        enc.w_avg.fill_(1.0)
        torch.testing.assert_close(enc(x), a + 1.0)

    def test_bad_groups(self):
        with pytest.raises(InvalidArgument):
            GeometryEncoder(EncoderConfig(groups=[[1, 2], [3, 4], [5, 6]]), 32, 8, 12)
