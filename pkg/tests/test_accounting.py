import math

import pytest

from cyclemlp.accounting import OpDesc, count_model, count_op, stage_summary
from cyclemlp.model import param_shapes, variant_config


def test_count_op_examples():
    r = count_op(OpDesc("cycle_fc", 8, 16, (1, 3)), (1, 8, 4, 4))
    assert (r.params, r.macs) == (144, 2048)
    c = count_op(OpDesc("channel_fc", 8, 16), (1, 8, 4, 4))
    assert (c.params, c.macs) == (r.params, r.macs)
    s = count_op(OpDesc("spatial_fc"), (1, 8, 4, 4))
    assert (s.params, s.macs) == (256, 2048)
    for k in ("layer_norm", "gelu", "softmax", "avg_pool"):
        assert count_op(OpDesc(k), (1, 8, 4, 4)).macs == 0
    with pytest.raises(ValueError):
        count_op(OpDesc("conv3d"), (1, 1, 1, 1))
    with pytest.raises(ValueError):
        count_op(OpDesc("channel_fc", 2, 2, (1, 3)), (1, 2, 2, 2))


def test_cycle_vs_spatial_scaling():
    cyc = [count_op(OpDesc("cycle_fc", 8, 8, (1, 7)), (1, 8, h, 8)).macs for h in (4, 8, 16)]
    assert cyc[1] == 2 * cyc[0] and cyc[2] == 4 * cyc[0]
    sp = [count_op(OpDesc("spatial_fc"), (1, 8, h, 8)).macs for h in (4, 8, 16)]
    assert sp[1] == 4 * sp[0] and sp[2] == 16 * sp[0]


def test_patch_embed_and_mlp_counts():
    r = count_op(OpDesc("patch_embed", 3, 64, (7, 7), 4, 3), (1, 3, 224, 224))
    assert r.params == 64 * 3 * 49 + 64
    assert r.macs == 56 * 56 * 64 * 3 * 49
    m = count_op(OpDesc("channel_mlp", 4, expand=2), (2, 4, 3, 3))
    assert m.params == 4 * 8 + 8 + 8 * 4 + 4
    assert m.macs == 2 * 2 * 9 * 4 * 8


@pytest.mark.parametrize("variant", ["b1", "b2", "b3", "b4", "b5", "toy"])
def test_breakdown_matches_parameter_tensors(variant):
    cfg = variant_config(variant)
    report = count_model(cfg)
    shapes = param_shapes(cfg)
    total = 0
    for path, n, _ in report.rows:
        owned = [k for k in shapes if k.startswith(path + ".")]
        assert owned, path
        size = sum(int(math.prod(shapes[k])) for k in owned)
        assert size == n, path
        total += size
    assert total == report.params == sum(int(math.prod(s)) for s in shapes.values())
    assert sum(r[2] for r in report.rows) == report.macs
    assert sum(s[1] for s in stage_summary(cfg, report)) == report.params


def test_b2_resolution_scaling():
    cfg = variant_config("b2")
    a, b = count_model(cfg, (224, 224)), count_model(cfg, (448, 448))
    assert a.params == b.params
    assert b.macs / a.macs == pytest.approx(4.0, rel=0.02)


def test_two_branch_ablation_row():
    # reported as 24.5M / 3.6G for the (1x3, 1x1) variant of B2
    cfg = variant_config("b2", branch_kernels=((1, 3), (1, 1)))
    r = count_model(cfg)
    assert r.params / 1e6 == pytest.approx(24.5, rel=0.03)
    assert r.macs / 1e9 == pytest.approx(3.6, rel=0.10)


def test_tsv_lines():
    r = count_model(variant_config("toy", 2), (32, 32))
    lines = r.tsv().splitlines()
    assert lines[-1] == f"total\t{r.params}\t{r.macs}"
    assert all(len(line.split("\t")) == 3 for line in lines)
