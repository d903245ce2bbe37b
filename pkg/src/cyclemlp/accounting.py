"""Closed-form parameter and multiply-accumulate (MAC) counts.

One MAC is one multiply-accumulate.  Normalization, activations, softmax,
pooling and the elementwise branch mixing count zero MACs.  The fusion MLP of
each block runs on pooled features, so it is counted once per image rather
than once per token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ModelConfig, fusion_hidden, stage_dims
from .ops import check_kernel, conv_out_size


@dataclass(frozen=True)
class OpDesc:
    """Operator descriptor for ``count_op``.

    ``kind`` is one of ``cycle_fc``, ``channel_fc``, ``spatial_fc``,
    ``patch_embed``, ``channel_mlp``, ``layer_norm``, ``gelu``, ``softmax``,
    ``avg_pool``.
    """

    kind: str
    c_in: int = 0
    c_out: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    expand: int = 1


@dataclass
class CostReport:
    params: int = 0
    macs: int = 0
    rows: list[tuple[str, int, int]] = field(default_factory=list)

    def add(self, path: str, params: int, macs: int) -> None:
        self.rows.append((path, params, macs))
        self.params += params
        self.macs += macs

    def tsv(self) -> str:
        lines = [f"{p}\t{n}\t{m}" for p, n, m in self.rows]
        lines.append(f"total\t{self.params}\t{self.macs}")
        return "\n".join(lines)

    def text(self) -> str:
        width = max([len(p) for p, _, _ in self.rows] + [5])
        lines = [f"{'module':<{width}}  {'params':>12}  {'MACs':>15}"]
        lines += [f"{p:<{width}}  {n:>12,}  {m:>15,}" for p, n, m in self.rows]
        lines.append(f"{'total':<{width}}  {self.params:>12,}  {self.macs:>15,}")
        return "\n".join(lines)


def _dims(dims):
    if len(dims) == 2:
        return (1, 1, *dims)
    if len(dims) == 3:
        return (1, *dims)
    return tuple(dims)


def count_op(desc: OpDesc, dims) -> CostReport:
    """Counts for one operator applied to an input of ``dims`` (N, C, H, W)."""
    N, C, H, W = _dims(dims)
    k = desc.kind
    r = CostReport()
    if k in ("cycle_fc", "channel_fc"):
        if k == "channel_fc" and tuple(desc.kernel) != (1, 1):
            raise ValueError("channel_fc has a 1x1 kernel")
        check_kernel(desc.kernel)
        r.add(k, desc.c_in * desc.c_out + desc.c_out, N * H * W * desc.c_in * desc.c_out)
    elif k == "spatial_fc":
        hw = H * W
        r.add(k, hw * hw, N * C * hw * hw)
    elif k == "patch_embed":
        kk = desc.kernel[0]
        Ho = conv_out_size(H, kk, desc.stride, desc.padding)
        Wo = conv_out_size(W, kk, desc.stride, desc.padding)
        per_out = desc.c_in * kk * kk
        r.add(k, desc.c_out * per_out + desc.c_out, N * Ho * Wo * desc.c_out * per_out)
    elif k == "channel_mlp":
        hidden = desc.expand * desc.c_in
        r.add(k, 2 * desc.c_in * hidden + hidden + desc.c_in, 2 * N * H * W * desc.c_in * hidden)
    elif k == "layer_norm":
        r.add(k, 2 * C, 0)
    elif k in ("gelu", "softmax", "avg_pool"):
        r.add(k, 0, 0)
    else:
        raise ValueError(f"unknown operator descriptor {k!r}")
    return r


def count_model(cfg: ModelConfig, dims=(224, 224)) -> CostReport:
    """Per-module breakdown for the whole model; ``dims`` is (H, W) or (N, 3, H, W).

    Row paths match parameter-name prefixes, so every parameter tensor lands
    in exactly one row.
    """
    N, _, H, W = _dims(dims)
    r = CostReport()
    nb = len(cfg.branch_kernels)
    c_prev = 3
    h, w = H, W
    for s, (st, (ho, wo)) in enumerate(zip(cfg.stages, stage_dims(cfg, H, W)), start=1):
        kk, stride, pad = cfg.embed_geometry(s - 1)
        C = st.channels
        e = count_op(OpDesc("patch_embed", c_prev, C, (kk, kk), stride, pad), (N, c_prev, h, w))
        r.add(f"stage{s}.embed", e.params, e.macs)
        tokens = N * ho * wo
        hid = fusion_hidden(C)
        E = st.expand * C
        for b in range(st.depth):
            p = f"stage{s}.block{b}"
            r.add(f"{p}.norm1", 2 * C, 0)
            for i in range(nb):
                r.add(f"{p}.branch{i}", C * C + C, tokens * C * C)
            r.add(f"{p}.fuse.fc1", C * hid + hid, N * C * hid)
            r.add(f"{p}.fuse.fc2", hid * nb * C + nb * C, N * hid * nb * C)
            r.add(f"{p}.proj", C * C + C, tokens * C * C)
            r.add(f"{p}.norm2", 2 * C, 0)
            r.add(f"{p}.mlp.fc1", C * E + E, tokens * C * E)
            r.add(f"{p}.mlp.fc2", E * C + C, tokens * E * C)
        c_prev, h, w = C, ho, wo
    r.add("norm", 2 * c_prev, 0)
    r.add("head", c_prev * cfg.num_classes + cfg.num_classes, N * c_prev * cfg.num_classes)
    return r


def stage_summary(cfg: ModelConfig, report: CostReport) -> list[tuple[str, int, int]]:
    """Rows aggregated to ``stage1`` .. ``stage4`` plus ``head`` (final norm + classifier)."""
    agg: dict[str, list[int]] = {}
    for path, n, m in report.rows:
        key = path.split(".", 1)[0] if path.startswith("stage") else "head"
        acc = agg.setdefault(key, [0, 0])
        acc[0] += n
        acc[1] += m
    return [(k, v[0], v[1]) for k, v in agg.items()]
