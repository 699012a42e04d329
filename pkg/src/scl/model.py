"""The scattering compositional model.

A shared convolutional object network maps each panel to a feature vector;
a scattering transformation (split into groups, apply one shared network to
every group, merge) extracts per-head attribute features; a second scattering
over per-position panel sequences extracts relations; a small MLP scores each
candidate-completed matrix and a softmax over the eight scores gives the
prediction. Parameter sharing inside the scattering steps can be switched
off per stage for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .autodiff import Parameter, Tensor, ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint


def he_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
               dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults give the 80-wide pipeline:

    panel -> object features (80) -> attribute scatter (10 heads of 8)
    -> relation scatter (80 scalar groups, 5 outputs each -> 400) -> score.
    """

    object_dim: int = 80
    object_heads: int = 10
    attr_out_per_group: int = 8
    attr_hidden: int = 128
    rel_hidden: tuple[int, int] = (64, 32)
    rel_out: int = 5
    out_hidden: int = 128
    share_attr: bool = True
    share_rel: bool = True
    panel_px: int = 32
    conv_channels: tuple[int, ...] = (16, 16, 32, 32)

    def __post_init__(self) -> None:
        if self.object_dim % self.object_heads != 0:
            raise ValueError(f"object_heads={self.object_heads} does not divide "
                             f"object_dim={self.object_dim}")
        if self.panel_px % (2 ** len(self.conv_channels)) != 0:
            raise ValueError(f"panel_px={self.panel_px} must be divisible by "
                             f"{2 ** len(self.conv_channels)}")

    @property
    def attr_width(self) -> int:
        """Width of the merged attribute-scatter output."""
        return self.object_heads * self.attr_out_per_group

    @property
    def rel_width(self) -> int:
        return self.attr_width * self.rel_out

    def to_header(self) -> dict[str, str]:
        return {
            "object_dim": str(self.object_dim),
            "object_heads": str(self.object_heads),
            "attr_out_per_group": str(self.attr_out_per_group),
            "attr_hidden": str(self.attr_hidden),
            "rel_hidden": ",".join(str(v) for v in self.rel_hidden),
            "rel_out": str(self.rel_out),
            "out_hidden": str(self.out_hidden),
            "share_attr": "1" if self.share_attr else "0",
            "share_rel": "1" if self.share_rel else "0",
            "panel_px": str(self.panel_px),
            "conv_channels": ",".join(str(v) for v in self.conv_channels),
        }

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ModelConfig":
        return cls(
            object_dim=int(header["object_dim"]),
            object_heads=int(header["object_heads"]),
            attr_out_per_group=int(header["attr_out_per_group"]),
            attr_hidden=int(header["attr_hidden"]),
            rel_hidden=tuple(int(v) for v in header["rel_hidden"].split(",")),
            rel_out=int(header["rel_out"]),
            out_hidden=int(header["out_hidden"]),
            share_attr=header["share_attr"] == "1",
            share_rel=header["share_rel"] == "1",
            panel_px=int(header["panel_px"]),
            conv_channels=tuple(int(v) for v in header["conv_channels"].split(",")),
        )


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int, rng, dtype=np.float32):
        self.weight = Parameter(f"{name}.weight",
                                Tensor(he_uniform((d_in, d_out), d_in, rng, dtype)))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(d_out, dtype=dtype)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight.tensor, self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class GroupedLinear:
    """One independent affine map per group, stacked as [G, in, out]."""

    def __init__(self, name: str, groups: int, d_in: int, d_out: int, rng,
                 dtype=np.float32):
        w = np.stack([he_uniform((d_in, d_out), d_in, rng, dtype)
                      for _ in range(groups)])
        self.weight = Parameter(f"{name}.weight", Tensor(w))
        self.bias = Parameter(f"{name}.bias",
                              Tensor(np.zeros((groups, d_out), dtype=dtype)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.grouped_linear(x, self.weight.tensor, self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, name: str, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", Tensor(np.ones(dim, dtype=dtype)))
        self.beta = Parameter(f"{name}.beta", Tensor(np.zeros(dim, dtype=dtype)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma.tensor, self.beta.tensor, self.eps)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class FRBlock:
    """Feedforward residual block: x + lin2(layer_norm(relu(lin1(x))))."""

    def __init__(self, name: str, dim: int, rng, dtype=np.float32):
        self.lin1 = Linear(f"{name}.lin1", dim, dim, rng, dtype)
        self.ln = LayerNorm(f"{name}.ln", dim, dtype)
        self.lin2 = Linear(f"{name}.lin2", dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.lin2(self.ln(ops.relu(self.lin1(x)))))

    def parameters(self) -> list[Parameter]:
        return self.lin1.parameters() + self.ln.parameters() + self.lin2.parameters()


class MLP:
    """Linear stack with relu between layers and a linear output."""

    def __init__(self, name: str, dims: tuple[int, ...], rng, dtype=np.float32):
        self.layers = [Linear(f"{name}.fc{i + 1}", dims[i], dims[i + 1], rng, dtype)
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


class GroupedMLP:
    """Per-group MLP stack of identical architecture (non-shared scatter)."""

    def __init__(self, name: str, groups: int, dims: tuple[int, ...], rng,
                 dtype=np.float32):
        self.layers = [GroupedLinear(f"{name}.fc{i + 1}", groups, dims[i],
                                     dims[i + 1], rng, dtype)
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


class Conv2dLayer:
    def __init__(self, name: str, c_in: int, c_out: int, rng, stride: int = 2,
                 dtype=np.float32):
        self.stride = stride
        self.weight = Parameter(f"{name}.weight",
                                Tensor(he_uniform((c_out, c_in, 3, 3), c_in * 9, rng, dtype)))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(c_out, dtype=dtype)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def scatter(x: Tensor, m: int, net: Callable[[Tensor], Tensor]) -> Tensor:
    """Split x[B,D] into m groups, apply one shared net to every group, merge.

    net maps [N, D/m] -> [N, G_out]; the result is [B, m * G_out] with group
    g occupying the contiguous slice [g*G_out, (g+1)*G_out).
    """
    b, d = x.shape
    groups = ops.split_groups(x, m)
    flat = ops.reshape(groups, (b * m, d // m))
    out = net(flat)
    out3 = ops.reshape(out, (b, m, out.shape[1]))
    return ops.concat_groups(out3)


class SCLModel:
    """Scattering compositional model over 16-panel puzzle instances."""

    def __init__(self, cfg: ModelConfig, seed: Union[int, np.random.Generator] = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        px = cfg.panel_px
        chans = (1,) + tuple(cfg.conv_channels)
        self.convs = [Conv2dLayer(f"object_net.conv{i + 1}", chans[i], chans[i + 1],
                                  rng, stride=2, dtype=dtype)
                      for i in range(len(cfg.conv_channels))]
        side = px // (2 ** len(cfg.conv_channels))
        self._flat_dim = cfg.conv_channels[-1] * side * side
        self.obj_fc = Linear("object_net.fc", self._flat_dim, cfg.object_dim, rng, dtype)
        self.obj_fr = FRBlock("object_net.fr", cfg.object_dim, rng, dtype)

        group_in = cfg.object_dim // cfg.object_heads
        attr_dims = (group_in, cfg.attr_hidden, cfg.attr_out_per_group)
        if cfg.share_attr:
            self.attr_net: Union[MLP, GroupedMLP] = MLP("attr_net", attr_dims, rng, dtype)
        else:
            self.attr_net = GroupedMLP("attr_net", cfg.object_heads, attr_dims, rng, dtype)
        self.attr_fr = FRBlock("attr_fr", cfg.attr_width, rng, dtype)

        rel_dims = (9,) + tuple(cfg.rel_hidden) + (cfg.rel_out,)
        if cfg.share_rel:
            self.rel_net: Union[MLP, GroupedMLP] = MLP("rel_net", rel_dims, rng, dtype)
        else:
            self.rel_net = GroupedMLP("rel_net", cfg.attr_width, rel_dims, rng, dtype)

        self.out_net = MLP("output", (cfg.rel_width, cfg.out_hidden, 1), rng, dtype)

        self._params: list[Parameter] = []
        for mod in (*self.convs, self.obj_fc, self.obj_fr, self.attr_net,
                    self.attr_fr, self.rel_net, self.out_net):
            self._params.extend(mod.parameters())
        names = [p.name for p in self._params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    # ---- parameter plumbing ----

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data.copy() for p in self._params}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self._params:
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name}")
            arr = np.asarray(state[p.name], dtype=self.dtype)
            if arr.shape != p.tensor.data.shape:
                raise ValueError(f"{p.name}: shape {arr.shape} does not match "
                                 f"{p.tensor.data.shape}")
            p.tensor.data = np.ascontiguousarray(arr)

    def clone(self, dtype=None) -> "SCLModel":
        other = SCLModel(self.cfg, seed=0, dtype=dtype or self.dtype)
        for src, dst in zip(self._params, other._params):
            dst.tensor.data = src.tensor.data.astype(other.dtype)
        return other

    # ---- forward pieces ----

    def object_net(self, panels: Tensor) -> Tensor:
        """panels[N,1,P,P] in [0,1] -> object features [N, object_dim]."""
        px = self.cfg.panel_px
        if panels.data.ndim != 4 or panels.shape[1:] != (1, px, px):
            raise ValueError(f"object_net: expected [N,1,{px},{px}], "
                             f"got {panels.shape}")
        x = panels
        for conv in self.convs:
            x = ops.relu(conv(x))
        n = x.shape[0]
        x = ops.reshape(x, (n, self._flat_dim))
        x = ops.relu(self.obj_fc(x))
        return self.obj_fr(x)

    def _attr_scatter_pre(self, obj: Tensor) -> Tensor:
        cfg = self.cfg
        if obj.shape[1] != cfg.object_dim:
            raise ValueError(f"attribute_scatter: expected width {cfg.object_dim}, "
                             f"got {obj.shape}")
        if cfg.share_attr:
            return scatter(obj, cfg.object_heads, self.attr_net)
        groups = ops.split_groups(obj, cfg.object_heads)
        return ops.concat_groups(self.attr_net(groups))

    def attribute_scatter(self, obj: Tensor) -> Tensor:
        """Object features [N,D] -> merged per-head attribute features [N,attr_width]."""
        return self.attr_fr(self._attr_scatter_pre(obj))

    def panel_features(self, panels: Union[Tensor, np.ndarray],
                       pre_fr: bool = False) -> Tensor:
        """Full per-panel pipeline; pre_fr returns the features before the
        merge-side residual block (the probe alternative)."""
        if not isinstance(panels, Tensor):
            panels = Tensor(panels)
        obj = self.object_net(panels)
        pre = self._attr_scatter_pre(obj)
        return pre if pre_fr else self.attr_fr(pre)

    def relation_groups(self, mats: Tensor) -> Tensor:
        """mats[N,9,W] (panels 1..9 row-major, candidate last) -> [N,W,rel_out].

        Position d of the feature vector is read across all 9 panels and fed
        to the relation network; group outputs keep the position order.
        """
        cfg = self.cfg
        if mats.data.ndim != 3 or mats.shape[1] != 9:
            raise ValueError(f"relation_groups: expected [N,9,{cfg.attr_width}], "
                             f"got {mats.shape}")
        if mats.shape[2] != cfg.attr_width:
            raise ValueError(f"relation_groups: expected width {cfg.attr_width}, "
                             f"got {mats.shape}")
        n, _, w = mats.shape
        seq = ops.transpose(mats, (0, 2, 1))  # [N,W,9]
        if cfg.share_rel:
            flat = ops.reshape(seq, (n * w, 9))
            out = self.rel_net(flat)
            return ops.reshape(out, (n, w, cfg.rel_out))
        return self.rel_net(seq)

    def relation_scatter(self, mats: Tensor) -> Tensor:
        """mats[N,9,W] -> concatenated relation features [N, W*rel_out]."""
        groups = self.relation_groups(mats)
        n = groups.shape[0]
        return ops.reshape(groups, (n, self.cfg.rel_width))

    def score_matrix(self, rel: Tensor) -> Tensor:
        """Relation features [N, rel_width] -> scalar score [N, 1]."""
        if rel.shape[1] != self.cfg.rel_width:
            raise ValueError(f"score_matrix: expected width {self.cfg.rel_width}, "
                             f"got {rel.shape}")
        return self.out_net(rel)

    def scores(self, panels: Union[Tensor, np.ndarray]) -> Tensor:
        """panels[B,16,P,P] (8 context then 8 candidates) -> scores [B,8].

        Each panel is featurized once; the 8 candidate-completed matrices
        share the 8 context features.
        """
        if not isinstance(panels, Tensor):
            panels = Tensor(panels)
        cfg = self.cfg
        if panels.data.ndim != 4 or panels.shape[1] != 16 or \
                panels.shape[2:] != (cfg.panel_px, cfg.panel_px):
            raise ValueError(f"scores: expected [B,16,{cfg.panel_px},{cfg.panel_px}], "
                             f"got {panels.shape}")
        b = panels.shape[0]
        flat = ops.reshape(panels, (b * 16, 1, cfg.panel_px, cfg.panel_px))
        feats = ops.reshape(self.panel_features(flat), (b, 16, cfg.attr_width))
        ctx = ops.slice_axis(feats, 1, 0, 8)
        mats = []
        for i in range(8):
            cand = ops.slice_axis(feats, 1, 8 + i, 1)
            mat = ops.concat([ctx, cand], axis=1)  # [B,9,W]
            mats.append(ops.reshape(mat, (b, 1, 9, cfg.attr_width)))
        stacked = ops.reshape(ops.concat(mats, axis=1), (b * 8, 9, cfg.attr_width))
        rel = self.relation_scatter(stacked)
        return ops.reshape(self.score_matrix(rel), (b, 8))

    def predict(self, panels: Union[Tensor, np.ndarray]) -> np.ndarray:
        """Probabilities over the 8 candidates, [B,8]."""
        return ops.softmax(self.scores(panels)).data

    def loss(self, panels: Union[Tensor, np.ndarray], answers) -> Tensor:
        return ops.softmax_cross_entropy(self.scores(panels), answers)


def save_model(path, model: SCLModel, extra_header: Optional[dict[str, str]] = None) -> None:
    header = model.cfg.to_header()
    if extra_header:
        header.update(extra_header)
    save_checkpoint(path, model.parameters(), header)


def load_model(path) -> tuple[SCLModel, dict[str, str]]:
    header, arrays = load_checkpoint(path)
    model = SCLModel(ModelConfig.from_header(header), seed=0)
    model.load_state_dict(arrays)
    return model, header
