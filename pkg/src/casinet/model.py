"""Backbone -> ASPP -> CSI -> SA (or concat fusion) -> classifier, plus auxiliary head."""

from __future__ import annotations

from . import ops
from .aspp import AsppParams, ScaleStack, aspp_forward
from .autograd import Var
from .config import ModelConfig
from .csi import CsiParams, csi_forward
from .nn import BatchNorm, Conv1x1, ConvBNReLU, Module, name_parameters
from .sa import SaParams, sa_attention, sa_fuse
from .tensor import Rng

STRIDE = 4


class Backbone(Module):
    """Toy FCN: four conv-BN-ReLU blocks with 2x2 average pooling after the first two."""

    def __init__(self, cin: int, width: int, rng: Rng):
        self.block1 = ConvBNReLU(cin, 16, rng.child(0))
        self.block2 = ConvBNReLU(16, 32, rng.child(1))
        self.block3 = ConvBNReLU(32, width, rng.child(2))
        self.block4 = ConvBNReLU(width, width, rng.child(3))

    def forward(self, x: Var, mode: str) -> tuple[Var, Var]:
        x = ops.avg_pool2(self.block1.forward(x, mode))
        x = ops.avg_pool2(self.block2.forward(x, mode))
        tap = self.block3.forward(x, mode)
        return self.block4.forward(tap, mode), tap


class ConcatFusion(Module):
    """Channel concat of the K scales, 1x1 conv, BN, ReLU."""

    def __init__(self, K: int, channels: int, rng: Rng):
        self.conv = Conv1x1(K * channels, channels, rng)
        self.bn = BatchNorm(channels)

    def forward(self, stack: ScaleStack, mode: str) -> Var:
        n, K, c, h, w = stack.data.shape
        x = ops.reshape(stack.data, (n, K * c, h, w))
        return ops.relu(self.bn.forward(self.conv.forward(x), mode))


class SegModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = Rng(seed)
        c = cfg.branch_channels
        self.backbone = Backbone(cfg.in_channels, cfg.backbone_channels, rng.child(0))
        self.aspp = AsppParams(cfg.backbone_channels, c, cfg.dilations, rng.child(1)) if cfg.use_aspp else None
        self.csi = CsiParams(c, cfg, rng.child(2)) if cfg.use_csi else None
        self.sa = SaParams(c, cfg, rng.child(3)) if cfg.use_sa else None
        self.fusion = ConcatFusion(cfg.K, c, rng.child(4)) if cfg.use_aspp and not cfg.use_sa else None
        head_in = c if cfg.use_aspp else cfg.backbone_channels
        self.classifier = Conv1x1(head_in, cfg.num_classes, rng.child(5), bias=True)
        self.aux = Conv1x1(cfg.backbone_channels, cfg.num_classes, rng.child(6), bias=True)
        name_parameters(self)

    def forward(self, image, mode: str = "train", capture: dict | None = None) -> tuple[Var, Var]:
        image = image if isinstance(image, Var) else Var(image)
        n, cin, h, w = image.shape
        if cin != self.cfg.in_channels:
            raise ops.ShapeError(f"expected {self.cfg.in_channels} input channels, got {cin}")
        if h % STRIDE or w % STRIDE:
            raise ops.ShapeError(f"image H, W must be divisible by {STRIDE}, got {h}x{w}")
        feat, tap = self.backbone.forward(image, mode)
        if self.aspp is not None:
            stack = aspp_forward(feat, self.aspp, self.cfg, mode)
            if capture is not None:
                capture["aspp"] = stack
            if self.csi is not None:
                stack = csi_forward(stack, self.csi, self.cfg, mode, capture)
                if capture is not None:
                    capture["csi"] = stack
            if self.sa is not None:
                att = sa_attention(stack, self.sa, self.cfg, mode)
                if capture is not None:
                    capture["attention"] = att
                feat = sa_fuse(stack, att)
            else:
                feat = self.fusion.forward(stack, mode)
        logits = ops.upsample_bilinear(self.classifier.forward(feat), (h, w))
        aux = ops.upsample_bilinear(self.aux.forward(tap), (h, w))
        return logits, aux


def forward(model: SegModel, image, mode: str = "train") -> tuple[Var, Var]:
    return model.forward(image, mode)


def build_baseline_variants(cfg: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """The four CSI/SA on-off combinations on top of ASPP."""
    return [
        ("aspp_only", cfg.replace(use_aspp=True, use_csi=False, use_sa=False)),
        ("aspp_csi", cfg.replace(use_aspp=True, use_csi=True, use_sa=False)),
        ("aspp_sa", cfg.replace(use_aspp=True, use_csi=False, use_sa=True)),
        ("casinet", cfg.replace(use_aspp=True, use_csi=True, use_sa=True)),
    ]


def variant_config(name: str, cfg: ModelConfig) -> ModelConfig:
    """Named ablation variants; flag ablations sit on top of ASPP + the module under study."""
    base = dict(build_baseline_variants(cfg))
    if name in base:
        return base[name]
    table = {
        "fcn": dict(use_aspp=False, use_csi=False, use_sa=False),
        "csi_no_scale_index": dict(use_csi=True, use_sa=False, scale_index=False),
        "csi_shared_embedding": dict(use_csi=True, use_sa=False, shared_embedding=True),
        "sa_softmax": dict(use_csi=False, use_sa=True, sa_activation="softmax"),
        "sa_channel_shared": dict(use_csi=False, use_sa=True, sa_channel_shared=True),
    }
    if name not in table:
        raise KeyError(f"unknown variant {name!r}")
    return cfg.replace(**table[name])


VARIANTS = ("fcn", "aspp_only", "aspp_csi", "aspp_sa", "casinet",
            "csi_no_scale_index", "csi_shared_embedding", "sa_softmax", "sa_channel_shared")
