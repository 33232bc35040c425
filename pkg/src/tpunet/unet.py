"""UNet image encoder, decoder, and segmentation head.

Two downsamplings with double-conv blocks, a bottleneck, and a mirrored
decoder fed by skip connections. The head consumes the decoder output
concatenated with a full-resolution attention map and the first-level
skip, then predicts per-class logits (sigmoid lives in the loss).
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class FeatureBundle:
    bottleneck: Tensor          # [B, cb, H/4, W/4]
    skips: List[Tensor]         # [(B, c1, H, W), (B, c2, H/2, W/2)]


def _conv_w(rng, c_out, c_in, k):
    fan_in = c_in * k * k
    return Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), (c_out, c_in, k, k)),
                  requires_grad=True)


def _bias(c):
    return Tensor(np.zeros(c), requires_grad=True)


def make_params(rng: np.random.Generator, in_ch: int = 1,
                channels: Tuple[int, int] = (16, 32), bottleneck: int = 64,
                num_classes: int = 3) -> Dict[str, Tensor]:
    c1, c2 = channels
    cb = bottleneck
    p = {}

    def double(name, cin, cout):
        p[f"{name}.c1_w"] = _conv_w(rng, cout, cin, 3)
        p[f"{name}.c1_b"] = _bias(cout)
        p[f"{name}.c2_w"] = _conv_w(rng, cout, cout, 3)
        p[f"{name}.c2_b"] = _bias(cout)

    double("enc1", in_ch, c1)
    double("enc2", c1, c2)
    double("bott", c2, cb)
    p["up1_w"] = _conv_w(rng, c2, cb, 3)
    p["up1_b"] = _bias(c2)
    double("dec1", 2 * c2, c2)
    p["up2_w"] = _conv_w(rng, c1, c2, 3)
    p["up2_b"] = _bias(c1)
    double("dec2", 2 * c1, c1)
    p["head1_w"] = _conv_w(rng, c1, 3 * c1, 3)
    p["head1_b"] = _bias(c1)
    p["head2_w"] = _conv_w(rng, num_classes, c1, 1)
    p["head2_b"] = _bias(num_classes)
    return p


def _double_conv(x: Tensor, params, name: str) -> Tensor:
    x = T.relu(T.conv2d(x, params[f"{name}.c1_w"], params[f"{name}.c1_b"], padding="same"))
    return T.relu(T.conv2d(x, params[f"{name}.c2_w"], params[f"{name}.c2_b"], padding="same"))


def encode_image(image: Tensor, params: Dict[str, Tensor]) -> FeatureBundle:
    """[B, in_ch, H, W] -> bottleneck features plus skip maps."""
    B, C, H, W = image.data.shape
    if H % 4 or W % 4:
        raise ShapeError(f"spatial dims must be divisible by 4, got {H}x{W}")
    s1 = _double_conv(image, params, "enc1")
    s2 = _double_conv(T.maxpool2(s1), params, "enc2")
    f_m = _double_conv(T.maxpool2(s2), params, "bott")
    return FeatureBundle(bottleneck=f_m, skips=[s1, s2])


def _up(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.relu(T.conv2d(T.upsample_nearest2(x), w, b, padding="same"))


def decode(fused: Tensor, skips: List[Tensor], params: Dict[str, Tensor]) -> Tensor:
    """Fused bottleneck [B, cb, H/4, W/4] -> decoder features [B, c1, H, W]."""
    s1, s2 = skips
    B, _, h4, w4 = fused.data.shape
    if s2.data.shape[2:] != (2 * h4, 2 * w4) or s1.data.shape[2:] != (4 * h4, 4 * w4):
        raise ShapeError(
            f"skip shapes {s1.data.shape}, {s2.data.shape} do not match fused {fused.data.shape}"
        )
    x = _up(fused, params["up1_w"], params["up1_b"])
    x = _double_conv(T.concat([x, s2], axis=1), params, "dec1")
    x = _up(x, params["up2_w"], params["up2_b"])
    return _double_conv(T.concat([x, s1], axis=1), params, "dec2")


def segmentation_head(decoder_out: Tensor, attention_map: Tensor,
                      first_skip: Tensor, params: Dict[str, Tensor]) -> Tensor:
    """Concat the three full-resolution maps and predict logits."""
    shapes = {t.data.shape for t in (decoder_out, attention_map, first_skip)}
    if len(shapes) != 1:
        raise ShapeError(f"head inputs disagree on shape: {sorted(shapes)}")
    x = T.concat([decoder_out, attention_map, first_skip], axis=1)
    x = T.relu(T.conv2d(x, params["head1_w"], params["head1_b"], padding="same"))
    return T.conv2d(x, params["head2_w"], params["head2_b"], padding="same")
