"""Full segmentation model: image encoder, text encoder, fusion, decoder.

One parameter superset is always initialized in a fixed order, so two
variants built from the same seed share identical weights for every
component they have in common; a variant then keeps only the subset it
actually wires up. Variants:

  full               temporal prompts, contrastive alignment, cross-attention
  no_temporal_info   same wiring, prompts rendered without the timestamp
  no_temporal_prompt text path removed; self-attention over image tokens
  no_semantic_align  full wiring, contrastive weight forced to zero
  no_modality_fusion attention replaced by concatenating the pooled,
                     projected text vector onto every pixel of F_m
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import align, fusion, text_encoder, unet
from . import tensor as T
from .tensor import Tensor

VARIANTS = ("full", "no_temporal_info", "no_temporal_prompt",
            "no_semantic_align", "no_modality_fusion")

# variants sharing the full cross-attention wiring
_ATTN_VARIANTS = ("full", "no_temporal_info", "no_semantic_align")


@dataclass(frozen=True)
class ModelDims:
    D: int = 16            # text feature width
    d: int = 32            # shared fusion token width
    L: int = 18            # token sequence length
    channels: Tuple[int, int] = (16, 32)
    bottleneck: int = 64
    num_classes: int = 3

    @property
    def c1(self) -> int:
        return self.channels[0]


@dataclass
class ForwardOut:
    logits: Tensor
    pooled_image: Optional[Tensor] = None   # [B, d]
    pooled_text: Optional[Tensor] = None    # [B, d]


def make_params(rng: np.random.Generator, vocab_size: int, dims: ModelDims) -> Dict[str, Tensor]:
    """The full parameter superset, created in a fixed draw order."""
    p = {}
    for k, t in unet.make_params(rng, 1, dims.channels, dims.bottleneck,
                                 dims.num_classes).items():
        p[f"unet.{k}"] = t
    for k, t in text_encoder.make_params(rng, vocab_size, dims.D, dims.L).items():
        p[f"text.{k}"] = t
    for k, t in fusion.make_params(rng, dims.bottleneck, dims.D, dims.d).items():
        p[f"fusion.{k}"] = t
    cb, d, c1 = dims.bottleneck, dims.d, dims.c1
    p["fuse_out_w"] = unet._conv_w(rng, cb, d, 1)
    p["fuse_out_b"] = unet._bias(cb)
    p["head_in_w"] = unet._conv_w(rng, c1, d, 1)
    p["head_in_b"] = unet._bias(c1)
    p["concat_w"] = unet._conv_w(rng, cb, cb + d, 1)
    p["concat_b"] = unet._bias(cb)
    return p


def params_for_variant(params: Dict[str, Tensor], variant: str) -> Dict[str, Tensor]:
    """Keep only the parameters the variant's wiring can reach."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    drop = set()
    if variant == "no_temporal_prompt":
        drop |= {"text.", "fusion.proj_txt", "concat_"}
    elif variant == "no_modality_fusion":
        drop |= {"fusion.proj_img", "fusion.wq", "fusion.wk", "fusion.wv", "fuse_out_"}
    else:
        drop |= {"concat_"}
    return {k: t for k, t in params.items()
            if not any(k.startswith(prefix) for prefix in drop)}


def _sub(params: Dict[str, Tensor], prefix: str) -> Dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: t for k, t in params.items() if k.startswith(prefix)}


def _broadcast_map(vec: Tensor, h: int, w: int) -> Tensor:
    B, d = vec.data.shape
    return T.reshape(vec, (B, d, 1, 1)) * Tensor(np.ones((1, 1, h, w)))


def _upsample4(x: Tensor) -> Tensor:
    return T.upsample_nearest2(T.upsample_nearest2(x))


def forward(params: Dict[str, Tensor], images: np.ndarray, token_ids: Optional[np.ndarray],
            variant: str, dims: ModelDims, want_alignment: bool = False) -> ForwardOut:
    """Run the variant's wiring; returns logits [B, K, H, W] and, when
    requested, the pooled image/text vectors the contrastive loss needs."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    img = images if isinstance(images, Tensor) else Tensor(images)
    bundle = unet.encode_image(img, _sub(params, "unet."))
    f_m = bundle.bottleneck
    B, cb, h4, w4 = f_m.data.shape

    pooled_image = pooled_text = None
    if variant == "no_temporal_prompt":
        proj_map = T.conv2d(f_m, params["fusion.proj_img"], padding="same")
        tokens = fusion.flatten_spatial(proj_map)
        attn = fusion.self_attention_image(tokens, _sub(params, "fusion."))
        spatial = fusion.unflatten_spatial(attn, h4, w4)
        fused = T.conv2d(spatial, params["fuse_out_w"], params["fuse_out_b"],
                         padding="same") + f_m
    else:
        f_t = text_encoder.encode_text(token_ids, _sub(params, "text."))
        pad = text_encoder.pad_mask_of(token_ids)
        if want_alignment:
            pooled_text = T.matmul(text_encoder.pool_text(f_t, pad),
                                   params["fusion.proj_txt"])
        if variant == "no_modality_fusion":
            txt_vec = T.matmul(text_encoder.pool_text(f_t, pad), params["fusion.proj_txt"])
            txt_map = _broadcast_map(txt_vec, h4, w4)
            fused = T.conv2d(T.concat([f_m, txt_map], axis=1),
                             params["concat_w"], params["concat_b"], padding="same")
            spatial = txt_map
        else:
            proj_map = T.conv2d(f_m, params["fusion.proj_img"], padding="same")
            if want_alignment:
                pooled_image = align.pool_image(proj_map)
            img_tokens = fusion.flatten_spatial(proj_map)
            txt_tokens = T.matmul(f_t, params["fusion.proj_txt"])
            joint = fusion.cross_attention(img_tokens, txt_tokens, _sub(params, "fusion."))
            spatial = fusion.to_spatial(joint, h4, w4)
            fused = T.conv2d(spatial, params["fuse_out_w"], params["fuse_out_b"],
                             padding="same") + f_m

    decoder_out = unet.decode(fused, bundle.skips, _sub(params, "unet."))
    head_map = _upsample4(T.conv2d(spatial, params["head_in_w"], params["head_in_b"],
                                   padding="same"))
    logits = unet.segmentation_head(decoder_out, head_map, bundle.skips[0],
                                    _sub(params, "unet."))
    return ForwardOut(logits, pooled_image, pooled_text)
