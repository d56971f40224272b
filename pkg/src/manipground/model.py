"""Assembly of encoders, interaction stack, heads and grounding into one model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoders import ImageEncoder, TextEncoder
from .grounding import BoxHead, ManipulationQueries, TokenMLP, TokenScorer, mean_pool
from .heads import BinaryHead, CoupledHead, FineGrainedHeads
from .interaction import FusedFeatures, InteractionStack
from .losses import LossBreakdown, LossWeights, composite_loss
from .nn import Module
from .tensor import Tensor


@dataclass
class ModelOutput:
    binary: Tensor
    image_fine: Tensor | None
    text_fine: Tensor | None
    multilabel: Tensor | None
    bbox: Tensor
    token_logits: Tensor
    fused: FusedFeatures | None = None

    def probabilities(self) -> dict[str, np.ndarray]:
        """Detached probabilities used for evaluation records."""
        binary = _softmax(self.binary.data)[:, 1]
        if self.multilabel is not None:
            four = 1.0 / (1.0 + np.exp(-self.multilabel.data))
        else:
            pi = _softmax(self.image_fine.data)
            pt = _softmax(self.text_fine.data)
            four = np.stack([pi[:, 1], pi[:, 2], pt[:, 1], pt[:, 2]], axis=1)
        tokens = _softmax(self.token_logits.data)[..., 1]
        return {"binary": binary, "multilabel": four, "bbox": self.bbox.data.copy(), "tokens": tokens}


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


class ManipulationModel(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.dropout_rng = np.random.default_rng([cfg.seed, 1])
        d, h, m = cfg.dim, cfg.heads, cfg.ffn_mult
        kw = dict(ffn_mult=m, dropout=cfg.dropout, dropout_rng=self.dropout_rng)
        self.image_encoder = ImageEncoder(cfg.image_size, cfg.channels, cfg.patch_size, d, h,
                                          cfg.encoder_depth, rng, **kw)
        self.text_encoder = TextEncoder(cfg.vocab_size, cfg.max_tokens, d, h, cfg.encoder_depth, rng, **kw)
        self.interaction = InteractionStack(d, h, cfg.interaction_depth, rng,
                                            text_cross=not cfg.disable_m_t, **kw)
        self.binary_head = BinaryHead(d, rng)
        if cfg.disable_dfc:
            self.coupled_head = CoupledHead(d, rng)
        else:
            self.fine_heads = FineGrainedHeads(d, rng)
        self.queries = ManipulationQueries(d, cfg.image_queries, cfg.text_queries, rng)
        if cfg.disable_i_imq:
            self.queries.q_im.requires_grad = False
        self.box_head = BoxHead(d, rng)
        if cfg.disable_t_imq:
            self.queries.q_tm.requires_grad = False
            self.token_head = TokenMLP(d, rng)
        else:
            self.token_head = TokenScorer(d, cfg.reduce_dim, cfg.text_queries, rng,
                                          project=cfg.text_query_projection)
        self.weights = LossWeights(cfg.alpha, cfg.beta, cfg.gamma)

    def forward(self, images, tokens, keep_features: bool = False) -> ModelOutput:
        f_i = self.image_encoder(np.asarray(images, dtype=np.float64))
        f_t = self.text_encoder(np.asarray(tokens, dtype=np.int64))
        fused = self.interaction(f_i, f_t)
        if self.cfg.disable_dfc:
            image_fine = text_fine = None
            multilabel = self.coupled_head(fused.i_cls, fused.t_cls)
        else:
            image_fine, text_fine = self.fine_heads(fused.i_cls, fused.t_cls)
            multilabel = None
        binary = self.binary_head(fused.i_cls, fused.t_cls)
        f_im = mean_pool(fused.i_pat) if self.cfg.disable_i_imq else self.queries.aggregate_image(fused.i_pat)
        bbox = self.box_head(f_im)
        if self.cfg.disable_t_imq:
            token_logits = self.token_head(fused.t_tok)
        else:
            token_logits = self.token_head(fused.t_tok, self.queries.aggregate_text(fused.t_tok))
        return ModelOutput(binary=binary, image_fine=image_fine, text_fine=text_fine,
                           multilabel=multilabel, bbox=bbox, token_logits=token_logits,
                           fused=fused if keep_features else None)

    __call__ = forward

    def loss(self, batch: dict) -> tuple[ModelOutput, LossBreakdown]:
        out = self.forward(batch["images"], batch["tokens"])
        return out, composite_loss(out, batch, self.weights)

    def predict(self, batch: dict) -> dict[str, np.ndarray]:
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                out = self.forward(batch["images"], batch["tokens"])
        finally:
            self.train(was_training)
        return out.probabilities()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.named_parameters()]
