"""The direction-angle prediction model.

A window of history frames plus the goal frame is mapped to tokens (image
embedding concatenated with an accumulated-displacement embedding, then
projected), run through a causal decoder-only transformer, and the final
(goal) token feeds three heads: the clamped sine/cosine angle head and two
grid-cell classification heads (current and next position).  The three task
losses are combined with learned homoscedastic-uncertainty weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .frames import Frame
from .geometry import (
    DirectionAngle,
    Position,
    angle_from_sincos,
    displacement_sequence,
    sincos_from_angle,
    SinCosVec,
)
from .tensor import autodiff as ad
from .tensor.autodiff import Parameter, Tensor
from .tensor.checkpoint import load_checkpoint, save_checkpoint
from .tensor.nn import Conv2d, DecoderLayer, Layer, LayerNorm, Linear
from .tensor.rng import stream

__all__ = ["ModelConfig", "DirectionModel", "ImageEncoder", "FrameClassifier"]


@dataclass(frozen=True)
class ModelConfig:
    history_len: int = 5
    d_img: int = 576
    d_pos: int = 512
    d_model: int = 512
    depth: int = 4
    heads: int = 8
    d_ffn: int = 1024
    dropout: float = 0.1
    num_classes: int = 100
    image_side: int = 224
    channels: int = 3
    # the angle head additionally sees goal-minus-current image embeddings;
    # with terrain whose color drifts across the map that difference is
    # nearly linear in the offset to the goal, so the steering readout does
    # not have to be rediscovered through attention alone
    use_difference_skip: bool = True
    # ablation switches
    use_displacement: bool = True
    use_clamp_block: bool = True
    use_current_head: bool = True
    use_next_head: bool = True
    # loss-form option: multiply both the precision term and the
    # regularizer by 1/2
    uncertainty_half: bool = False

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.num_classes < 2 or self.history_len < 1:
            raise ValueError("invalid model configuration")

    @staticmethod
    def desk() -> "ModelConfig":
        """Small preset that trains from scratch in minutes on a CPU while
        keeping every architectural mechanism."""
        return ModelConfig(
            history_len=5,
            d_img=64,
            d_pos=32,
            d_model=64,
            depth=2,
            heads=4,
            d_ffn=128,
            dropout=0.1,
            num_classes=25,
            image_side=32,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


class ImageEncoder(Layer):
    """Four stride-2 conv stages with ReLU.  Small final feature maps are
    flattened through a linear projection — average pooling there would
    discard the spatial layout that tells map regions apart — while large
    maps (high-resolution configs) fall back to global average pooling."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator):
        super().__init__(name)
        c = config.channels
        d = config.d_img
        chans = [max(8, d // 4), max(12, d // 2), max(16, 3 * d // 4), d]
        self.convs: List[Conv2d] = []
        for i, cout in enumerate(chans):
            self.convs.append(
                self._child(
                    Conv2d(f"{name}.conv{i}", c, cout, 3, rng, stride=2, padding=1)
                )
            )
            c = cout
        side = config.image_side
        for _ in chans:
            side = (side + 1) // 2
        self.final_side = side
        if side <= 4:
            self.proj: Optional[Linear] = self._child(
                Linear(f"{name}.proj", side * side * d, d, rng)
            )
        else:
            self.proj = None

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ad.relu(conv(x))
        if self.proj is None:
            return ad.mean_pool_2d(x)
        n = x.data.shape[0]
        return self.proj(ad.reshape(x, (n, -1)))


class AngleHead(Layer):
    """LayerNorm, then (optionally) the clamp block: hardtanh, a linear
    halving the width, hardtanh; finally a linear to the (sin, cos) pair."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator):
        super().__init__(name)
        d = config.d_model + (config.d_img if config.use_difference_skip else 0)
        self.use_clamp = config.use_clamp_block
        self.ln = self._child(LayerNorm(f"{name}.ln", d))
        if self.use_clamp:
            self.mid = self._child(Linear(f"{name}.mid", d, d // 2, rng))
            self.out = self._child(Linear(f"{name}.out", d // 2, 2, rng))
        else:
            self.out = self._child(Linear(f"{name}.out", d, 2, rng))

    def __call__(self, z: Tensor) -> Tensor:
        h = self.ln(z)
        if self.use_clamp:
            h = ad.hardtanh(h)
            h = ad.hardtanh(self.mid(h))
        return self.out(h)


class ClassHead(Layer):
    """LayerNorm then a linear to grid-cell logits (no clamp block)."""

    def __init__(self, name: str, config: ModelConfig, rng: np.random.Generator):
        super().__init__(name)
        self.ln = self._child(LayerNorm(f"{name}.ln", config.d_model))
        self.out = self._child(Linear(f"{name}.out", config.d_model, config.num_classes, rng))

    def __call__(self, z: Tensor) -> Tensor:
        return self.out(self.ln(z))


class DirectionModel(Layer):
    def __init__(self, config: ModelConfig, init_seed: int = 0):
        super().__init__("model")
        self.config = config
        rng = stream(init_seed, "init")
        self.encoder = self._child(ImageEncoder("model.enc", config, rng))
        if config.use_displacement:
            self.disp = self._child(Linear("model.disp", 2, config.d_pos, rng))
        else:
            self.disp = None
        self.fuse = self._child(
            Linear("model.fuse", config.d_img + config.d_pos, config.d_model, rng)
        )
        max_tokens = config.history_len + 1
        self.pos_embed = self._param(
            "model.pos_embed", rng.standard_normal((max_tokens, config.d_model)) * 0.02
        )
        self.layers = [
            self._child(
                DecoderLayer(f"model.dec{i}", config.d_model, config.heads, config.d_ffn, rng)
            )
            for i in range(config.depth)
        ]
        self.angle_head = self._child(AngleHead("model.angle", config, rng))
        self.cur_head = (
            self._child(ClassHead("model.cur", config, rng)) if config.use_current_head else None
        )
        self.next_head = (
            self._child(ClassHead("model.next", config, rng)) if config.use_next_head else None
        )
        self.s_angle = self._param("model.s_angle", np.zeros(()))
        self.s_cur = self._param("model.s_cur", np.zeros(())) if self.cur_head else None
        self.s_next = self._param("model.s_next", np.zeros(())) if self.next_head else None

    # -- forward ----------------------------------------------------------

    def encode_images(self, images: np.ndarray) -> Tensor:
        """[N, 3, H, W] -> [N, d_img]."""
        side = self.config.image_side
        if images.shape[-3:] != (self.config.channels, side, side):
            raise ad.ShapeError("encode_image", images.shape, (self.config.channels, side, side))
        return self.encoder(Tensor(images))

    def encode_displacements(self, disps: np.ndarray) -> Tensor:
        """[..., 2] accumulated unit displacements -> [..., d_pos]; the zero
        tensor when displacement guidance is ablated."""
        if self.disp is None:
            return Tensor(np.zeros(disps.shape[:-1] + (self.config.d_pos,)))
        return self.disp(Tensor(disps))

    def forward_tokens(
        self,
        images: np.ndarray,
        disps: np.ndarray,
        train: bool = False,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, Tensor]:
        """images [B, T, 3, H, W], disps [B, T, 2] -> (final-token embedding
        [B, d_model], goal-minus-current image-embedding difference [B, d_img]).
        T counts the goal frame (last token)."""
        b, t = images.shape[:2]
        if t > self.config.history_len + 1:
            raise ValueError(f"sequence length {t} exceeds {self.config.history_len + 1}")
        flat = images.reshape((b * t,) + images.shape[2:])
        img_emb = self.encode_images(flat)  # [B*T, d_img]
        img_emb = ad.reshape(img_emb, (b, t, self.config.d_img))
        goal_emb = ad.index(img_emb, (slice(None), t - 1))
        cur_emb = ad.index(img_emb, (slice(None), t - 2))
        diff_emb = ad.sub(goal_emb, cur_emb)  # [B, d_img]
        pos_emb = self.encode_displacements(disps)  # [B, T, d_pos]
        tokens = self.fuse(ad.concat([img_emb, pos_emb], axis=2))  # [B, T, d_model]
        # right-align the slots so the goal frame always lands in the last
        # positional slot no matter how short the history window is
        max_tokens = self.config.history_len + 1
        slots = np.arange(max_tokens - t, max_tokens)
        tokens = ad.add(tokens, ad.embedding_lookup(self.pos_embed, slots))
        if train and self.config.dropout > 0:
            if dropout_rng is None:
                raise ValueError("train-mode forward requires a dropout rng")
            tokens = ad.dropout(tokens, self.config.dropout, dropout_rng, train=True)
        for layer in self.layers:
            tokens = layer(tokens)
        return ad.index(tokens, (slice(None), t - 1))  # [B, d_model]

    def forward(
        self,
        images: np.ndarray,
        disps: np.ndarray,
        train: bool = False,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, Optional[Tensor], Optional[Tensor]]:
        z = self.forward_tokens(images, disps, train, dropout_rng)
        sincos = self.angle_head(z)
        cur = self.cur_head(z) if self.cur_head else None
        nxt = self.next_head(z) if self.next_head else None
        return sincos, cur, nxt

    # -- loss -------------------------------------------------------------

    def loss(
        self,
        sincos: Tensor,
        cur_logits: Optional[Tensor],
        next_logits: Optional[Tensor],
        label_angles_deg: np.ndarray,
        label_cur: np.ndarray,
        label_next: np.ndarray,
    ) -> Tuple[Tensor, Dict[str, float]]:
        """Uncertainty-weighted multi-task loss:
        sum_i exp(-s_i) * L_i + s_i over the active heads."""
        rad = np.radians(label_angles_deg)
        target = Tensor(np.stack([np.sin(rad), np.cos(rad)], axis=1))
        half = 0.5 if self.config.uncertainty_half else 1.0
        parts: Dict[str, float] = {}

        l_angle = ad.mse(sincos, target)
        parts["angle"] = float(l_angle.data)
        total = ad.add(
            ad.mul(ad.mul(ad.exp(ad.neg(self.s_angle)), l_angle), Tensor(half)),
            ad.mul(self.s_angle, Tensor(half)),
        )
        if cur_logits is not None:
            c = np.asarray(label_cur)
            if c.min() < 0 or c.max() >= self.config.num_classes:
                raise ValueError("current-class label out of range")
            l_cur = ad.cross_entropy(cur_logits, c)
            parts["current"] = float(l_cur.data)
            total = ad.add(
                total,
                ad.add(
                    ad.mul(ad.mul(ad.exp(ad.neg(self.s_cur)), l_cur), Tensor(half)),
                    ad.mul(self.s_cur, Tensor(half)),
                ),
            )
        if next_logits is not None:
            nx = np.asarray(label_next)
            if nx.min() < 0 or nx.max() >= self.config.num_classes:
                raise ValueError("next-class label out of range")
            l_next = ad.cross_entropy(next_logits, nx)
            parts["next"] = float(l_next.data)
            total = ad.add(
                total,
                ad.add(
                    ad.mul(ad.mul(ad.exp(ad.neg(self.s_next)), l_next), Tensor(half)),
                    ad.mul(self.s_next, Tensor(half)),
                ),
            )
        parts["total"] = float(total.data)
        return total, parts

    def loss_on_batch(
        self,
        images: np.ndarray,
        disps: np.ndarray,
        label_angles_deg: np.ndarray,
        label_cur: np.ndarray,
        label_next: np.ndarray,
        train: bool = True,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, Dict[str, float]]:
        sincos, cur, nxt = self.forward(images, disps, train, dropout_rng)
        return self.loss(sincos, cur, nxt, label_angles_deg, label_cur, label_next)

    # -- inference --------------------------------------------------------

    def _window_arrays(self, frames: Sequence[Frame], end: Frame):
        if not (1 <= len(frames) <= self.config.history_len):
            raise ValueError(
                f"history length {len(frames)} outside [1, {self.config.history_len}]"
            )
        disps = displacement_sequence([f.position for f in frames], include_end=True)
        images = np.stack([f.image for f in frames] + [end.image])[None]
        disp_arr = np.array([[d.dn, d.de] for d in disps])[None]
        return images, disp_arr

    def predict_sincos(self, frames: Sequence[Frame], end: Frame) -> SinCosVec:
        images, disps = self._window_arrays(frames, end)
        with ad.no_grad():
            sincos, _, _ = self.forward(images, disps, train=False)
        s, c = sincos.data[0]
        return SinCosVec(float(s), float(c))

    def predict_angle(self, frames: Sequence[Frame], end: Frame) -> DirectionAngle:
        return angle_from_sincos(self.predict_sincos(frames, end))

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.parameter_map()
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise ValueError(f"state mismatch, differing keys: {sorted(missing)[:5]}")
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data[...] = state[name]

    def save(self, path: str) -> None:
        save_checkpoint(path, self.state_dict(), {"model": self.config.to_dict()})

    @staticmethod
    def load(path: str) -> "DirectionModel":
        params, cfg = load_checkpoint(path)
        model = DirectionModel(ModelConfig.from_dict(cfg["model"]))
        model.load_state_dict(params)
        return model


class FrameClassifier(Layer):
    """Single-frame grid-cell classifier: the same conv encoder followed by a
    linear head.  Used by the two-stage baselines, both as a localizer and
    (via its penultimate features) as an image embedder."""

    def __init__(self, config: ModelConfig, init_seed: int = 0):
        super().__init__("clf")
        self.config = config
        rng = stream(init_seed, "init", 1)
        self.encoder = self._child(ImageEncoder("clf.enc", config, rng))
        self.head = self._child(Linear("clf.head", config.d_img, config.num_classes, rng))

    def embed(self, images: np.ndarray) -> np.ndarray:
        """[N, 3, H, W] -> [N, d_img] penultimate features."""
        with ad.no_grad():
            return self.encoder(Tensor(images)).data

    def logits(self, images: np.ndarray) -> Tensor:
        return self.head(self.encoder(Tensor(images)))

    def predict_class(self, image: np.ndarray) -> int:
        with ad.no_grad():
            out = self.logits(image[None]).data[0]
        return int(np.argmax(out))

    def loss_on_batch(self, images: np.ndarray, labels: np.ndarray) -> Tensor:
        return ad.cross_entropy(self.logits(images), labels)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.parameter_map()
        if set(own) != set(state):
            raise ValueError("classifier state keys mismatch")
        for name, p in own.items():
            p.data[...] = state[name]

    def save(self, path: str) -> None:
        save_checkpoint(path, self.state_dict(), {"classifier": self.config.to_dict()})

    @staticmethod
    def load(path: str) -> "FrameClassifier":
        params, cfg = load_checkpoint(path)
        clf = FrameClassifier(ModelConfig.from_dict(cfg["classifier"]))
        clf.load_state_dict(params)
        return clf
