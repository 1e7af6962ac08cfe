"""Self-conditioned encoder stack.

N same-shape residual layers over a T x D feature sequence. Layers listed in
``EncoderConfig.intermediate_layers`` get a softmax head through the shared
output projection, and (when self-conditioning) the posterior is projected
back to D dimensions through the shared conditioning projection and added to
the features fed to the next layer.

Parameter order, as written to checkpoints::

    input.weight, input.bias,
    layers.<n>.attn_q.weight, layers.<n>.attn_k.weight, layers.<n>.attn_v.weight,
    layers.<n>.attn_o.weight, layers.<n>.attn_o.bias      (mlp_attention only)
    layers.<n>.ff1.weight, layers.<n>.ff1.bias,
    layers.<n>.ff2.weight, layers.<n>.ff2.bias            (n = 1..N)
    heads.out.weight, heads.out.bias,
    heads.cond.weight, heads.cond.bias
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffgraph as dg
from . import interaug
from .config import AugmentationSpec, ConfigError, EncoderConfig
from .ctc import PosteriorGrid, TokenSequence, collapse, ctc_loss, greedy_path
from .diffgraph import ShapeError, Tensor
from .rng import SeededRng


class Linear:
    """Affine map applied to every frame: x @ weight + bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: SeededRng, bias: bool = True):
        # uniform scaled by fan-in, zero bias
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = dg.parameter(rng.uniform((in_dim, out_dim)) * 2 * bound - bound)
        self.bias = dg.parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = dg.matmul(x, self.weight)
        return dg.add_bias(y, self.bias) if self.bias is not None else y

    def named_parameters(self, prefix: str) -> List[Tuple[str, Tensor]]:
        params = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            params.append((f"{prefix}.bias", self.bias))
        return params


@dataclass
class SharedHeads:
    """The two projections every head shares.

    ``out_projection`` (D -> |V'|) serves the final and all intermediate
    heads; ``cond_projection`` (|V'| -> D) serves every conditioning layer.
    """

    out_projection: Linear
    cond_projection: Linear

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return self.out_projection.named_parameters("heads.out") + self.cond_projection.named_parameters(
            "heads.cond"
        )


class EncoderLayer:
    """Residual block: optional single-head self-attention, then a per-frame MLP."""

    def __init__(self, index: int, cfg: EncoderConfig, rng: SeededRng):
        self.index = index
        self.dim = cfg.model_dim
        self.activation = dg.tanh if cfg.activation == "tanh" else dg.relu
        self.attention = cfg.block == "mlp_attention"
        if self.attention:
            self.attn_q = Linear(cfg.model_dim, cfg.model_dim, rng.derive("attn_q"), bias=False)
            self.attn_k = Linear(cfg.model_dim, cfg.model_dim, rng.derive("attn_k"), bias=False)
            self.attn_v = Linear(cfg.model_dim, cfg.model_dim, rng.derive("attn_v"), bias=False)
            self.attn_o = Linear(cfg.model_dim, cfg.model_dim, rng.derive("attn_o"))
        self.ff1 = Linear(cfg.model_dim, cfg.hidden_dim, rng.derive("ff1"))
        self.ff2 = Linear(cfg.hidden_dim, cfg.model_dim, rng.derive("ff2"))

    def __call__(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"layer {self.index}: expected T x {self.dim} features, got {x.shape}")
        if self.attention:
            h = dg.layer_norm(x)
            q, k, v = self.attn_q(h), self.attn_k(h), self.attn_v(h)
            scores = dg.scale(dg.matmul(q, dg.transpose(k)), 1.0 / math.sqrt(self.dim))
            x = dg.add(x, self.attn_o(dg.matmul(dg.softmax_rows(scores), v)))
        h = self.activation(self.ff1(dg.layer_norm(x)))
        return dg.add(x, self.ff2(h))

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        prefix = f"layers.{self.index}"
        params = []
        if self.attention:
            for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
                params += getattr(self, name).named_parameters(f"{prefix}.{name}")
        params += self.ff1.named_parameters(f"{prefix}.ff1")
        params += self.ff2.named_parameters(f"{prefix}.ff2")
        return params


@dataclass
class LayerTrace:
    """What one conditioning layer saw and what it conditioned on."""

    layer: int
    argmax_path: np.ndarray
    conditioned_path: np.ndarray
    time_spans: List[Tuple[int, int]] = field(default_factory=list)
    feature_spans: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def before(self) -> TokenSequence:
        return collapse(self.argmax_path)

    @property
    def after(self) -> TokenSequence:
        return collapse(self.conditioned_path)


@dataclass
class EncoderOutput:
    final: PosteriorGrid
    intermediates: List[PosteriorGrid]
    traces: List[LayerTrace]


@dataclass
class MixedLoss:
    """Mixed final + intermediate objective and its separate terms."""

    total: Tensor
    final: float
    intermediate: List[float]
    feasible: bool = True

    def __bool__(self) -> bool:
        return self.feasible


class SelfCondEncoder:
    """Input projection, N encoder layers, and the shared heads."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = SeededRng(seed, "init")
        self.input = Linear(cfg.input_dim, cfg.model_dim, rng.derive("input"))
        self.layers = [EncoderLayer(n, cfg, rng.derive(f"layer{n}")) for n in range(1, cfg.num_layers + 1)]
        self.heads = SharedHeads(
            out_projection=Linear(cfg.model_dim, cfg.vocab_size_ext, rng.derive("heads.out")),
            cond_projection=Linear(cfg.vocab_size_ext, cfg.model_dim, rng.derive("heads.cond")),
        )
        self.conditioning_layers = frozenset(cfg.intermediate_layers)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        params = self.input.named_parameters("input")
        for layer in self.layers:
            params += layer.named_parameters()
        return params + self.heads.named_parameters()

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, tensor in params.items():
            tensor.assign(state[name])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def encode_layer(self, n: int, x: Tensor) -> Tensor:
        """Run layer ``n`` (1-based)."""
        return self.layers[n - 1](x)

    def intermediate_predict(self, x: Tensor) -> PosteriorGrid:
        """Softmax head through the shared output projection (final head too)."""
        return PosteriorGrid(dg.softmax_rows(self.heads.out_projection(x)))

    def condition(self, n: int, x: Tensor, z: PosteriorGrid) -> Tensor:
        """x + cond_projection(z) at conditioning layers; x itself elsewhere."""
        if n not in self.conditioning_layers:
            return x
        return dg.add(x, self.heads.cond_projection(z.probs))

    def forward(
        self,
        x0,
        aug: Optional[AugmentationSpec] = None,
        rng: Optional[SeededRng] = None,
    ) -> EncoderOutput:
        """Run the stack. With ``aug`` absent no random draw is ever made."""
        x0 = x0 if isinstance(x0, Tensor) else dg.constant(x0)
        if x0.values.ndim != 2 or x0.shape[1] != self.cfg.input_dim:
            raise ShapeError(f"expected T x {self.cfg.input_dim} input features, got {x0.shape}")
        if aug is not None and rng is None:
            raise ConfigError("augmentation needs an rng")

        x = self.input(x0)
        intermediates: List[PosteriorGrid] = []
        traces: List[LayerTrace] = []
        for n in range(1, self.cfg.num_layers + 1):
            x = self.encode_layer(n, x)
            if n not in self.conditioning_layers:
                continue
            z = self.intermediate_predict(x)
            intermediates.append(z)
            if self.cfg.self_condition:
                x = self._conditioned(n, x, z, aug, rng, traces)

        return EncoderOutput(self.intermediate_predict(x), intermediates, traces)

    def _conditioned(
        self,
        n: int,
        x: Tensor,
        z: PosteriorGrid,
        aug: Optional[AugmentationSpec],
        rng: Optional[SeededRng],
        traces: List[LayerTrace],
    ) -> Tensor:
        if self.cfg.detach_conditioning:
            z = PosteriorGrid(z.probs.detach())
        argmax = greedy_path(z)
        if aug is None:
            traces.append(LayerTrace(n, argmax, argmax))
            return self.condition(n, x, z)

        stream = "shared" if aug.share_draws_across_layers else f"layer{n}"
        result = interaug.apply(aug, x, z, self.heads, rng.derive(stream))
        conditioned = result.path if result.path is not None else argmax
        traces.append(LayerTrace(n, argmax, conditioned, result.time_spans, result.feature_spans))
        return dg.add(result.x_out, result.c_aug)

    def decode(self, x0) -> TokenSequence:
        """Greedy transcript of one utterance (inference path)."""
        return collapse(greedy_path(self.forward(x0).final))


def mixed_loss(
    final: PosteriorGrid,
    inters: Sequence[PosteriorGrid],
    y: Sequence[int],
    mix_weight: float,
) -> MixedLoss:
    """(1 - lambda) * L(final) + lambda / |N| * sum of L(intermediate)."""
    if mix_weight > 0 and not inters:
        raise ConfigError("mix_weight > 0 needs at least one intermediate grid")
    results = [ctc_loss(final, y)] + [ctc_loss(z, y) for z in inters]
    if inters:
        weights = [1.0 - mix_weight] + [mix_weight / len(inters)] * len(inters)
    else:
        weights = [1.0]
    total = dg.add_scalars([r.loss for r in results], weights)
    return MixedLoss(
        total=total,
        final=results[0].value,
        intermediate=[r.value for r in results[1:]],
        feasible=all(results),
    )
