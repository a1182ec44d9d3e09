"""Attention-gated multi-relational GNN scoring candidate edges on labeled subgraphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .subgraph import LabeledSubgraph


@dataclass
class GnnConfig:
    num_layers: int = 3
    hidden_dim: int = 32
    num_bases: int = 4
    attention_enabled: bool = True
    jk_enabled: bool = True
    edge_dropout_rate: float = 0.5
    input_dim: int = 10
    aggregate_in_neighbors: bool = False

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("hidden_dim and input_dim must be >= 1")
        if self.num_bases < 1:
            raise ValueError(f"num_bases must be >= 1, got {self.num_bases}")
        if not (0.0 <= self.edge_dropout_rate < 1.0):
            raise ValueError(f"edge_dropout_rate must be in [0, 1), got {self.edge_dropout_rate}")

    def layer_in_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden_dim

    def readout_dim(self) -> int:
        per_layer = 4 * self.hidden_dim  # pooled graph, u, v, target-relation embedding
        return per_layer * self.num_layers if self.jk_enabled else per_layer


@dataclass
class LayerParams:
    bases: list[Tensor]  # num_bases matrices (d_in, d)
    coeffs: Tensor       # (R, num_bases) basis-sharing coefficients
    w_self: Tensor       # (d_in, d)
    attn_w1: Tensor      # (2*d_in + 2*d_attn, attn_hidden)
    attn_b1: Tensor      # (attn_hidden,)
    attn_w2: Tensor      # (attn_hidden, 1)
    attn_b2: Tensor      # (1,)


@dataclass
class GnnParams:
    layers: list[LayerParams]
    attn_rel_emb: Tensor    # (R, d_attn), queried at the edge and target relations
    target_rel_emb: Tensor  # (R, d), readout embedding of the scored relation
    readout_w: Tensor       # (readout_dim, 1)

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, lp in enumerate(self.layers):
            for b, basis in enumerate(lp.bases):
                out[f"layers.{i}.bases.{b}"] = basis
            out[f"layers.{i}.coeffs"] = lp.coeffs
            out[f"layers.{i}.w_self"] = lp.w_self
            out[f"layers.{i}.attn_w1"] = lp.attn_w1
            out[f"layers.{i}.attn_b1"] = lp.attn_b1
            out[f"layers.{i}.attn_w2"] = lp.attn_w2
            out[f"layers.{i}.attn_b2"] = lp.attn_b2
        out["attn_rel_emb"] = self.attn_rel_emb
        out["target_rel_emb"] = self.target_rel_emb
        out["readout_w"] = self.readout_w
        return out

    @property
    def num_relations(self) -> int:
        return self.attn_rel_emb.data.shape[0]


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    cfg: GnnConfig, num_relations: int, rng: np.random.Generator, zero: bool = False
) -> GnnParams:
    """Xavier-uniform weights, zero biases; pass zero=True for an all-zero test model."""
    if num_relations < 1:
        raise ValueError(f"num_relations must be >= 1, got {num_relations}")
    d = cfg.hidden_dim
    d_attn = cfg.hidden_dim
    attn_hidden = cfg.hidden_dim

    def draw(shape: tuple[int, int]) -> Tensor:
        if zero:
            return ad.parameter(np.zeros(shape))
        return ad.parameter(_glorot(rng, shape))

    layers = []
    for layer in range(cfg.num_layers):
        d_in = cfg.layer_in_dim(layer)
        layers.append(
            LayerParams(
                bases=[draw((d_in, d)) for _ in range(cfg.num_bases)],
                coeffs=draw((num_relations, cfg.num_bases)),
                w_self=draw((d_in, d)),
                attn_w1=draw((2 * d_in + 2 * d_attn, attn_hidden)),
                attn_b1=ad.parameter(np.zeros(attn_hidden)),
                attn_w2=draw((attn_hidden, 1)),
                attn_b2=ad.parameter(np.zeros(1)),
            )
        )
    return GnnParams(
        layers=layers,
        attn_rel_emb=draw((num_relations, d_attn)),
        target_rel_emb=draw((num_relations, d)),
        readout_w=draw((cfg.readout_dim(), 1)),
    )


def params_from_named(named: dict[str, np.ndarray]) -> GnnParams:
    """Rebuild GnnParams from a checkpoint's named arrays; shapes come from the data."""
    layer_ids = set()
    for name in named:
        if name.startswith("layers."):
            layer_ids.add(int(name.split(".")[1]))
    if not layer_ids or sorted(layer_ids) != list(range(max(layer_ids) + 1)):
        raise ValueError("checkpoint tensor names do not describe a contiguous layer stack")
    layers = []
    for i in sorted(layer_ids):
        basis_names = sorted(
            (n for n in named if n.startswith(f"layers.{i}.bases.")),
            key=lambda n: int(n.split(".")[-1]),
        )
        if not basis_names:
            raise ValueError(f"checkpoint layer {i} has no basis tensors")
        layers.append(
            LayerParams(
                bases=[ad.parameter(named[n]) for n in basis_names],
                coeffs=ad.parameter(named[f"layers.{i}.coeffs"]),
                w_self=ad.parameter(named[f"layers.{i}.w_self"]),
                attn_w1=ad.parameter(named[f"layers.{i}.attn_w1"]),
                attn_b1=ad.parameter(named[f"layers.{i}.attn_b1"]),
                attn_w2=ad.parameter(named[f"layers.{i}.attn_w2"]),
                attn_b2=ad.parameter(named[f"layers.{i}.attn_b2"]),
            )
        )
    return GnnParams(
        layers=layers,
        attn_rel_emb=ad.parameter(named["attn_rel_emb"]),
        target_rel_emb=ad.parameter(named["target_rel_emb"]),
        readout_w=ad.parameter(named["readout_w"]),
    )


def _snap_alpha(alpha: Tensor) -> Tensor:
    """Verifier-mode gate hardening: push saturated sigmoid outputs to exact 0/1."""
    data = alpha.data.copy()
    data[data < 1e-6] = 0.0
    data[data > 1.0 - 1e-6] = 1.0
    return ad.constant(data)


def _attention_batch(
    h_src: Tensor,
    h_dst: Tensor,
    rels: list[int],
    r_t: int,
    lp: LayerParams,
    attn_rel_emb: Tensor,
) -> Tensor:
    num_edges = h_src.data.shape[0]
    e_r = ad.slice_rows(attn_rel_emb, rels)
    e_rt_row = ad.slice_rows(attn_rel_emb, [r_t])
    ones = ad.constant(np.ones((num_edges, 1)))
    e_rt = ad.matmul(ones, e_rt_row)
    a_in = ad.concat([h_src, h_dst, e_r, e_rt])
    s = ad.relu(ad.add(ad.matmul(a_in, lp.attn_w1), lp.attn_b1))
    return ad.sigmoid(ad.add(ad.matmul(s, lp.attn_w2), lp.attn_b2))


def attention_weight(
    params: GnnParams,
    cfg: GnnConfig,
    layer: int,
    h_s: np.ndarray,
    h_t: np.ndarray,
    r: int,
    r_t: int,
) -> float:
    """Gate value in (0, 1) for one edge; exactly 1.0 when attention is disabled."""
    if not cfg.attention_enabled:
        return 1.0
    lp = params.layers[layer]
    alpha = _attention_batch(
        ad.constant(np.asarray(h_s, dtype=np.float64).reshape(1, -1)),
        ad.constant(np.asarray(h_t, dtype=np.float64).reshape(1, -1)),
        [r],
        r_t,
        lp,
        params.attn_rel_emb,
    )
    return alpha.item()


def layer_forward(
    sub: LabeledSubgraph,
    h_prev: Tensor,
    layer: int,
    params: GnnParams,
    cfg: GnnConfig,
    dropout_mask: np.ndarray | None = None,
    snap_alpha: bool = False,
) -> Tensor:
    """One message-passing layer: gated relational aggregation plus a self loop.

    By default node t pulls messages from its outgoing neighbors (edge
    (t, r, s) sends W_r h_s into t); with cfg.aggregate_in_neighbors messages
    flow along edge direction instead (edge (s, r, t) sends into t).
    """
    lp = params.layers[layer]
    num_nodes = sub.num_nodes
    d = lp.w_self.data.shape[1]
    num_bases = len(lp.bases)
    edges = sub.edges
    if edges:
        if cfg.aggregate_in_neighbors:
            senders = [h for h, _, _ in edges]
            receivers = [t for _, _, t in edges]
        else:
            senders = [t for _, _, t in edges]
            receivers = [h for h, _, _ in edges]
        rels = [r for _, r, _ in edges]
        r_t = sub.target[1]
        h_src = ad.slice_rows(h_prev, senders)
        coef_rows = ad.slice_rows(lp.coeffs, rels)
        msg = None
        for b in range(num_bases):
            proj = ad.matmul(h_src, lp.bases[b])
            pick = np.zeros((num_bases, 1))
            pick[b, 0] = 1.0
            coef_col = ad.matmul(coef_rows, ad.constant(pick))
            term = ad.mul(proj, coef_col)
            msg = term if msg is None else ad.add(msg, term)
        if cfg.attention_enabled:
            h_dst = ad.slice_rows(h_prev, receivers)
            alpha = _attention_batch(h_src, h_dst, rels, r_t, lp, params.attn_rel_emb)
            if snap_alpha:
                alpha = _snap_alpha(alpha)
            msg = ad.mul(msg, alpha)
        if dropout_mask is not None:
            mask = np.asarray(dropout_mask, dtype=np.float64)
            if mask.shape != (len(edges),):
                raise ValueError(f"dropout mask shape {mask.shape} != ({len(edges)},)")
            msg = ad.apply_mask(msg, mask.reshape(-1, 1))
        scatter = np.zeros((num_nodes, len(edges)))
        for e, recv in enumerate(receivers):
            scatter[recv, e] = 1.0
        agg = ad.matmul(ad.constant(scatter), msg)
    else:
        agg = ad.constant(np.zeros((num_nodes, d)))
    return ad.relu(ad.add(ad.matmul(h_prev, lp.w_self), agg))


def sample_edge_masks(
    sub: LabeledSubgraph, cfg: GnnConfig, rng: np.random.Generator
) -> list[np.ndarray]:
    """Per-layer Bernoulli keep masks; the candidate edge is never dropped.

    No 1/(1-p) rescaling: evaluation simply runs with all-ones masks.
    """
    num_edges = len(sub.edges)
    masks = []
    for _ in range(cfg.num_layers):
        if cfg.edge_dropout_rate == 0.0:
            mask = np.ones(num_edges)
        else:
            mask = (rng.random(num_edges) >= cfg.edge_dropout_rate).astype(np.float64)
            mask[sub.target_edge_pos] = 1.0
        masks.append(mask)
    return masks


def score_triplet(
    sub: LabeledSubgraph,
    params: GnnParams,
    cfg: GnnConfig,
    dropout_masks: list[np.ndarray] | None = None,
) -> Tensor:
    """Scalar plausibility score of the subgraph's candidate edge.

    Readout concatenates [pooled graph, u, v, target-relation embedding]; with
    jk_enabled the block from every layer is concatenated, otherwise only the
    final layer's block is used.
    """
    if sub.features is None:
        raise ValueError("subgraph is unlabeled; call label_nodes before scoring")
    if dropout_masks is not None and len(dropout_masks) != cfg.num_layers:
        raise ValueError(f"need {cfg.num_layers} dropout masks, got {len(dropout_masks)}")
    if sub.features.shape[1] != cfg.input_dim:
        raise ValueError(
            f"feature dim {sub.features.shape[1]} != configured input_dim {cfg.input_dim}"
        )
    lu, r_t, lv = sub.target
    h = ad.constant(sub.features)
    per_layer: list[Tensor] = []
    for layer in range(cfg.num_layers):
        mask = dropout_masks[layer] if dropout_masks is not None else None
        h = layer_forward(sub, h, layer, params, cfg, dropout_mask=mask)
        per_layer.append(h)
    e_rt = ad.slice_rows(params.target_rel_emb, [r_t])
    chosen = per_layer if cfg.jk_enabled else per_layer[-1:]
    blocks = []
    for h_k in chosen:
        blocks.append(
            ad.concat([ad.mean_rows(h_k), ad.slice_rows(h_k, [lu]), ad.slice_rows(h_k, [lv]), e_rt])
        )
    readout = ad.concat(blocks) if len(blocks) > 1 else blocks[0]
    return ad.matmul(readout, params.readout_w)
