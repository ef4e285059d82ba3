"""Graph branch: one round of bipartite message passing between humans and objects.

Edge weights are the pairs' interaction-proposal scores, used without
normalisation.
"""
from __future__ import annotations

from dataclasses import dataclass

from .numcore import functional as fn
from .numcore.layers import LayerParams
from .numcore.tensor import ShapeError, Tensor, add, as_tensor, concat, matmul, sigmoid, transpose


@dataclass
class InteractionGraph:
    humans: Tensor  # H x R
    objects: Tensor  # O x R
    alpha: Tensor  # H x O; alpha[h, o] is both the h->o and o->h edge

    @property
    def num_edges(self) -> int:
        return int(self.alpha.shape[0] * self.alpha.shape[1])


def build_graph(f_h: Tensor, f_o: Tensor, alpha: Tensor) -> InteractionGraph:
    f_h, f_o, alpha = as_tensor(f_h), as_tensor(f_o), as_tensor(alpha)
    if f_h.ndim != 2 or f_o.ndim != 2:
        raise ShapeError("node features must be stacked as rows")
    if alpha.shape != (f_h.shape[0], f_o.shape[0]):
        raise ShapeError(f"adjacency shape {alpha.shape} != ({f_h.shape[0]}, {f_o.shape[0]})")
    # closed interval: single-precision sigmoids saturate to exactly 0 or 1
    if alpha.size and ((alpha.data < 0).any() or (alpha.data > 1).any()):
        raise ValueError("adjacency entries must lie in [0, 1]")
    return InteractionGraph(f_h, f_o, alpha)


def propagate(g: InteractionGraph, w_oh: LayerParams, w_ho: LayerParams) -> tuple[Tensor, Tensor]:
    """Updated human and object features ``f + sum_j alpha * W(f_j)``."""
    if g.alpha.size == 0:
        return g.humans, g.objects
    to_humans = matmul(g.alpha, fn.fully_connected(g.objects, w_oh))
    to_objects = matmul(transpose(g.alpha), fn.fully_connected(g.humans, w_ho))
    return add(g.humans, to_humans), add(g.objects, to_objects)


def predict_graph(f_h: Tensor, f_o: Tensor, head: LayerParams) -> Tensor:
    f_h, f_o = as_tensor(f_h), as_tensor(f_o)
    if f_h.shape != f_o.shape:
        raise ShapeError(f"predict_graph: shapes {f_h.shape} and {f_o.shape} differ")
    return sigmoid(fn.fully_connected(concat([f_h, f_o], axis=-1), head))


def edges(g: InteractionGraph) -> list[tuple[int, int]]:
    h, o = g.alpha.shape
    return [(a, b) for a in range(h) for b in range(o)]
