"""Dense residual reconstruction networks ``f(y) = A^+ y + G_res(A^+ y)``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph
from .linops import DimensionError, LinearOperator
from .tensor_io import ParseError, format_tensor, parse_tensor


@dataclass
class MLP:
    """Fully connected net with leaky-ReLU between layers.

    ``params`` interleaves weights ``(out, in)`` and biases ``(out,)``.
    With ``residual=True`` the input is added to the output.
    """

    dims: list[int]
    params: list[np.ndarray]
    residual: bool = True

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def attach(self, graph: Graph) -> list[int]:
        """Register the parameters as trainable leaves of ``graph``."""
        return [graph.leaf(p) for p in self.params]

    def forward(self, graph: Graph, param_ids: list[int], x: int) -> int:
        h = x
        n_layers = len(param_ids) // 2
        for layer in range(n_layers):
            w, b = param_ids[2 * layer], param_ids[2 * layer + 1]
            h = graph.add(graph.matvec(w, h), b)
            if layer < n_layers - 1:
                h = graph.leaky_relu(h)
        return graph.add(x, h) if self.residual else h

    def zeroed(self) -> "MLP":
        return MLP(list(self.dims), [np.zeros_like(p) for p in self.params], self.residual)

    def copy(self) -> "MLP":
        return MLP(list(self.dims), [p.copy() for p in self.params], self.residual)


ReconstructionModel = MLP


def init_mlp(dims, rng: np.random.Generator, residual: bool = True,
             output_scale: float = 1.0) -> MLP:
    """Uniform fan-in weights, zero biases.

    ``output_scale`` multiplies the last layer's weights after drawing, so the
    random stream does not depend on it; 0 makes a residual net start at
    ``A^+ y`` exactly.
    """
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims) or len(dims) < 2:
        raise ValueError(f"layer widths must be >= 1, got {dims}")
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params.append(np.zeros(fan_out))
    params[-2] = params[-2] * output_scale
    return MLP(dims, params, residual)


def init_model(n: int, hidden=None, seed: int = 0) -> MLP:
    """Residual model ``R^n -> R^n``; hidden widths default to ``[4n, 4n]``."""
    hidden = [4 * n, 4 * n] if hidden is None else list(hidden)
    return init_mlp([n, *hidden, n], np.random.default_rng(seed), residual=True)


def reconstruct(model: MLP, A: LinearOperator, y, graph: Graph, param_ids=None) -> int:
    """Append ``A^+ y + G_res(A^+ y)`` to ``graph`` and return its node id.

    ``A^+ y`` enters as a constant leaf.  Pass ``param_ids`` to reuse one set of
    parameter leaves across several reconstructions in the same graph.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != A.m:
        raise DimensionError(f"measurement length {y.shape[-1]} does not match operator m={A.m}")
    if model.dims[0] != A.n or model.dims[-1] != A.n:
        raise DimensionError(f"model dims {model.dims} incompatible with operator n={A.n}")
    if param_ids is None:
        param_ids = model.attach(graph)
    u = graph.constant(A.pinv_apply(y))
    return model.forward(graph, param_ids, u)


def predict(model: MLP, A: LinearOperator, y) -> np.ndarray:
    graph = Graph()
    return graph.value(reconstruct(model, A, y, graph)).copy()


# -- weights file ------------------------------------------------------------

def format_weights(model: MLP) -> str:
    head = "layers: " + " ".join(str(d) for d in model.dims) + "\n"
    head += f"residual: {str(model.residual).lower()}\n"
    return head + "".join(format_tensor(p) for p in model.params)


def save_weights(model: MLP, path) -> None:
    Path(path).write_text(format_weights(model))


def parse_weights(text: str) -> MLP:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("layers:"):
        raise ParseError("expected 'layers:' header", 1)
    try:
        dims = [int(t) for t in lines[0][len("layers:"):].split()]
    except ValueError:
        raise ParseError("layer widths must be integers", 1) from None
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ParseError(f"invalid layer widths {dims}", 1)
    pos = 1
    residual = True
    if pos < len(lines) and lines[pos].startswith("residual:"):
        flag = lines[pos].split(":", 1)[1].strip()
        if flag not in ("true", "false"):
            raise ParseError(f"residual must be true or false, got {flag!r}", pos + 1)
        residual = flag == "true"
        pos += 1
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for expected in ((fan_out, fan_in), (fan_out,)):
            header_line = pos + 1
            arr, pos = parse_tensor(lines, pos)
            if arr.shape != expected:
                raise ParseError(f"tensor shape {arr.shape} does not match layers header {expected}", header_line)
            params.append(arr)
    if any(line.strip() for line in lines[pos:]):
        raise ParseError("trailing content after last tensor", pos + 1)
    return MLP(dims, params, residual)


def load_weights(path, n: int | None = None) -> MLP:
    model = parse_weights(Path(path).read_text())
    if n is not None and (model.dims[0] != n or model.dims[-1] != n):
        raise DimensionError(f"weights file describes dims {model.dims}, expected input/output {n}")
    return model
