"""Classical (V)ARMA estimation and forecasting.

The estimator minimizes the conditional sum of squares (pre-sample residuals
zeroed) with a monotone-guarded Adam loop and multiple random starts; the
forecaster is a plain teacher-forced recursion over observed values and
recursively computed residuals, kept independent of the cell implementations
so the two can cross-check each other.

``fold_coefficients`` merges the AR and MA weights into the cell's input-lag
weights: lag i carries B[i] + G[i] while both exist, then whichever of the
two runs longer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, backward, forward
from .cells import ArmaLayerParams
from .tensor import Activation, ShapeError, Tensor

__all__ = [
    "ArmaCoefficients",
    "ClassicalFitError",
    "FitResult",
    "fold_coefficients",
    "unfold_coefficients",
    "coefficients_to_cell",
    "fit_css",
    "forecast",
]


class ClassicalFitError(RuntimeError):
    pass


@dataclass
class ArmaCoefficients:
    """AR/MA matrices for a k-dimensional process; scalars live as 1x1."""

    p: int
    q: int
    dim: int
    alpha: Tensor            # [k]
    beta: list[Tensor]       # p matrices [k x k]
    gamma: list[Tensor]      # q matrices [k x k]
    sigma2: Tensor           # innovation covariance [k x k]

    def validate(self) -> None:
        k = self.dim
        if self.alpha.shape != (k,):
            raise ShapeError(f"alpha shape {self.alpha.shape}, expected ({k},)")
        if len(self.beta) != self.p or len(self.gamma) != self.q:
            raise ValueError("coefficient list lengths must equal p and q")
        for m in list(self.beta) + list(self.gamma) + [self.sigma2]:
            if m.shape != (k, k):
                raise ShapeError(f"matrix shape {m.shape}, expected ({k}, {k})")

    def to_dict(self) -> dict:
        return {
            "p": self.p, "q": self.q, "dim": self.dim,
            "alpha": self.alpha.array.tolist(),
            "beta": [b.array.tolist() for b in self.beta],
            "gamma": [g.array.tolist() for g in self.gamma],
            "sigma2": self.sigma2.array.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmaCoefficients":
        out = cls(int(d["p"]), int(d["q"]), int(d["dim"]), Tensor(d["alpha"]),
                  [Tensor(b) for b in d["beta"]], [Tensor(g) for g in d["gamma"]],
                  Tensor(d["sigma2"]))
        out.validate()
        return out

    @classmethod
    def scalar(cls, beta=(), gamma=(), alpha: float = 0.0,
               sigma2: float = 1.0) -> "ArmaCoefficients":
        return cls(len(beta), len(gamma), 1, Tensor([alpha]),
                   [Tensor([[float(b)]]) for b in beta],
                   [Tensor([[float(g)]]) for g in gamma], Tensor([[sigma2]]))


def fold_coefficients(coefs: ArmaCoefficients) -> tuple[list[Tensor], list[Tensor], Tensor]:
    """Merge (B_i, G_j) into input-lag weights: B[i]+G[i] while both run,
    then the longer tail; feedback weights are the G_j unchanged."""
    coefs.validate()
    p, q, k = coefs.p, coefs.q, coefs.dim
    folded = []
    for i in range(1, max(p, q) + 1):
        if i <= min(p, q):
            folded.append(Tensor(coefs.beta[i - 1].array + coefs.gamma[i - 1].array))
        elif i <= p:
            folded.append(coefs.beta[i - 1])
        else:
            folded.append(coefs.gamma[i - 1])
    return folded, list(coefs.gamma), coefs.alpha


def unfold_coefficients(lag_weights: list[Tensor], feedback: list[Tensor],
                        alpha: Tensor, p: int, q: int,
                        sigma2: Tensor | None = None) -> ArmaCoefficients:
    """Invert the folding where possible: B_i = folded_i - G_i for the shared
    lags, B_i = folded_i beyond q."""
    k = alpha.shape[0]
    beta = []
    for i in range(1, p + 1):
        if i <= min(p, q):
            beta.append(Tensor(lag_weights[i - 1].array - feedback[i - 1].array))
        else:
            beta.append(lag_weights[i - 1])
    out = ArmaCoefficients(p, q, k, alpha, beta, list(feedback),
                           sigma2 if sigma2 is not None else Tensor(np.eye(k)))
    out.validate()
    return out


def coefficients_to_cell(coefs: ArmaCoefficients) -> ArmaLayerParams:
    """A k-unit linear layer computing exactly the reformulated recursion."""
    folded, feedback, alpha = fold_coefficients(coefs)
    return ArmaLayerParams(
        p=coefs.p, q=coefs.q, in_dim=coefs.dim, units=coefs.dim,
        lag_weights=folded, feedback_weights=feedback, bias=alpha,
        activations=[Activation.LINEAR] * coefs.dim)


def forecast(coefs: ArmaCoefficients, series: Tensor) -> Tensor:
    """Teacher-forced one-step predictions for t = max(p,q)..T-1.

    Residuals are computed recursively and zeroed before the first emitted
    step, the conditional-sum-of-squares convention.
    """
    coefs.validate()
    x = series.array
    if x.ndim != 2 or x.shape[1] != coefs.dim:
        raise ShapeError(f"series shape {x.shape} does not match dim {coefs.dim}")
    m = max(coefs.p, coefs.q)
    if x.shape[0] <= m:
        raise ShapeError(f"series too short: length {x.shape[0]}, need > {m}")
    alpha = coefs.alpha.array
    bs = [b.array for b in coefs.beta]
    gs = [g.array for g in coefs.gamma]
    n = x.shape[0]
    eps = np.zeros((n, coefs.dim))
    preds = np.empty((n - m, coefs.dim))
    for t in range(m, n):
        v = alpha.copy()
        for i, b in enumerate(bs, start=1):
            v = v + b @ x[t - i]
        for j, g in enumerate(gs, start=1):
            if t - j >= m:
                v = v + g @ eps[t - j]
        preds[t - m] = v
        eps[t] = x[t] - v
    return Tensor(preds)


# ---------------------------------------------------------------------------
# conditional-sum-of-squares fitting


@dataclass
class StartReport:
    seed_index: int
    css: float
    iterations: int
    diverged: bool


@dataclass
class FitResult:
    coefficients: ArmaCoefficients
    css: float
    trajectory: list[float]
    start_reports: list[StartReport] = field(default_factory=list)


def _build_css_graph(p: int, q: int, k: int, chunk_len: int):
    """Residual recursion over a chunk batch; returns graph and handles."""
    g = Graph()
    steps = [g.input(name=f"x{t}") for t in range(chunk_len)]
    alpha = g.parameter(np.zeros(k), name="alpha")
    b_nodes = [g.parameter(np.zeros((k, k)), name=f"b{i}") for i in range(p)]
    g_nodes = [g.parameter(np.zeros((k, k)), name=f"g{j}") for j in range(q)]
    m = max(p, q)
    eps_nodes: dict[int, int] = {}
    total = None
    for t in range(m, chunk_len):
        pred = alpha
        for i in range(1, p + 1):
            pred = g.add(g.matmul(steps[t - i], b_nodes[i - 1]), pred)
        for j in range(1, q + 1):
            if t - j in eps_nodes:
                pred = g.add(g.matmul(eps_nodes[t - j], g_nodes[j - 1]), pred)
        eps = g.sub(steps[t], pred)
        eps_nodes[t] = eps
        sse = g.sum(g.square(eps))
        total = sse if total is None else g.add(total, sse)
    scale = g.input(name="scale")
    loss = g.mul(total, scale)
    params = [alpha] + b_nodes + g_nodes
    return g, steps, scale, loss, params, eps_nodes


def _chunk_series(x: np.ndarray, target_len: int = 250):
    n = x.shape[0]
    n_chunks = max(1, n // target_len)
    chunk_len = n // n_chunks
    used = n_chunks * chunk_len
    return x[:used].reshape(n_chunks, chunk_len, x.shape[1])


def _adam_css(graph, steps, scale, loss, params, chunks, lr, max_iter, tol):
    """Adam with a monotone guard: a step that raises the objective beyond
    ``tol`` is rolled back and the learning rate halved, so the recorded
    trajectory is non-increasing by construction."""
    bindings = {nid: chunks[:, t, :] for t, nid in enumerate(steps)}
    n_resid = chunks.shape[0] * (chunks.shape[1] - 1) * chunks.shape[2]
    bindings[scale] = np.asarray(1.0 / n_resid)

    def evaluate() -> float:
        return forward(graph, bindings, output=loss).item()

    current = evaluate()
    if not np.isfinite(current):
        return [current], 0
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    moments = {pid: (np.zeros_like(graph.parameter_value(pid)),
                     np.zeros_like(graph.parameter_value(pid))) for pid in params}
    trajectory = [current]
    t_step = 0
    stall = 0
    for _ in range(max_iter):
        grads = backward(graph, loss)
        if any(not np.all(np.isfinite(grads[pid].array)) for pid in params):
            trajectory.append(float("nan"))
            break
        t_step += 1
        saved = {pid: graph.parameter_value(pid).copy() for pid in params}
        saved_m = {pid: (m.copy(), v.copy()) for pid, (m, v) in moments.items()}
        while True:
            for pid in params:
                m, v = moments[pid]
                gr = grads[pid].array
                m[:] = beta1 * m + (1 - beta1) * gr
                v[:] = beta2 * v + (1 - beta2) * gr * gr
                m_hat = m / (1 - beta1 ** t_step)
                v_hat = v / (1 - beta2 ** t_step)
                graph.set_parameter(pid, saved[pid] - lr * m_hat / (np.sqrt(v_hat) + eps_adam))
            candidate = evaluate()
            if np.isfinite(candidate) and candidate <= current + 1e-9:
                break
            for pid in params:  # roll back and try a smaller step
                graph.set_parameter(pid, saved[pid])
                moments[pid][0][:] = saved_m[pid][0]
                moments[pid][1][:] = saved_m[pid][1]
            lr *= 0.5
            if lr < 1e-10:
                return trajectory, t_step
        stall = stall + 1 if current - candidate < tol * max(1.0, abs(current)) else 0
        current = candidate
        trajectory.append(current)
        if stall >= 25:
            break
    return trajectory, t_step


def fit_css(series: Tensor, p: int, q: int, seed: int = 0, n_starts: int = 5,
            lr: float = 0.05, max_iter: int = 400, tol: float = 1e-11) -> FitResult:
    """Estimate (V)ARMA coefficients by conditional sum of squares.

    Runs ``n_starts`` Adam minimizations from deterministic random starts and
    keeps the best final objective; the innovation covariance is the residual
    covariance at the optimum. Raises when every start diverges.
    """
    x = series.array
    if x.ndim != 2:
        raise ShapeError(f"series must be [T x k], got {x.shape}")
    k = x.shape[1]
    m = max(p, q)
    if x.shape[0] < 10 * (p + q + 1):
        raise ValueError(f"series of {x.shape[0]} steps is too short to fit "
                         f"ARMA({p},{q})")
    chunks = _chunk_series(x)
    graph, steps, scale, loss, params, eps_nodes = _build_css_graph(
        p, q, k, chunks.shape[1])

    best = None
    reports = []
    for s in range(n_starts):
        if s == 0:
            init = [np.zeros(k)] + [np.zeros((k, k)) for _ in range(p + q)]
        else:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, s))))
            init = [rng.uniform(-0.3, 0.3, size=k)] \
                + [rng.uniform(-0.3, 0.3, size=(k, k)) for _ in range(p + q)]
        for pid, val in zip(params, init):
            graph.set_parameter(pid, val)
        trajectory, iters = _adam_css(graph, steps, scale, loss, params,
                                      chunks, lr, max_iter, tol)
        css = trajectory[-1]
        diverged = not np.isfinite(css)
        reports.append(StartReport(s, css, iters, diverged))
        if not diverged and (best is None or css < best[0]):
            values = [graph.parameter_value(pid).copy() for pid in params]
            best = (css, values, trajectory)
    if best is None:
        raise ClassicalFitError(
            "all starts diverged: " + "; ".join(
                f"start {r.seed_index}: css={r.css}" for r in reports))

    css, values, trajectory = best
    for pid, val in zip(params, values):
        graph.set_parameter(pid, val)
    bindings = {nid: chunks[:, t, :] for t, nid in enumerate(steps)}
    bindings[scale] = np.asarray(1.0)
    forward(graph, bindings, output=loss)
    resid = np.concatenate([graph.nodes[nid].value for nid in eps_nodes.values()])
    sigma2 = resid.T @ resid / resid.shape[0]

    alpha = Tensor(values[0])
    # graph matmul layout is x @ B^T-transposed, so stored matrices transpose back
    beta = [Tensor(values[1 + i].T) for i in range(p)]
    gamma = [Tensor(values[1 + p + j].T) for j in range(q)]
    coefs = ArmaCoefficients(p, q, k, alpha, beta, gamma, Tensor(sigma2))
    _warn_on_roots(coefs)
    return FitResult(coefs, css, trajectory, reports)


def _companion_max_root(mats: list[np.ndarray], k: int) -> float:
    n = len(mats)
    if n == 0:
        return 0.0
    comp = np.zeros((n * k, n * k))
    comp[:k] = np.hstack(mats)
    if n > 1:
        comp[k:, :-k] = np.eye((n - 1) * k)
    return float(np.max(np.abs(np.linalg.eigvals(comp)))) if comp.size else 0.0


def _warn_on_roots(coefs: ArmaCoefficients) -> None:
    ar = _companion_max_root([b.array for b in coefs.beta], coefs.dim)
    ma = _companion_max_root([g.array for g in coefs.gamma], coefs.dim)
    if ar >= 1.0:
        warnings.warn(f"fitted AR part is non-stationary (companion root {ar:.3f})")
    if ma >= 1.0:
        warnings.warn(f"fitted MA part is non-invertible (companion root {ma:.3f})")
