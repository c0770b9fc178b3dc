"""Small objectives with closed-form gradients.

Both problem types expose the same protocol used by the harness and the
finite-difference checker:

* ``params``: ordered ``dict`` of name -> array (the trainable state)
* ``loss_grad(params=None) -> (loss, {name: grad})``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox4x64 generator; portable across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class QuadraticProblem:
    """``loss = 0.5 * ||A W B - C||_F^2`` over the trainable ``W``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        p, m = self.a.shape
        n, q = self.b.shape
        if self.w.shape != (m, n) or self.c.shape != (p, q):
            raise ShapeError(
                f"inconsistent quadratic shapes: A {self.a.shape}, W {self.w.shape}, "
                f"B {self.b.shape}, C {self.c.shape}"
            )

    @property
    def params(self) -> dict:
        return {"W": self.w}

    @params.setter
    def params(self, values: dict):
        self.w = values["W"]

    def loss_grad(self, params: dict | None = None):
        w = self.w if params is None else params["W"]
        resid = self.a @ w @ self.b - self.c
        loss = 0.5 * float(np.sum(resid * resid))
        return loss, {"W": self.a.T @ resid @ self.b.T}


def quadratic_loss_grad(prob: QuadraticProblem):
    loss, grads = prob.loss_grad()
    return loss, grads["W"]


def matrix_with_condition(rng, rows: int, cols: int, kappa: float) -> np.ndarray:
    """Random ``rows x cols`` matrix with log-spaced singular values in ``[1/kappa, 1]``."""
    k = min(rows, cols)
    spectrum = np.logspace(0.0, -np.log10(kappa), k) if k > 1 else np.ones(1)
    left = random_orthogonal(rng, rows)[:, :k]
    right = random_orthogonal(rng, cols)[:, :k]
    return (left * spectrum) @ right.T


def quadratic_with_condition(
    kappa: float,
    m: int = 128,
    n: int = 128,
    seed: int = 0,
    p: int | None = None,
    q: int | None = None,
    b_kappa: float = 1.0,
    noise: float = 0.0,
    init_scale: float = 0.0,
) -> QuadraticProblem:
    """Quadratic whose ``A`` has condition number exactly ``kappa``.

    The target is ``C = A W* B (+ noise)`` for a Gaussian ``W*``, so the
    optimum loss is zero when ``noise == 0`` and ``A``, ``B`` are square.
    """
    p = m if p is None else p
    q = n if q is None else q
    rng = make_rng(seed)
    a = matrix_with_condition(rng, p, m, kappa)
    b = matrix_with_condition(rng, n, q, b_kappa)
    w_star = rng.standard_normal((m, n))
    c = a @ w_star @ b
    if noise > 0:
        c = c + noise * rng.standard_normal(c.shape)
    w0 = init_scale * rng.standard_normal((m, n))
    return QuadraticProblem(a=a, b=b, c=c, w=w0)


@dataclass
class MlpProblem:
    """One-hidden-layer tanh network fit to a fixed teacher-generated batch.

    ``loss = sum((y_hat - y)^2) / batch``, i.e. the batch mean of the squared
    Euclidean error.
    """

    w1: np.ndarray  # h x d
    w2: np.ndarray  # o x h
    bias1: np.ndarray  # h
    bias2: np.ndarray  # o
    x: np.ndarray  # batch x d
    y: np.ndarray  # batch x o
    teacher: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def params(self) -> dict:
        return {"W1": self.w1, "b1": self.bias1, "W2": self.w2, "b2": self.bias2}

    @params.setter
    def params(self, values: dict):
        self.w1, self.bias1 = values["W1"], values["b1"]
        self.w2, self.bias2 = values["W2"], values["b2"]

    def loss_grad(self, params: dict | None = None):
        p = self.params if params is None else params
        batch = self.x.shape[0]
        pre = self.x @ p["W1"].T + p["b1"]
        hidden = np.tanh(pre)
        out = hidden @ p["W2"].T + p["b2"]
        err = out - self.y
        loss = float(np.sum(err * err)) / batch
        d_out = (2.0 / batch) * err
        d_hidden = (d_out @ p["W2"]) * (1.0 - hidden * hidden)
        grads = {
            "W1": d_hidden.T @ self.x,
            "b1": d_hidden.sum(axis=0),
            "W2": d_out.T @ hidden,
            "b2": d_out.sum(axis=0),
        }
        return loss, grads


def mlp_loss_grad(prob: MlpProblem):
    return prob.loss_grad()


def mlp_problem(
    seed: int = 0,
    d: int = 32,
    h: int = 64,
    o: int = 16,
    batch: int = 256,
    noise: float = 0.01,
    init_scale: float = 1.0,
) -> MlpProblem:
    """Student network plus a dataset labelled by a seeded teacher of the same shape.

    Weights use ``init_scale / sqrt(fan_in)`` Gaussian initialization.
    """
    rng = make_rng(seed)
    teacher = {
        "W1": rng.standard_normal((h, d)) / np.sqrt(d),
        "b1": 0.1 * rng.standard_normal(h),
        "W2": rng.standard_normal((o, h)) / np.sqrt(h),
        "b2": 0.1 * rng.standard_normal(o),
    }
    x = rng.standard_normal((batch, d))
    y = np.tanh(x @ teacher["W1"].T + teacher["b1"]) @ teacher["W2"].T + teacher["b2"]
    if noise > 0:
        y = y + noise * rng.standard_normal(y.shape)
    return MlpProblem(
        w1=init_scale * rng.standard_normal((h, d)) / np.sqrt(d),
        w2=init_scale * rng.standard_normal((o, h)) / np.sqrt(h),
        bias1=np.zeros(h),
        bias2=np.zeros(o),
        x=x,
        y=y,
        teacher=teacher,
    )


def finite_diff_check(problem, h: float = 1e-6) -> float:
    """Worst relative deviation of the analytic gradient from central differences.

    For each parameter the error is ``max|fd - g| / max|g|`` (entries of that
    parameter); the result is the maximum over parameters.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in problem.params.items()}
    _, grads = problem.loss_grad(base)
    worst = 0.0
    for name, value in base.items():
        flat = value.reshape(-1)
        g = grads[name].reshape(-1)
        fd = np.empty_like(g)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = problem.loss_grad(base)
            flat[idx] = orig - h
            down, _ = problem.loss_grad(base)
            flat[idx] = orig
            fd[idx] = (up - down) / (2.0 * h)
        scale = max(float(np.max(np.abs(g))), np.finfo(np.float64).tiny)
        worst = max(worst, float(np.max(np.abs(fd - g))) / scale)
    return worst
