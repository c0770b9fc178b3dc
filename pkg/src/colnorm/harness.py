"""Deterministic experiment runner: training loops, lemma checks, comparisons."""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics, linalg, models, optim
from .config import CompareConfig, ExperimentConfig, ProblemConfig, RunConfig, flatten
from .diagnostics import RunLog, ScalarRow
from .errors import ColnormError, NumericalError, RankDeficientError

log = logging.getLogger(__name__)

RNG_NAME = "philox4x64 (numpy.random.Philox)"
LEMMA_TOL = 1e-10
LEMMA_SHAPES = ((4, 6), (6, 4), (5, 5))


def build_problem(pcfg: ProblemConfig, seed: int):
    p = dict(pcfg.params)
    if pcfg.kind == "quadratic":
        return models.quadratic_with_condition(
            kappa=p["kappa"], m=p["m"], n=p["n"], seed=seed,
            p=p["p"] or None, q=p["q"] or None, b_kappa=p["b_kappa"],
            noise=p["noise"], init_scale=p["init_scale"],
        )
    if pcfg.kind == "mlp":
        return models.mlp_problem(
            seed=seed, d=p["d"], h=p["h"], o=p["o"], batch=p["batch"],
            noise=p["noise"], init_scale=p["init_scale"],
        )
    raise ValueError(f"unknown problem type {pcfg.kind!r}")


def scheduled_lr(base_lr: float, step: int, total: int, kind: str = "constant", warmup_fraction: float = 0.0) -> float:
    """Learning rate at 1-based ``step``.

    ``cosine_with_warmup``: linear warmup over ``ceil(f * total)`` steps, then
    cosine decay reaching 10% of ``base_lr`` at the final step.
    """
    if kind == "constant":
        return base_lr
    warm = math.ceil(warmup_fraction * total)
    if step <= warm:
        return base_lr * step / warm
    span = total - warm
    progress = (step - warm) / span
    return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * progress)))


def clip_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        grads = {k: g * factor for k, g in grads.items()}
    return grads, total


def route(params: dict, optimizer: str) -> dict:
    """2D parameters go to ``optimizer``; everything else to AdamW."""
    return {k: (optimizer if np.ndim(v) == 2 else "adamw") for k, v in params.items()}


def steps_to_threshold(losses, threshold: float):
    """Number of updates until loss first drops to ``threshold * losses[0]`` (None if never)."""
    if not losses:
        return None
    target = threshold * losses[0]
    for k, loss in enumerate(losses):
        if loss <= target:
            return k
    return None


def run_experiment(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> RunLog:
    run = cfg.run
    problem = build_problem(cfg.problem, run.seed)
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in problem.params.items()}
    routes = route(params, cfg.optimizer)
    slots = {k: optim.new_slot(v.shape, routes[k]) for k, v in params.items()}

    meta = flatten(cfg)
    meta["rng"] = RNG_NAME
    meta["seed"] = str(run.seed)
    meta.update({f"route.{k}": v for k, v in routes.items()})
    runlog = RunLog(config=meta)

    for t in range(1, run.steps + 1):
        loss, grads = problem.loss_grad(params)
        if not math.isfinite(loss):
            raise NumericalError(f"step {t}: non-finite loss")
        runlog.losses.append(loss)
        grads, _ = clip_global_norm(grads, run.grad_clip)
        step_cfg = cfg.opt.replace(
            lr=scheduled_lr(cfg.opt.lr, t, run.steps, run.lr_schedule, run.warmup_fraction)
        )
        log_scalars = t % run.scalar_stride == 0 or t == run.steps
        log_spectra = t % run.spectral_stride == 0 or t == run.steps
        for name, w in params.items():
            try:
                w_new, report = optim.STEPPERS[routes[name]](w, grads[name], slots[name], step_cfg)
            except ColnormError as exc:
                raise type(exc)(f"step {t}, param {name}: {exc}") from exc
            if not np.all(np.isfinite(w_new)):
                raise NumericalError(f"step {t}, param {name}: non-finite weights")
            params[name] = w_new
            ln_cond = None
            if log_spectra and np.ndim(w) == 2:
                rec = diagnostics.record_spectrum(t, name, report.update_matrix, run.rank_tol)
                runlog.spectra.append(rec)
                ln_cond = rec.ln_cond
            if log_scalars:
                upd = report.update_matrix
                runlog.add_scalar(ScalarRow(
                    step=t, param_id=name, loss=loss,
                    grad_norm=float(np.linalg.norm(grads[name])),
                    update_rms=float(np.sqrt(np.mean(upd * upd))),
                    ln_cond=ln_cond,
                ))
    final_loss, _ = problem.loss_grad(params)
    runlog.losses.append(final_loss)
    problem.params = params

    stt = steps_to_threshold(runlog.losses, run.threshold)
    meta["result.final_loss"] = diagnostics.fmt(final_loss)
    meta["result.steps_to_threshold"] = diagnostics.fmt(math.inf if stt is None else stt)

    if write:
        diagnostics.write_csv(runlog, out_dir if out_dir is not None else run.output_dir)
    return runlog


@dataclass
class SummaryRow:
    optimizer: str
    best_lr: float
    steps_to_threshold: int | None
    final_loss: float
    median_ln_cond: float

    def cells(self) -> list[str]:
        stt = math.inf if self.steps_to_threshold is None else self.steps_to_threshold
        return [
            self.optimizer, diagnostics.fmt(self.best_lr), diagnostics.fmt(stt),
            diagnostics.fmt(self.final_loss), diagnostics.fmt(self.median_ln_cond),
        ]


def _lr_tag(lr: float) -> str:
    return "lr_" + diagnostics.fmt(lr)


def compare_optimizers(ccfg: CompareConfig, out_dir=None, write: bool = True) -> list[SummaryRow]:
    """Grid-search each optimizer's lr and summarize its best-final-loss run."""
    out = Path(out_dir if out_dir is not None else ccfg.run.output_dir)
    rows = []
    for entry in ccfg.entries:
        best = None
        for lr in entry.lr_grid:
            cfg = ExperimentConfig(
                problem=ccfg.problem, optimizer=entry.name,
                opt=entry.opt.replace(lr=lr), run=ccfg.run,
            )
            try:
                runlog = run_experiment(cfg, out / entry.name / _lr_tag(lr), write=write)
                final = runlog.losses[-1]
            except NumericalError as exc:
                log.warning("%s lr=%g diverged: %s", entry.name, lr, exc)
                continue
            if not math.isfinite(final):
                continue
            if best is None or final < best[1]:
                best = (lr, final, runlog)
        if best is None:
            rows.append(SummaryRow(entry.name, math.nan, None, math.inf, math.nan))
            continue
        lr, final, runlog = best
        conds = runlog.ln_conds()
        rows.append(SummaryRow(
            optimizer=entry.name, best_lr=lr,
            steps_to_threshold=steps_to_threshold(runlog.losses, ccfg.run.threshold),
            final_loss=final,
            median_ln_cond=float(np.median(conds)) if conds else math.nan,
        ))
    if write:
        os.makedirs(out, exist_ok=True)
        diagnostics._write_rows(out / "summary.csv", diagnostics.SUMMARY_HEADER, (r.cells() for r in rows))
    return rows


@dataclass
class LemmaCheck:
    name: str
    max_dev: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.max_dev <= LEMMA_TOL

    def line(self) -> str:
        if self.error is not None:
            return f"{self.name}: SKIP ({self.error})"
        status = "ok" if self.ok else "FAIL"
        return f"{self.name}: max_dev={self.max_dev:.3e} {status}"


def _lemma_matrix(rng, shape, rank_deficient: bool):
    m = rng.standard_normal(shape)
    if rank_deficient:
        m[-1] = m[0]
    return m


def verify_lemmas(seed: int = 0, trials: int = 1, rank_deficient: bool = False) -> list[LemmaCheck]:
    """Check both SVD forms of Muon against the polar factor, and both column-sum forms.

    ``rank_deficient`` is a test hook that feeds matrices with a repeated row.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = models.make_rng(seed)
    devs = {k: 0.0 for k in ("muon_svd_left", "muon_svd_right", "muon_svd_square_cross", "muon_columnwise", "conda_columnwise")}
    errors = {}

    def track(name, fn):
        if name in errors:
            return
        try:
            devs[name] = max(devs[name], float(fn()))
        except RankDeficientError as exc:
            errors[name] = str(exc)

    for _ in range(trials):
        for shape in LEMMA_SHAPES:
            m = _lemma_matrix(rng, shape, rank_deficient)
            rows, cols = shape
            polar = linalg.polar_orthogonal(m)
            if rows <= cols:
                track("muon_svd_left", lambda: np.max(np.abs(optim.muon_svd_direction(m, "left") - polar)))
                track("muon_columnwise", lambda: np.max(np.abs(
                    optim.muon_columnwise_direction(m) - optim.muon_svd_direction(m, "left"))))
            if rows >= cols:
                track("muon_svd_right", lambda: np.max(np.abs(optim.muon_svd_direction(m, "right") - polar)))
            if rows == cols:
                track("muon_svd_square_cross", lambda: np.max(np.abs(
                    optim.muon_svd_direction(m, "left") - optim.muon_svd_direction(m, "right"))))
        m = rng.standard_normal((4, 6))
        u = linalg.thin_svd(m).u
        n = rng.uniform(0.1, 2.0, size=(u.shape[1], m.shape[1]))
        fast = u @ ((u.T @ m) / np.sqrt(n))
        track("conda_columnwise", lambda: np.max(np.abs(optim.conda_columnwise_direction(m, n, u) - fast)))

    return [LemmaCheck(k, devs[k], errors.get(k)) for k in devs]


def grad_check(pcfg: ProblemConfig, h: float = 1e-6, seed: int = 0) -> float:
    return models.finite_diff_check(build_problem(pcfg, seed), h)


GRAD_CHECK_TOL = {"quadratic": 1e-7, "mlp": 1e-5}
