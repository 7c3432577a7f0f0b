"""
Pool-based Bayesian optimization over persistence diagrams.

The search space is a finite pool whose kernel matrices are computed up
front. Each step refits the GP on the observed rows (noise variance,
kernel hyperparameters and combination weights are re-estimated), scores
every unobserved pool member by expected improvement, and evaluates the
best one. :func:`run_random` is the matching random-search baseline and
:func:`aucc` the area-under-the-convergence-curve metric used to compare
them.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gp
from .mkl import AlignmentUndefined, MklWeights, unit_scales, combine, mle_weights, solve_alignment_qp
from .pd_kernels import KERNELS, RffEmbedding, gram, heuristics

logger = logging.getLogger(__name__)

DEGREE_SETS = {"h0": (0,), "h1": (1,), "both": (0, 1)}
MKL_MODES = ("none", "align", "mle")
MLE_ALTERNATIONS = 2


@dataclass(frozen=True)
class RunConfig:
    kernel: str = "pwgk_linear"
    degrees: str = "h1"
    mkl: str = "none"
    n_init: int = 10
    n_steps: int = 100
    noise_sd: float = 0.0
    repeats: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if self.degrees not in DEGREE_SETS:
            raise ValueError(f"degrees must be one of {tuple(DEGREE_SETS)}")
        if self.mkl not in MKL_MODES:
            raise ValueError(f"mkl must be one of {MKL_MODES}")
        if self.mkl != "none" and self.degrees != "both":
            raise ValueError("multiple kernel learning needs degrees='both'")
        if self.n_init < 1 or self.n_steps < 0 or self.repeats < 1:
            raise ValueError("n_init >= 1, n_steps >= 0 and repeats >= 1 are required")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def variant(self) -> str:
        if self.mkl != "none":
            return self.mkl
        return {"h0": "0th", "h1": "1st", "both": "sum"}[self.degrees]

    @property
    def name(self) -> str:
        return f"{self.kernel}:{self.variant}"


@dataclass(frozen=True)
class Candidate:
    """One fully specified Gram matrix over the pool."""

    desc: str
    K: np.ndarray = field(repr=False)


@dataclass
class BOPool:
    """Pool ids and labels plus Gram candidates per (kernel, degree)."""

    ids: list
    labels: np.ndarray
    channels: dict = field(default_factory=dict)
    name: str = "pool"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float)
        if len(self.ids) != self.labels.size:
            raise ValueError("ids and labels differ in length")

    def __len__(self) -> int:
        return self.labels.size

    def add_channel(self, kernel: str, degree: int, candidates: Sequence[Candidate]) -> None:
        n = len(self)
        for c in candidates:
            if c.K.shape != (n, n):
                raise ValueError(f"{c.desc}: Gram shape {c.K.shape}, pool size {n}")
        self.channels[(kernel, degree)] = list(candidates)

    @property
    def target(self) -> float:
        return float(self.labels.min())


def build_pool(
    ids,
    labels,
    diagrams: dict,
    kernels: Sequence[str] = ("pwgk_linear",),
    rff_features: Optional[int] = None,
    rff_seed: int = 0,
    name: str = "pool",
) -> BOPool:
    """Compute heuristic hyperparameters and Gram candidates for every channel.

    ``diagrams`` maps a homology degree to the list of pool diagrams. PWGK
    channels get one Gram matrix; PFK channels get one per grid point.
    """
    pool = BOPool(list(ids), labels, name=name)
    for degree, dgms in sorted(diagrams.items()):
        need_pfk = "pfk" in kernels
        h = heuristics(dgms, include_pfk=need_pfk)
        logger.info("degree %d heuristics: %s", degree, h.pwgk)
        rff = RffEmbedding.build(rff_features, h.pwgk.nu, rff_seed) if rff_features else None
        for kernel in kernels:
            if kernel == "pfk":
                cands = [
                    Candidate(f"pfk(nu={p.nu:g},t={p.t:.6g})", np.exp(-p.t * h.pfk_distances[p.nu]))
                    for p in h.pfk_grid
                ]
            else:
                cands = [Candidate(f"{kernel}({h.pwgk})", gram(dgms, kernel, h.pwgk, rff=rff))]
            pool.add_channel(kernel, degree, cands)
    return pool


@dataclass(frozen=True)
class TraceStep:
    step: int
    index: int
    chosen_id: str
    observed_y: float
    best_so_far: float


@dataclass
class BOTrace:
    seed: int
    kernel_desc: str
    steps: list = field(default_factory=list)
    aucc: float = float("nan")
    target: float = float("nan")
    truncated: bool = False
    #: per-step diagnostics: noise variance, weights, selected candidates, max EI
    diagnostics: list = field(default_factory=list)

    def best_by_step(self) -> np.ndarray:
        """Best-so-far at the end of step 0 (initial design), 1, 2, ..."""
        last = {}
        for s in self.steps:
            last[s.step] = s.best_so_far
        return np.array([last[k] for k in sorted(last)])

    @property
    def chosen_ids(self) -> list:
        return [s.chosen_id for s in self.steps]


def aucc(trace: BOTrace, target: float) -> float:
    """Sum over steps (initial design included as step 0) of ``best - target``."""
    best = trace.best_by_step()
    if best.size and best.min() < target - 1e-12 * max(1.0, abs(target)):
        raise ValueError("target exceeds an observed best value")
    return float(np.sum(best - target))


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1, dtype=np.uint32)[0])


class _Observer:
    """Draws the initial design and noisy observations from one seeded stream."""

    def __init__(self, pool: BOPool, cfg: RunConfig, seed: int):
        if len(pool) <= cfg.n_init:
            raise ValueError(f"pool of {len(pool)} is too small for n_init={cfg.n_init}")
        self.pool, self.cfg = pool, cfg
        self.rng = np.random.default_rng(seed)
        self.trace = BOTrace(seed=seed, kernel_desc=cfg.name if cfg else "", target=pool.target)
        self.observed: list[int] = []
        self.y: list[float] = []
        self.best = np.inf

    def observe(self, idx: int, step: int) -> None:
        noise = self.rng.standard_normal()
        val = float(self.pool.labels[idx] + self.cfg.noise_sd * noise)
        self.observed.append(int(idx))
        self.y.append(val)
        self.best = min(self.best, val)
        self.trace.steps.append(TraceStep(step, int(idx), str(self.pool.ids[idx]), val, self.best))

    def initialize(self) -> None:
        init = self.rng.choice(len(self.pool), size=self.cfg.n_init, replace=False)
        for idx in init:
            self.observe(int(idx), 0)

    def unobserved(self) -> np.ndarray:
        mask = np.ones(len(self.pool), dtype=bool)
        mask[self.observed] = False
        return np.flatnonzero(mask)

    def finish(self) -> BOTrace:
        tr = self.trace
        # the pool optimum bounds every noiseless best; with noise use the smaller one
        tr.target = min(self.pool.target, min(self.y))
        tr.aucc = aucc(tr, tr.target)
        return tr


def _select_candidate(cands: Sequence[Candidate], obs: np.ndarray, y: np.ndarray):
    """Candidate with the largest marginal likelihood on the observed block."""
    if len(cands) == 1:
        return cands[0]
    best, best_ll = None, -np.inf
    for c in cands:
        K = c.K[np.ix_(obs, obs)]
        try:
            s2 = gp.mle_noise(K, y)
            ll = gp.log_likelihood(K, y, s2)
        except gp.GPNumericalError:
            continue
        if ll > best_ll:
            best, best_ll = c, ll
    if best is None:
        raise gp.GPNumericalError("no kernel candidate admits a valid factorization")
    return best


def run_bo(pool: BOPool, cfg: RunConfig, seed: Optional[int] = None) -> BOTrace:
    seed = cfg.seed if seed is None else seed
    degrees = DEGREE_SETS[cfg.degrees]
    channels = [pool.channels[(cfg.kernel, d)] for d in degrees]
    ob = _Observer(pool, cfg, seed)
    ob.initialize()
    alpha = None
    for step in range(1, cfg.n_steps + 1):
        cand = ob.unobserved()
        if cand.size == 0:
            ob.trace.truncated = True
            logger.warning("pool exhausted after %d steps", step - 1)
            break
        obs = np.array(ob.observed)
        y = np.array(ob.y)
        chosen = [_select_candidate(ch, obs, y) for ch in channels]
        Ks_full = [c.K for c in chosen]
        Ks_obs = [K[np.ix_(obs, obs)] for K in Ks_full]
        diag = {"step": step, "kernels": [c.desc for c in chosen]}

        if len(Ks_full) == 1:
            weights = np.ones(1)
            noise_var = gp.mle_noise(Ks_obs[0], y)
        elif cfg.mkl == "none":
            weights = np.full(len(Ks_full), 1.0 / len(Ks_full))
            noise_var = gp.mle_noise(combine(Ks_obs, weights), y)
        elif cfg.mkl == "align":
            try:
                weights = solve_alignment_qp(Ks_obs, y).alpha
            except AlignmentUndefined:
                weights = MklWeights.uniform(len(Ks_obs)).alpha
            noise_var = gp.mle_noise(combine(Ks_obs, weights), y)
        else:
            # first step: uniform weights on unit-diagonal kernels; later steps warm-start
            weights = alpha
            if weights is None:
                weights = MklWeights.uniform(len(Ks_obs)).alpha / unit_scales(Ks_obs)
            for _ in range(MLE_ALTERNATIONS):
                noise_var = gp.mle_noise(combine(Ks_obs, weights), y)
                weights = mle_weights(Ks_obs, y, noise_var, init=weights).alpha
            alpha = weights

        K_obs = combine(Ks_obs, weights)
        state = gp.fit(K_obs, y, noise_var, observed=obs)
        K_cross = combine([K[np.ix_(cand, obs)] for K in Ks_full], weights)
        k_diag = combine([np.diag(K)[cand][:, None] for K in Ks_full], weights).ravel()
        mu, var = gp.predict_many(state, K_cross, k_diag)
        ei = gp.expected_improvement(mu, np.sqrt(var), float(y.min()))
        # argmax returns the first maximizer and cand is ascending
        pick = int(cand[int(np.argmax(ei))])
        diag.update(noise_var=float(noise_var), weights=[float(w) for w in weights], max_ei=float(ei.max()))
        ob.trace.diagnostics.append(diag)
        ob.observe(pick, step)
    return ob.finish()


def run_random(pool: BOPool, cfg: RunConfig, seed: Optional[int] = None) -> BOTrace:
    seed = cfg.seed if seed is None else seed
    ob = _Observer(pool, cfg, seed)
    ob.trace.kernel_desc = "random"
    ob.initialize()
    for step in range(1, cfg.n_steps + 1):
        cand = ob.unobserved()
        if cand.size == 0:
            ob.trace.truncated = True
            break
        ob.observe(int(ob.rng.choice(cand)), step)
    return ob.finish()


# --- benchmark ----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    name: str
    kernel: str
    variant: str
    mean_aucc: float
    stderr: float
    ratio: float
    repeats: int


@dataclass
class BenchmarkResult:
    rows: list
    traces: dict

    def row(self, name: str) -> SummaryRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        head = f"{'method':<24}{'mean AUCC':>14}{'stderr':>12}{'ratio':>10}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.name:<24}{r.mean_aucc:>14.4f}{r.stderr:>12.4f}{r.ratio:>10.4f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "kernel", "variant", "mean_aucc", "stderr", "ratio", "repeats"])
            for r in self.rows:
                w.writerow([r.name, r.kernel, r.variant, repr(r.mean_aucc), repr(r.stderr),
                            f"{r.ratio:.4f}", r.repeats])

    def write_table(self, path, dataset: str = "pool") -> None:
        """Ratios laid out with one row per (kernel, variant), one column per dataset."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "variant", dataset])
            for r in self.rows:
                w.writerow([r.kernel, r.variant, f"{r.ratio:.4f}"])


def _summarize(name, kernel, variant, auccs):
    a = np.asarray(auccs, dtype=float)
    se = float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
    return name, kernel, variant, float(a.mean()), se, a.size


def benchmark(pool: BOPool, configs: Sequence[RunConfig], master_seed: int = 0,
              repeats: Optional[int] = None) -> BenchmarkResult:
    """Mean and standard error of AUCC per config, scaled by the random baseline.

    Repeat ``i`` of every method, the baseline included, uses the seed
    ``derive_seed(master_seed, i)``, so all methods share initial designs.
    """
    if not configs:
        raise ValueError("need at least one config")
    reps = repeats or max(c.repeats for c in configs)
    seeds = [derive_seed(master_seed, i) for i in range(reps)]
    base = configs[0]
    traces = {"random": [run_random(pool, base, s) for s in seeds]}
    stats = [_summarize("random", "random", "random", [t.aucc for t in traces["random"]])]
    for cfg in configs:
        logger.info("running %s x %d", cfg.name, reps)
        traces[cfg.name] = [run_bo(pool, cfg, s) for s in seeds]
        stats.append(_summarize(cfg.name, cfg.kernel, cfg.variant, [t.aucc for t in traces[cfg.name]]))
    rand_mean = stats[0][3]
    rows = []
    for name, kernel, variant, mean, se, n in stats:
        ratio = mean / rand_mean if rand_mean > 0 else float("nan")
        rows.append(SummaryRow(name, kernel, variant, mean, se, ratio, n))
    return BenchmarkResult(rows, traces)


# --- trace files --------------------------------------------------------------

def write_trace(trace: BOTrace, directory, stem: str, config: Optional[RunConfig] = None,
                method: str = "", extra: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "chosen_id", "observed_y", "best_so_far"])
        for s in trace.steps:
            w.writerow([s.step, s.chosen_id, repr(s.observed_y), repr(s.best_so_far)])
    sidecar = {
        "method": method or trace.kernel_desc,
        "seed": trace.seed,
        "config": asdict(config) if config else None,
        "aucc": trace.aucc,
        "target": trace.target,
        "truncated": trace.truncated,
        "steps": trace.diagnostics,
    }
    sidecar.update(extra or {})
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return csv_path


def read_trace(csv_path) -> tuple[BOTrace, dict]:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    tr = BOTrace(seed=meta["seed"], kernel_desc=meta["method"], aucc=meta["aucc"],
                 target=meta["target"], truncated=meta["truncated"], diagnostics=meta["steps"])
    with open(csv_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            tr.steps.append(TraceStep(int(rec["step"]), -1, rec["chosen_id"],
                                      float(rec["observed_y"]), float(rec["best_so_far"])))
    return tr, meta
