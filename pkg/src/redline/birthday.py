"""Expected pruning as a generalized birthday problem.

Merging removes an output neuron whenever another neuron carries the same
symbol; splitting does the same per input channel. Modeling each neuron as
one draw from a finite symbol space (its size scales with the kernel area,
the fan-in for merging, and the number of hashed representatives) yields
closed-form expectations under the uniform prior and tractable exact values
under any prior by per-symbol linearity of expectation. Monte-Carlo
estimates cover the same ground with confidence information.

The split-level symbol space is the merge-level one divided by the fan-in,
so its per-symbol probabilities are larger and splitting always removes at
least as much in expectation; the estimates reproduce that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

PRIOR_KINDS = ("uniform", "gaussian", "exponential")
LEVELS = ("merge", "split")
EXACT_SPACE_LIMIT = 1_000_000
_COMB_DOMAIN = 64


@dataclass(frozen=True)
class BirthdayConfig:
    """Prior, layer dimensions, and sampling budget for one estimate.

    ``prior`` is one of the named kinds or an explicit probability vector
    over the ``modes`` scalar values (strictly positive, summing to 1).
    ``dims`` is (w, h, c_in, c_out).
    """

    dims: tuple[int, int, int, int]
    modes: int
    prior: str | tuple[float, ...] = "uniform"
    samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        w, h, c_in, c_out = self.dims
        if min(w, h, c_in, c_out) < 1:
            raise ValueError("dims must be positive")
        if self.modes < 1:
            raise ValueError("modes must be positive")
        if isinstance(self.prior, str):
            if self.prior not in PRIOR_KINDS:
                raise ValueError(f"unknown prior {self.prior!r}")
        else:
            probs = np.asarray(self.prior, dtype=np.float64)
            if probs.size != self.modes:
                raise ValueError("explicit prior must have one entry per mode")
            if (probs <= 0).any() or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError("prior entries must be positive and sum to 1")
            object.__setattr__(self, "prior", tuple(float(p) for p in probs))

    def scalar_probs(self) -> np.ndarray:
        if isinstance(self.prior, tuple):
            return np.asarray(self.prior, dtype=np.float64)
        return scalar_prior(self.prior, self.modes)

    def group_count(self, level: str) -> int:
        w, h, c_in, _ = self.dims
        if level == "merge":
            return w * h * c_in
        if level == "split":
            return w * h
        raise ValueError(f"unknown level {level!r}")

    def symbol_probs(self, level: str) -> np.ndarray:
        """Distribution over the level's symbol space.

        The scalar prior is replicated across the level's slot groups, so
        the space has group_count * modes symbols; a uniform scalar prior
        yields the uniform distribution over all of them.
        """
        g = self.group_count(level)
        q = self.scalar_probs()
        return np.tile(q / g, g)

    def draw_count(self) -> int:
        return self.dims[3]


@dataclass(frozen=True)
class BirthdayEstimate:
    expected_distinct: float
    pruning_ratio: float
    stderr: float
    method: str

    def __post_init__(self):
        if not 0.0 <= self.pruning_ratio < 1.0:
            raise ValueError("pruning_ratio must lie in [0, 1)")
        if self.expected_distinct <= 0:
            raise ValueError("expected_distinct must be positive")
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")


def scalar_prior(kind: str, modes: int) -> np.ndarray:
    """Discretized scalar-value prior over ``modes`` equispaced points."""
    if modes < 1:
        raise ValueError("modes must be positive")
    if kind == "uniform":
        return np.full(modes, 1.0 / modes)
    if modes == 1:
        return np.ones(1)
    if kind == "gaussian":
        x = np.linspace(-3.0, 3.0, modes)
        dens = np.exp(-0.5 * x * x)
    elif kind == "exponential":
        x = np.linspace(0.0, 5.0, modes)
        dens = np.exp(-x)
    else:
        raise ValueError(f"unknown prior {kind!r}")
    return dens / dens.sum()


# ---------------------------------------------------------------------------
# closed forms (uniform prior)
# ---------------------------------------------------------------------------


def prob_distinct(space: int, draws: int, k: int) -> float:
    """Probability of exactly k distinct values in ``draws`` uniform draws.

    Exact rational arithmetic (inclusion-exclusion), restricted to
    space, draws <= 64 where the alternating sum stays tractable.
    """
    if space < 1 or draws < 1:
        raise ValueError("space and draws must be positive")
    if space > _COMB_DOMAIN or draws > _COMB_DOMAIN:
        raise OverflowError(f"restricted to space, draws <= {_COMB_DOMAIN}")
    if not 1 <= k <= min(space, draws):
        return 0.0
    acc = 0
    for i in range(k + 1):
        acc += (-1) ** i * comb(k, i) * (k - i) ** draws
    return float(Fraction(comb(space, k) * acc, space**draws))


def expected_distinct_uniform(space: int, draws: int) -> float:
    """Expected number of distinct values among uniform draws."""
    if space < 1 or draws < 1:
        raise ValueError("space and draws must be positive")
    return space * (1.0 - (1.0 - 1.0 / space) ** draws)


def expected_merge_ratio(
    w: int, h: int, c_in: int, c_out: int, modes: int
) -> float:
    """Expected fraction of outputs removed by merging, uniform prior."""
    space = w * h * c_in * modes
    return 1.0 - expected_distinct_uniform(space, c_out) / c_out


def expected_split_ratio(w: int, h: int, c_out: int, modes: int) -> float:
    """Expected fraction of per-channel kernels removed, uniform prior."""
    space = w * h * modes
    return 1.0 - expected_distinct_uniform(space, c_out) / c_out


# ---------------------------------------------------------------------------
# general priors
# ---------------------------------------------------------------------------


def exact_expected_distinct(probs: np.ndarray, draws: int) -> float:
    """Sum over symbols of P(symbol appears), by linearity of expectation."""
    p = np.asarray(probs, dtype=np.float64)
    return float((1.0 - (1.0 - p) ** draws).sum())


def exact_estimate(config: BirthdayConfig, level: str) -> BirthdayEstimate:
    probs = config.symbol_probs(level)
    n = config.draw_count()
    expected = exact_expected_distinct(probs, n)
    method = (
        "closed_form"
        if isinstance(config.prior, str) and config.prior == "uniform"
        else "exact_linearity"
    )
    return BirthdayEstimate(
        expected_distinct=expected,
        pruning_ratio=1.0 - expected / n,
        stderr=0.0,
        method=method,
    )


def mc_estimate(config: BirthdayConfig, level: str) -> BirthdayEstimate:
    """Monte-Carlo estimate of the expected distinct-symbol count."""
    if config.samples < 1:
        raise ValueError("need at least one trial")
    probs = config.symbol_probs(level)
    n = config.draw_count()
    rng = np.random.default_rng([config.seed, LEVELS.index(level)])
    trials = config.samples
    counts = np.empty(trials, dtype=np.int64)
    chunk = max(1, min(trials, 4_000_000 // max(n, 1)))
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        draws = rng.choice(probs.size, size=(t, n), p=probs)
        draws.sort(axis=1)
        counts[done : done + t] = 1 + (np.diff(draws, axis=1) != 0).sum(axis=1)
        done += t
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return BirthdayEstimate(
        expected_distinct=mean,
        pruning_ratio=1.0 - mean / n,
        stderr=stderr / n,
        method="monte_carlo",
    )


def mc_expected_distinct(
    config: BirthdayConfig, level: str
) -> tuple[BirthdayEstimate, BirthdayEstimate | None]:
    """(Monte-Carlo estimate, exact value when the symbol space is small)."""
    mc = mc_estimate(config, level)
    exact = None
    space = config.group_count(level) * config.modes
    if space <= EXACT_SPACE_LIMIT:
        exact = exact_estimate(config, level)
    return mc, exact


# ---------------------------------------------------------------------------
# sweeps and empirical curves
# ---------------------------------------------------------------------------


def sweep_expectations(
    dim_grid,
    prior_list=("uniform",),
    samples: int = 0,
    seed: int = 0,
) -> list[dict]:
    """Expectation table over (w, h, c_in, c_out, modes) x priors x levels.

    Always emits the exact value per combination; adds a Monte-Carlo row
    when ``samples`` > 0. Rows carry the CSV schema of the sweep reports.
    """
    rows: list[dict] = []
    for dims_modes in dim_grid:
        w, h, c_in, c_out, modes = (int(v) for v in dims_modes)
        for prior in prior_list:
            config = BirthdayConfig(
                dims=(w, h, c_in, c_out),
                modes=modes,
                prior=prior,
                samples=max(samples, 1),
                seed=seed,
            )
            for level in LEVELS:
                estimates = [exact_estimate(config, level)]
                if samples > 0:
                    estimates.append(mc_estimate(config, level))
                for est in estimates:
                    rows.append(
                        {
                            "c_in": c_in,
                            "c_out": c_out,
                            "w": w,
                            "h": h,
                            "modes": modes,
                            "prior": prior if isinstance(prior, str) else "custom",
                            "level": level,
                            "expected_distinct": est.expected_distinct,
                            "ratio": est.pruning_ratio,
                            "stderr": est.stderr,
                            "method": est.method,
                        }
                    )
    return rows


def mode_sweep_grid(
    dims: tuple[int, int, int, int] = (3, 3, 32, 128),
    mode_counts=(2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192),
) -> list[tuple[int, int, int, int, int]]:
    w, h, c_in, c_out = dims
    return [(w, h, c_in, c_out, m) for m in mode_counts]


def dimension_sweep_grid(
    kernel: tuple[int, int] = (3, 3),
    channel_product: int = 64 * 64,
    c_in_values=(2, 4, 8, 16, 32, 64, 128),
    modes: int = 100,
) -> list[tuple[int, int, int, int, int]]:
    w, h = kernel
    return [(w, h, c, channel_product // c, modes) for c in c_in_values]


def empirical_ratio_curves(
    net, merge_plans, split_reports
) -> list[dict]:
    """Per-layer (c_in, merge ratio, split ratio) records for scatter plots.

    Layers skipped by a stage (non-prunable, residual-pinned, or final)
    appear with a zero ratio for that stage.
    """
    records = []
    for i, layer in enumerate(net.layers):
        merge_ratio = 0.0
        if merge_plans is not None and i < len(merge_plans):
            plan = merge_plans[i]
            if plan is not None and layer.c_out > 0:
                merge_ratio = 1.0 - plan.merged_count / layer.c_out
        split_ratio = 0.0
        if split_reports is not None and i < len(split_reports):
            split_ratio = float(split_reports[i]["pruning_ratio"])
        records.append(
            {
                "layer": i,
                "c_in": layer.c_in,
                "merge_ratio": merge_ratio,
                "split_ratio": split_ratio,
            }
        )
    return records
