"""Mask sampling over the (N_r, N_s) token grid.

Three strategies share one contract: per time index, exactly
floor(rho * N_s) spatial tokens are masked.

* gaze    — tokens drawn without replacement from a temperature softmax
            over accumulated gaze mass, one draw per time index;
* random  — the uniform special case, positions independent per time index;
* tube    — one uniform spatial selection shared by every time index.

Without-replacement sampling uses the Gumbel-top-k trick: add i.i.d.
Gumbel(0, 1) noise to log-probabilities and keep the k largest. This is
distributionally identical to drawing k times from the multinomial,
renormalizing after each draw, and it vectorizes over the grid. Ties in
the underlying mass (common: many zero-gaze tokens) are broken by the
noise itself, keeping equal-mass tokens exchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gazemae.gaze import TokenGazeMass

STRATEGIES = ("gaze", "random", "tube")


@dataclass(frozen=True)
class MaskPlan:
    """Boolean mask over tokens, True = masked/hidden. Shape (N_r, N_s)."""

    mask: np.ndarray
    rho: float
    strategy: str

    @property
    def n_masked_per_row(self) -> int:
        return int(self.mask[0].sum())

    def masked_indices(self) -> np.ndarray:
        """Flat token indices of masked slots, ascending (time-major)."""
        return np.flatnonzero(self.mask.reshape(-1))


@dataclass(frozen=True)
class MaskDistribution:
    """Row-stochastic masking probabilities, shape (N_r, N_s)."""

    pi: np.ndarray
    tau: float


def tokens_to_mask(rho: float, n_s: int) -> int:
    k = int(np.floor(rho * n_s))
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if k < 1:
        raise ValueError(f"floor(rho * N_s) = {k}: nothing would be masked (rho={rho}, N_s={n_s})")
    return k


def masking_distribution(mass: TokenGazeMass, tau: float) -> MaskDistribution:
    """Softmax of per-token gaze mass at temperature tau, row-wise."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scaled = np.asarray(mass.d, dtype=np.float64) / tau
    scaled = scaled - scaled.max(axis=1, keepdims=True)  # overflow-safe
    expd = np.exp(scaled)
    pi = expd / expd.sum(axis=1, keepdims=True)
    return MaskDistribution(pi=pi, tau=float(tau))


def _gumbel_top_k(log_pi: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Row-wise top-k of log_pi + Gumbel noise; returns a boolean mask."""
    gumbel = -np.log(-np.log(rng.random(log_pi.shape)))
    keys = log_pi + gumbel
    top = np.argpartition(-keys, k - 1, axis=1)[:, :k]
    mask = np.zeros(log_pi.shape, dtype=bool)
    np.put_along_axis(mask, top, True, axis=1)
    return mask


def sample_gaze_mask(dist: MaskDistribution, rho: float, seed: int) -> MaskPlan:
    """Draw floor(rho * N_s) tokens per time index from dist, no replacement."""
    n_r, n_s = dist.pi.shape
    k = tokens_to_mask(rho, n_s)
    rng = np.random.default_rng(seed)
    with np.errstate(divide="ignore"):  # pi entries are > 0 after softmax anyway
        log_pi = np.log(dist.pi)
    mask = _gumbel_top_k(log_pi, k, rng)
    return MaskPlan(mask=mask, rho=float(rho), strategy="gaze")


def sample_random_mask(n_r: int, n_s: int, rho: float, seed: int) -> MaskPlan:
    """Uniform masking, positions independent per time index."""
    k = tokens_to_mask(rho, n_s)
    rng = np.random.default_rng(seed)
    mask = _gumbel_top_k(np.zeros((n_r, n_s)), k, rng)
    return MaskPlan(mask=mask, rho=float(rho), strategy="random")


def sample_tube_mask(n_r: int, n_s: int, rho: float, seed: int) -> MaskPlan:
    """Uniform masking with one spatial selection shared by all time indices."""
    k = tokens_to_mask(rho, n_s)
    rng = np.random.default_rng(seed)
    row = _gumbel_top_k(np.zeros((1, n_s)), k, rng)
    mask = np.repeat(row, n_r, axis=0)
    return MaskPlan(mask=mask, rho=float(rho), strategy="tube")


def mask_plan_to_rle(plan: MaskPlan) -> str:
    """Serialize a plan to the run-length text format used by viz-mask.

    Line 1: ``mask-rle v1``; line 2: ``strategy=<s> rho=<r> rows=<N_r>
    cols=<N_s>``; then one line per time index of space-separated runs
    ``<length><v|m>`` (v = visible, m = masked), lengths summing to cols.
    """
    n_r, n_s = plan.mask.shape
    lines = [
        "mask-rle v1",
        f"strategy={plan.strategy} rho={plan.rho!r} rows={n_r} cols={n_s}",
    ]
    for row in plan.mask:
        runs = []
        start = 0
        for end in range(1, n_s + 1):
            if end == n_s or row[end] != row[start]:
                runs.append(f"{end - start}{'m' if row[start] else 'v'}")
                start = end
        lines.append(" ".join(runs))
    return "\n".join(lines) + "\n"


def mask_plan_from_rle(text: str) -> MaskPlan:
    lines = text.strip().split("\n")
    if not lines or lines[0] != "mask-rle v1":
        raise ValueError("not a mask-rle v1 document")
    header = dict(item.split("=", 1) for item in lines[1].split())
    n_r, n_s = int(header["rows"]), int(header["cols"])
    strategy, rho = header["strategy"], float(header["rho"])
    if len(lines) != 2 + n_r:
        raise ValueError(f"expected {n_r} mask rows, got {len(lines) - 2}")
    mask = np.zeros((n_r, n_s), dtype=bool)
    for t, line in enumerate(lines[2:]):
        pos = 0
        for run in line.split():
            length, flag = int(run[:-1]), run[-1]
            if flag not in "vm":
                raise ValueError(f"bad run token {run!r} in row {t}")
            mask[t, pos : pos + length] = flag == "m"
            pos += length
        if pos != n_s:
            raise ValueError(f"row {t} runs sum to {pos}, expected {n_s}")
    return MaskPlan(mask=mask, rho=rho, strategy=strategy)
