"""In-distribution and out-of-distribution train/val/test splits over tagged pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn_core import ConfigError

SPLIT_KINDS = ("in_distribution", "out_of_distribution")


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "in_distribution"
    ratios: tuple = (0.6, 0.2, 0.2)
    counts: tuple | None = None  # exact (train, val, test) sizes; overrides ratios
    test_tags: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ConfigError(f"unknown split kind {self.kind!r}")
        if len(self.ratios) != 3 or min(self.ratios) < 0 or abs(sum(self.ratios) - 1) > 1e-9:
            raise ConfigError(f"split ratios must be three nonnegative numbers summing to 1: {self.ratios}")
        if self.kind == "out_of_distribution" and not self.test_tags:
            raise ConfigError("out_of_distribution split needs test_tags")


def _tags(p) -> frozenset:
    return frozenset(p.tags if hasattr(p, "tags") else p["tags"])


def _stratified_order(items, rng) -> list:
    """Interleave strata so any prefix holds each stratum in proportion to its size."""
    strata: dict = {}
    for i, it in enumerate(items):
        strata.setdefault(_tags(it), []).append(i)
    keyed = []
    for key in sorted(strata, key=lambda s: sorted(s)):
        idx = strata[key]
        perm = rng.permutation(len(idx))
        offset = rng.random()
        keyed.extend(((r + offset) / len(idx), idx[j]) for r, j in enumerate(perm))
    keyed.sort()
    return [i for _, i in keyed]


def _sizes(n: int, spec: SplitSpec, parts: int) -> list[int]:
    if spec.counts is not None:
        counts = list(spec.counts[-parts:]) if parts < 3 else list(spec.counts)
        if sum(counts) > n:
            raise ConfigError(f"requested split sizes {spec.counts} exceed {n} pairs")
        return counts
    ratios = np.array(spec.ratios[-parts:] if parts < 3 else spec.ratios, dtype=float)
    ratios = ratios / ratios.sum()
    raw = ratios * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def make_splits(pairs, spec: SplitSpec) -> tuple[list, list, list]:
    pairs = list(pairs)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "in_distribution":
        order = _stratified_order(pairs, rng)
        n_tr, n_va, n_te = _sizes(len(pairs), spec, 3)
        pick = lambda lo, hi: [pairs[i] for i in order[lo:hi]]  # noqa: E731
        return pick(0, n_tr), pick(n_tr, n_tr + n_va), pick(n_tr + n_va, n_tr + n_va + n_te)

    test = [p for p in pairs if _tags(p) & spec.test_tags]
    rest = [p for p in pairs if not _tags(p) & spec.test_tags]
    if not test or not rest:
        raise ConfigError(f"test tags {sorted(spec.test_tags)} do not partition the data into train and test")
    if spec.counts is not None:
        if spec.counts[2] > len(test):
            raise ConfigError(f"only {len(test)} pairs carry the test tags, {spec.counts[2]} requested")
        test = [test[i] for i in sorted(rng.permutation(len(test))[: spec.counts[2]])]
        n_tr, n_va = _sizes(len(rest), SplitSpec(counts=spec.counts[:2] + (0,)), 3)[:2]
    else:
        tr, va = spec.ratios[0], spec.ratios[1]
        n_tr, n_va = _sizes(len(rest), SplitSpec(ratios=(tr / (tr + va), va / (tr + va), 0.0)), 3)[:2]
    order = _stratified_order(rest, rng)
    return [rest[i] for i in order[:n_tr]], [rest[i] for i in order[n_tr:n_tr + n_va]], test
