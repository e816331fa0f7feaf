"""Disjoint seed blocks for demos, RL training, generation and evaluation."""

from collections.abc import Iterable, Sequence

from .errors import ConfigurationError, SeedOverlapError

SEED_BLOCKS: dict[str, int] = {
    "demo": 0,
    "train": 10_000_000,
    "generate": 20_000_000,
    "eval": 30_000_000,
    "probe": 40_000_000,
}
RUN_STRIDE = 100_000


def seed_block(purpose: str, run_seed: int, count: int, offset: int = 0) -> list[int]:
    """Return ``count`` consecutive environment seeds reserved for ``purpose``.

    Args:
        purpose: one of the keys of ``SEED_BLOCKS``
        run_seed: the run's master seed; each run owns its own stride
        count: number of seeds
        offset: position inside the run's stride

    Returns:
        List of seeds, disjoint from every other purpose's block.
    """
    if purpose not in SEED_BLOCKS:
        raise ConfigurationError(f"Unknown seed purpose: {purpose}")
    if run_seed < 0 or run_seed >= 10_000_000 // RUN_STRIDE:
        raise ConfigurationError(f"Run seed {run_seed} outside the supported range")
    if offset < 0 or offset + count > RUN_STRIDE:
        raise ConfigurationError(
            f"Seed request ({offset}+{count}) overflows the per-run stride {RUN_STRIDE}"
        )
    start = SEED_BLOCKS[purpose] + run_seed * RUN_STRIDE + offset
    return list(range(start, start + count))


def check_disjoint(eval_seeds: Iterable[int], used_seeds: Iterable[int]) -> None:
    """Raise :class:`SeedOverlapError` if any evaluation seed was already used."""
    overlap = sorted(set(eval_seeds) & set(used_seeds))
    if overlap:
        preview = ", ".join(str(s) for s in overlap[:5])
        raise SeedOverlapError(
            f"{len(overlap)} evaluation seeds were used for training or generation: {preview}"
        )


def seed_spans(seeds: Iterable[int]) -> list[list[int]]:
    """Compress seeds into sorted ``[start, count]`` runs for checkpoint metadata."""
    spans: list[list[int]] = []
    for seed in sorted(set(seeds)):
        if spans and spans[-1][0] + spans[-1][1] == seed:
            spans[-1][1] += 1
        else:
            spans.append([seed, 1])
    return spans


def expand_spans(spans: Iterable[Sequence[int]]) -> list[int]:
    return [seed for start, count in spans for seed in range(start, start + count)]
