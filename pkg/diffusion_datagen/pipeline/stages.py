"""Pipeline stages: each reads inputs, writes artifacts and a run manifest beside them."""

from __future__ import annotations

import logging
import os
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd
import psutil
import torch

from ..analysis.quality import build_report, emit_report
from ..core.checkpoint import file_sha256
from ..core.config import RunConfig
from ..core.errors import ConfigurationError, DataError
from ..core.manifest import RunManifest, assert_parity, file_refs, read_manifest, write_manifest
from ..core.seeds import expand_spans, seed_block, seed_spans
from ..data.datagen import generate_dataset
from ..data.dataset import Dataset, mix_datasets, read_dataset, write_dataset
from ..diffusion.nets import (
    GaussianHead,
    build_gaussian_head,
    build_noise_predictor,
    build_value_net,
    load_module,
    save_module,
)
from ..diffusion.policy import ChunkSampler, DiffusionPolicy, GaussianPolicy
from ..diffusion.schedule import schedule_from_config
from ..envs import TaskRegistry
from ..envs.base import ACTION_DIM, OBS_DIM, TaskSpec
from ..envs.scripted import demo_corpus
from ..training.bc import DemoDataset, check_warm_start, train_bc
from ..training.distill import evaluate, holdout_study, student_policy, train_student
from ..training.rl import RLResult, train_rl, train_rl_gaussian

logger = logging.getLogger("diffusion_datagen.pipeline")

WORKERS_ENV = "DDRL_WORKERS"

SUITE_OVERRIDES: dict[str, list[str]] = {
    "quick": [
        "demos.tasks=[reach]",
        "bc.steps=3000",
        "ppo.iterations=100",
        "ppo.n_envs=8",
        "ppo.checkpoint_every=25",
        "generate.n_per_task=50",
        "student.steps=3000",
    ],
    "full": [],
}


def resolve_workers(configured: int) -> int:
    """Worker threads from ``DDRL_WORKERS`` (or the config), capped at the CPU count."""
    raw = os.environ.get(WORKERS_ENV)
    workers = configured
    if raw:
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigurationError(f"Worker count must be positive, got {workers}")
    return min(workers, psutil.cpu_count(logical=True) or 1)


def _write_csv(rows: Sequence[dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
    return path


def _append_csv_row(row: dict[str, Any], path: Path) -> None:
    pd.DataFrame([row]).to_csv(path, mode="a", header=not path.exists(), index=False)


class PipelineRunner:
    """Runs pipeline stages under one resolved configuration."""

    def __init__(self, config: RunConfig, out_dir: Path, workers: int | None = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.seed = config.runtime.seed
        self.workers = workers if workers is not None else resolve_workers(config.runtime.workers)
        self.dtype = torch.float64 if config.runtime.dtype == "float64" else torch.float32
        self.schedule = schedule_from_config(config.schedule)
        self.env_cfg = config.env
        self.chunk_dim = config.env.chunk_len * ACTION_DIM

    # Helpers

    def _tasks(self, names: Sequence[str] | None, default: Sequence[str]) -> list[TaskSpec]:
        return TaskRegistry.get_tasks(list(names) if names else list(default))

    def _net_seed(self, task: TaskSpec) -> int:
        return self.seed * 100 + task.task_id

    def _stage_dir(self, out_dir: Path | None) -> Path:
        path = Path(out_dir) if out_dir is not None else self.out_dir
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _manifest(
        self,
        stage: str,
        out_dir: Path,
        inputs: dict[str, Any],
        outputs: dict[str, Any],
        extra: dict[str, Any] | None = None,
    ) -> Path:
        manifest = RunManifest(
            stage=stage,
            seed=self.seed,
            config=self.config.model_dump(mode="json"),
            inputs=file_refs(inputs),
            outputs=file_refs(outputs),
            extra=extra or {},
        )
        return write_manifest(out_dir, manifest)

    def _load_by_task(self, checkpoints: Sequence[Path], kind: str | None = None) -> dict[str, tuple[Any, dict[str, Any], Path]]:
        loaded: dict[str, tuple[Any, dict[str, Any], Path]] = {}
        for path in checkpoints:
            module, meta = load_module(Path(path), kind, self.dtype)
            task = meta.get("task")
            if task is None:
                raise DataError(f"Checkpoint {path} does not record its task")
            loaded[task] = (module, meta, Path(path))
        return loaded

    def _expert_sampler(self, module: Any, mode: str) -> tuple[ChunkSampler, str]:
        if isinstance(module, GaussianHead):
            return GaussianPolicy(module, mode="stochastic"), "gaussian_rl"
        if mode == "stochastic":
            sampler = DiffusionPolicy(
                module,
                self.schedule,
                mode="stochastic",
                exploration_std_min=self.config.ppo.exploration_std_min,
            )
        else:
            sampler = DiffusionPolicy(module, self.schedule, mode="deterministic")
        return sampler, "diffusion_rl"

    # Stages

    def demo_gen(self, tasks: Sequence[str] | None = None, out_dir: Path | None = None) -> Path:
        """Scripted 'human' corpus."""
        out = self._stage_dir(out_dir)
        cfg = self.config.demos
        specs = self._tasks(tasks, cfg.tasks)
        seeds = seed_block("demo", self.seed, cfg.n_per_task)
        records = demo_corpus(specs, seeds, cfg, self.env_cfg)
        path = out / "demos.jsonl"
        write_dataset(path, Dataset.from_records(records, "scripted_human", self.env_cfg))
        self._manifest("demo-gen", out, {}, {"dataset": path}, {"tasks": [t.name for t in specs]})
        return path

    def train_bc(
        self, demos: Path, tasks: Sequence[str] | None = None, out_dir: Path | None = None
    ) -> dict[str, Path]:
        """Per-task diffusion and Gaussian warm starts."""
        out = self._stage_dir(out_dir)
        dataset = read_dataset(demos)
        names = list(tasks) if tasks else list(dataset.by_task())
        outputs: dict[str, Path] = {}
        for task in self._tasks(names, names):
            records = dataset.filter([task.name], success_only=True).records
            demo_data = DemoDataset.from_records(records, self.env_cfg.chunk_len, self.dtype)
            net = build_noise_predictor(self.config.model, self.chunk_dim, OBS_DIM, self._net_seed(task), self.dtype)
            curve = train_bc(net, demo_data, self.config.bc, self.schedule, self._net_seed(task)).loss_curve
            head = build_gaussian_head(self.config.model, self.chunk_dim, OBS_DIM, self._net_seed(task), self.dtype)
            head_curve = train_bc(head, demo_data, self.config.bc, seed=self._net_seed(task)).loss_curve
            meta = {
                "task": task.name,
                "stage": "train-bc",
                "seed": self.seed,
                "used_seeds": seed_spans(r.seed for r in records),
            }
            outputs[f"diffusion_{task.name}"] = out / f"bc_{task.name}.ckpt"
            outputs[f"gaussian_{task.name}"] = out / f"bc_gaussian_{task.name}.ckpt"
            save_module(outputs[f"diffusion_{task.name}"], net, **meta)
            save_module(outputs[f"gaussian_{task.name}"], head, **meta)
            outputs[f"loss_{task.name}"] = _write_csv(
                [{"step": i, "diffusion_loss": a, "gaussian_nll": b} for i, (a, b) in enumerate(zip(curve, head_curve, strict=True))],
                out / f"bc_{task.name}_loss.csv",
            )
        self._manifest("train-bc", out, {"dataset": demos}, outputs)
        return outputs

    def _run_rl(
        self,
        stage: str,
        checkpoints: Sequence[Path],
        tasks: Sequence[str] | None,
        out_dir: Path | None,
        allow_weak_start: bool,
        gaussian: bool,
    ) -> dict[str, Path]:
        out = self._stage_dir(out_dir)
        cfg = self.config.ppo
        kind = "gaussian" if gaussian else "noise_predictor"
        loaded = self._load_by_task(checkpoints, kind) if not cfg.from_scratch else {}
        names = list(tasks) if tasks else list(loaded)
        if not names:
            raise ConfigurationError(f"{stage} needs --tasks or warm-start checkpoints")
        prefix = "rl_gaussian" if gaussian else "rl"
        outputs: dict[str, Path] = {}
        extra: dict[str, Any] = {}
        train_seeds = seed_block("train", self.seed, cfg.iterations * cfg.n_envs)
        for task in self._tasks(names, names):
            net_seed = self._net_seed(task)
            used = list(train_seeds)
            if task.name in loaded:
                policy = loaded[task.name][0]
                used += expand_spans(loaded[task.name][1].get("used_seeds", []))
            elif cfg.from_scratch:
                policy = (
                    build_gaussian_head(self.config.model, self.chunk_dim, OBS_DIM, net_seed, self.dtype)
                    if gaussian
                    else build_noise_predictor(self.config.model, self.chunk_dim, OBS_DIM, net_seed, self.dtype)
                )
            else:
                raise DataError(f"No warm-start checkpoint for task {task.name}")

            if not cfg.from_scratch:
                sampler = GaussianPolicy(policy, "deterministic") if gaussian else DiffusionPolicy(policy, self.schedule)
                gate = evaluate(
                    sampler, [task], self.config.bc.gate_episodes, run_seed=self.seed,
                    exclude_seeds=used, env_cfg=self.env_cfg, workers=self.workers,
                )
                check_warm_start(gate.per_task[task.name], self.config.bc.warm_start_floor, allow_weak_start)
                extra[f"warm_start_success.{task.name}"] = gate.per_task[task.name]

            value_net = build_value_net(self.config.model, OBS_DIM, net_seed + 50, self.dtype)
            meta = {"task": task.name, "stage": stage, "seed": self.seed, "used_seeds": seed_spans(used)}
            metrics_csv = out / f"{prefix}_{task.name}_metrics.csv"
            metrics_csv.unlink(missing_ok=True)

            def on_iteration(
                iteration: int,
                row: dict[str, Any],
                policy: Any = policy,
                task: TaskSpec = task,
                metrics_csv: Path = metrics_csv,
                meta: dict[str, Any] = meta,
            ) -> None:
                _append_csv_row(row, metrics_csv)
                if (iteration + 1) % cfg.checkpoint_every == 0:
                    save_module(out / f"{prefix}_{task.name}_iter{iteration + 1}.ckpt", policy, iteration=iteration + 1, **meta)

            result: RLResult
            if gaussian:
                result = train_rl_gaussian(policy, value_net, [task], cfg, self.seed, self.env_cfg, self.workers, on_iteration)
            else:
                result = train_rl(policy, value_net, [task], cfg, self.seed, self.schedule, self.env_cfg, self.workers, on_iteration)

            outputs[f"policy_{task.name}"] = out / f"{prefix}_{task.name}.ckpt"
            outputs[f"value_{task.name}"] = out / f"{prefix}_value_{task.name}.ckpt"
            save_module(outputs[f"policy_{task.name}"], result.policy, **meta)
            save_module(outputs[f"value_{task.name}"], result.value_net, **meta)
            outputs[f"metrics_{task.name}"] = metrics_csv

            sampler = self._expert_sampler(result.policy, self.config.generate.mode)[0]
            final = evaluate(
                sampler, [task], cfg.eval_episodes, run_seed=self.seed,
                exclude_seeds=used, env_cfg=self.env_cfg, workers=self.workers,
            )
            extra[f"final_success.{task.name}"] = final.per_task[task.name]
        self._manifest(stage, out, {"checkpoints": list(checkpoints)}, outputs, extra)
        return outputs

    def train_rl(
        self,
        checkpoints: Sequence[Path],
        tasks: Sequence[str] | None = None,
        out_dir: Path | None = None,
        allow_weak_start: bool = False,
    ) -> dict[str, Path]:
        """Diffusion PPO per task from BC checkpoints."""
        return self._run_rl("train-rl", checkpoints, tasks, out_dir, allow_weak_start, gaussian=False)

    def train_rl_gaussian(
        self,
        checkpoints: Sequence[Path],
        tasks: Sequence[str] | None = None,
        out_dir: Path | None = None,
        allow_weak_start: bool = False,
    ) -> dict[str, Path]:
        """Gaussian-PPO baseline per task."""
        return self._run_rl("train-rl-gaussian", checkpoints, tasks, out_dir, allow_weak_start, gaussian=True)

    def generate(
        self,
        checkpoints: Sequence[Path],
        tasks: Sequence[str] | None = None,
        n_per_task: int | None = None,
        mode: str | None = None,
        out: Path | None = None,
    ) -> Path:
        """Harvest a dataset from per-task experts."""
        cfg = self.config.generate
        path = Path(out) if out is not None else self.out_dir / "generated.jsonl"
        stage_dir = self._stage_dir(path.parent)
        loaded = self._load_by_task(checkpoints)
        names = list(tasks) if tasks else list(loaded)
        specs = self._tasks(names, names)
        policies: dict[str, ChunkSampler] = {}
        hashes: dict[str, str] = {}
        sources = set()
        for task in specs:
            if task.name not in loaded:
                raise DataError(f"No expert checkpoint for task {task.name}")
            module, _meta, ckpt = loaded[task.name]
            policies[task.name], source = self._expert_sampler(module, mode or cfg.mode)
            sources.add(source)
            hashes[task.name] = file_sha256(ckpt)
        if len(sources) != 1:
            raise ConfigurationError("All expert checkpoints of one dataset must be of the same kind")
        dataset = generate_dataset(
            policies,
            specs,
            n_per_task or cfg.n_per_task,
            sources.pop(),  # type: ignore[arg-type]
            run_seed=self.seed,
            checkpoint_hashes=hashes,
            retry_factor=cfg.retry_factor,
            keep_failures=cfg.keep_failures,
            env_cfg=self.env_cfg,
            workers=self.workers,
        )
        write_dataset(path, dataset)
        self._manifest(
            "generate", stage_dir, {"checkpoints": list(checkpoints)}, {"dataset": path},
            {"mode": mode or cfg.mode, "n_per_task": n_per_task or cfg.n_per_task},
        )
        return path

    def analyze(self, datasets: Sequence[Path], out_dir: Path | None = None) -> dict[str, Path]:
        """Quality report over one or more datasets."""
        out = self._stage_dir(out_dir)
        reports = [build_report(read_dataset(path), self.config.quality) for path in datasets]
        paths = emit_report(reports, out)
        self._manifest(
            "analyze", out, {"datasets": list(datasets)},
            {"summary": paths["summary"], "curves": paths["curves"]},
        )
        return paths

    def _source_label(self, dataset: Dataset, taken: set[str]) -> str:
        label = dataset.source
        index = 2
        while label in taken:
            label = f"{dataset.source}_{index}"
            index += 1
        return label

    def distill(
        self, datasets: Sequence[Path], tasks: Sequence[str] | None = None, out_dir: Path | None = None
    ) -> Path:
        """One student per dataset, identical hyperparameters, evaluated on the dataset tasks."""
        out = self._stage_dir(out_dir)
        rows: list[dict[str, Any]] = []
        manifests: list[RunManifest] = []
        taken: set[str] = set()
        for path in datasets:
            dataset = read_dataset(path)
            label = self._source_label(dataset, taken)
            taken.add(label)
            names = list(tasks) if tasks else [entry.name for entry in dataset.header.tasks]
            specs = self._tasks(names, names)
            sub = self._stage_dir(out / label)
            result = train_student(
                dataset.filter(names), self.config.student, self.config.model, self.schedule,
                self.seed, self.env_cfg, self.dtype,
            )
            scores = evaluate(
                student_policy(result.student, self.schedule),
                specs,
                self.config.student.eval_episodes,
                run_seed=self.seed,
                exclude_seeds=[record.seed for record in dataset.records],
                env_cfg=self.env_cfg,
                workers=self.workers,
            )
            ckpt = sub / "student.ckpt"
            save_module(
                ckpt, result.student, stage="distill", seed=self.seed, source=label,
                used_seeds=seed_spans(record.seed for record in dataset.records),
            )
            loss_csv = _write_csv([{"step": i, "loss": v} for i, v in enumerate(result.loss_curve)], sub / "student_loss.csv")
            eval_csv = _write_csv(scores.rows(), sub / "evaluation.csv")
            manifest_path = self._manifest(
                "distill", sub, {"dataset": path}, {"student": ckpt, "loss": loss_csv, "evaluation": eval_csv},
                {"source": label, "record_sources": sorted({r.source for r in dataset.records})},
            )
            manifests.append(read_manifest(manifest_path))
            rows.append({"source": label, **scores.per_task, "mean": scores.mean})
        assert_parity(manifests)
        table = _write_csv(rows, out / "distill_comparison.csv")
        self._manifest("distill", out, {"datasets": list(datasets)}, {"comparison": table})
        return table

    def holdout(
        self,
        human: Path,
        rl: Path,
        out_dir: Path | None = None,
    ) -> Path:
        """Held-out-task comparison of human, diffusion-RL and mixed data."""
        out = self._stage_dir(out_dir)
        cfg = self.config.holdout
        train_tasks = self._tasks(cfg.train_tasks, cfg.train_tasks)
        holdout_tasks = self._tasks(cfg.holdout_tasks, cfg.holdout_tasks)
        names = [t.name for t in train_tasks]
        human_data = read_dataset(human).filter(names)
        rl_data = read_dataset(rl).filter(names)
        mixed = mix_datasets(human_data, rl_data, cfg.mix_ratio)
        mixed_path = self._stage_dir(out / "mixed") / "dataset.jsonl"
        write_dataset(mixed_path, mixed)
        sources = {"human": human_data, "diffusion_rl": rl_data, "mixed": mixed}
        paths = {"human": Path(human), "diffusion_rl": Path(rl), "mixed": mixed_path}
        excluded = [r.seed for d in sources.values() for r in d.records]
        rows = holdout_study(
            train_tasks, holdout_tasks, sources, self.config.student, self.config.model,
            self.schedule, self.seed, self.env_cfg, excluded, self.workers,
        )
        manifests = []
        for label, dataset in sources.items():
            sub = self._stage_dir(out / label)
            path = self._manifest(
                "holdout", sub, {"dataset": paths[label]}, {},
                {"source": label, "record_sources": sorted({r.source for r in dataset.records})},
            )
            manifests.append(read_manifest(path))
        assert_parity(manifests)
        table = _write_csv(rows, out / "holdout_comparison.csv")
        self._manifest("holdout", out, {"human": human, "rl": rl}, {"comparison": table, "mixed": mixed_path})
        return table

    def evaluate(
        self, checkpoints: Sequence[Path], tasks: Sequence[str] | None = None,
        episodes: int | None = None, out_dir: Path | None = None,
    ) -> Path:
        """Success rates of saved experts or students."""
        out = self._stage_dir(out_dir)
        n_episodes = episodes or self.config.ppo.eval_episodes
        rows: list[dict[str, Any]] = []
        for path in checkpoints:
            module, meta = load_module(Path(path), dtype=self.dtype)
            if meta["kind"] == "student":
                names = list(tasks) if tasks else [t.name for t in TaskRegistry.list_tasks()]
                sampler: ChunkSampler = student_policy(module, self.schedule)
            else:
                names = list(tasks) if tasks else [meta["task"]]
                sampler = self._expert_sampler(module, self.config.generate.mode)[0]
            scores = evaluate(
                sampler, self._tasks(names, names), n_episodes, run_seed=self.seed,
                exclude_seeds=expand_spans(meta.get("used_seeds", [])),
                env_cfg=self.env_cfg, workers=self.workers,
            )
            rows += [{"checkpoint": str(path), **row} for row in scores.rows()]
        table = _write_csv(rows, out / "evaluation.csv")
        self._manifest("evaluate", out, {"checkpoints": list(checkpoints)}, {"evaluation": table})
        return table

    def reproduce(self, suite: str) -> dict[str, Path]:
        """Chain every stage; ``quick`` covers reach only, ``full`` the whole suite."""
        if suite not in SUITE_OVERRIDES:
            raise ConfigurationError(f"Unknown suite: {suite}")
        root = self.out_dir
        tasks = self.config.demos.tasks
        demos = self.demo_gen(tasks, root / "demos")
        bc = self.train_bc(demos, tasks, root / "bc")
        rl = self.train_rl([bc[f"diffusion_{t}"] for t in tasks], tasks, root / "rl")
        rl_data = self.generate([rl[f"policy_{t}"] for t in tasks], tasks, out=root / "generate" / "diffusion_rl.jsonl")
        datasets = [demos, rl_data]
        results = {"demos": demos, "diffusion_rl": rl_data}
        if suite == "full":
            gauss = self.train_rl_gaussian([bc[f"gaussian_{t}"] for t in tasks], tasks, root / "rl_gaussian")
            gauss_data = self.generate(
                [gauss[f"policy_{t}"] for t in tasks], tasks, out=root / "generate_gaussian" / "gaussian_rl.jsonl"
            )
            datasets.append(gauss_data)
            results["gaussian_rl"] = gauss_data
        results.update(self.analyze(datasets, root / "analyze"))
        results["distill"] = self.distill(datasets, tasks, root / "distill")
        if suite == "full":
            results["holdout"] = self.holdout(demos, rl_data, root / "holdout")
        logger.info(f"Suite '{suite}' finished; artifacts under {root}")
        return results
