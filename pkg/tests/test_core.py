"""Configuration, seeds, checkpoints and manifests."""

import pytest
import torch
import yaml

from diffusion_datagen.core.checkpoint import load_checkpoint, save_checkpoint
from diffusion_datagen.core.config import RunConfig, load_config, parse_override
from diffusion_datagen.core.errors import CheckpointError, ConfigurationError, SeedOverlapError
from diffusion_datagen.core.manifest import (
    RunManifest,
    assert_parity,
    diff_manifests,
    read_manifest,
    write_manifest,
)
from diffusion_datagen.core.seeds import SEED_BLOCKS, check_disjoint, expand_spans, seed_block, seed_spans


class TestConfig:
    def test_default_file_matches_model_defaults(self):
        assert load_config() == RunConfig()

    def test_unknown_key_is_named(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("ppo:\n  clip_epsilon: 0.3\n")
        with pytest.raises(ConfigurationError, match="ppo.clip_epsilon"):
            load_config(path)

    def test_overrides_are_yaml_typed(self):
        config = load_config(overrides=["ppo.clip_eps=0.1", "demos.tasks=[reach, push]"])
        assert config.ppo.clip_eps == 0.1
        assert config.demos.tasks == ["reach", "push"]

    def test_out_of_range_value_rejected(self):
        with pytest.raises(ConfigurationError):
            load_config(overrides=["ppo.clip_eps=1.5"])

    def test_override_needs_section(self):
        with pytest.raises(ConfigurationError):
            parse_override("seed=3")
        assert parse_override("runtime.seed=3") == (["runtime", "seed"], 3)

    def test_manifest_is_a_valid_config_source(self, tmp_path):
        config = load_config(overrides=["runtime.seed=7"])
        manifest = RunManifest(stage="demo-gen", seed=7, config=config.model_dump(mode="json"))
        path = write_manifest(tmp_path, manifest)
        assert load_config(path) == config


class TestSeeds:
    def test_blocks_are_disjoint(self):
        blocks = [set(seed_block(purpose, 3, 1000)) for purpose in SEED_BLOCKS]
        for i, first in enumerate(blocks):
            for second in blocks[i + 1 :]:
                assert not first & second

    def test_runs_do_not_share_seeds(self):
        assert not set(seed_block("train", 0, 500)) & set(seed_block("train", 1, 500))

    def test_overlap_detected(self):
        with pytest.raises(SeedOverlapError):
            check_disjoint([1, 2, 3], [3, 4])
        check_disjoint([1, 2], [3, 4])

    def test_unknown_purpose(self):
        with pytest.raises(ConfigurationError):
            seed_block("validation", 0, 1)

    def test_spans_compress_runs(self):
        seeds = seed_block("train", 0, 6) + [5, 3, 4, 9]
        spans = seed_spans(seeds)
        assert spans == [[3, 3], [9, 1], [10_000_000, 6]]
        assert expand_spans(spans) == sorted(set(seeds))
        assert seed_spans([]) == []


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        tensors = {"w": torch.randn(3, 4, dtype=torch.float64), "b": torch.randn(4, dtype=torch.float64)}
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, tensors, {"kind": "value"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"kind": "value"}
        for name, tensor in tensors.items():
            assert torch.equal(loaded[name], tensor)

    def test_same_content_same_bytes(self, tmp_path):
        tensors = {"w": torch.arange(6, dtype=torch.float64).reshape(2, 3)}
        first = save_checkpoint(tmp_path / "a.ckpt", tensors, {"kind": "value", "task": "reach"})
        second = save_checkpoint(tmp_path / "b.ckpt", tensors, {"task": "reach", "kind": "value"})
        assert first == second

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, {"w": torch.ones(10, dtype=torch.float64)}, {})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestManifest:
    def _manifest(self, dataset_sha: str, lr: float = 1e-3) -> RunManifest:
        config = RunConfig().model_dump(mode="json")
        config["student"]["lr"] = lr
        return RunManifest(
            stage="distill",
            seed=0,
            config=config,
            inputs={"dataset": {"path": f"/data/{dataset_sha}.jsonl", "sha256": dataset_sha}},
        )

    def test_written_manifest_reads_back(self, tmp_path):
        manifest = self._manifest("abc")
        path = write_manifest(tmp_path, manifest)
        loaded = read_manifest(tmp_path)
        assert loaded.config == manifest.config
        assert loaded.inputs == manifest.inputs
        assert yaml.safe_load(path.read_text())["stage"] == "distill"

    def test_parity_allows_dataset_difference(self):
        assert_parity([self._manifest("aaa"), self._manifest("bbb")])

    def test_parity_rejects_hyperparameter_difference(self):
        first, second = self._manifest("aaa"), self._manifest("bbb", lr=5e-4)
        assert "config.student.lr" in diff_manifests(first, second)
        with pytest.raises(ConfigurationError, match="student.lr"):
            assert_parity([first, second])
