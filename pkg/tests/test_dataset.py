"""Dataset files, replay verification, mixing and generation."""

import pytest

from diffusion_datagen.core.errors import (
    DataError,
    DatasetChecksumError,
    DatasetTruncatedError,
    DatasetVersionError,
    GenerationBudgetError,
)
from diffusion_datagen.data.datagen import generate_dataset
from diffusion_datagen.data.dataset import (
    Dataset,
    mix_datasets,
    read_dataset,
    verify_replay,
    write_dataset,
)
from diffusion_datagen.envs import get_task
from diffusion_datagen.envs.scripted import ScriptedReplayPolicy, scripted_demo, style_for


def demo_dataset(task="reach", seeds=range(4)):
    records = [scripted_demo(get_task(task), seed, style_for(seed)) for seed in seeds]
    return Dataset.from_records(records, "scripted_human")


class TestFile:
    def test_round_trip(self, tmp_path):
        dataset = demo_dataset()
        write_dataset(tmp_path / "d.jsonl", dataset)
        assert read_dataset(tmp_path / "d.jsonl") == dataset

    def test_identical_bytes(self, tmp_path):
        dataset = demo_dataset()
        assert write_dataset(tmp_path / "a.jsonl", dataset) == write_dataset(tmp_path / "b.jsonl", dataset)

    def test_header_describes_tasks(self):
        header = demo_dataset().header
        assert [entry.name for entry in header.tasks] == ["reach"]
        assert header.obs_dim == 17 and header.action_dim == 3 and header.chunk_len == 4

    def test_corrupt_byte(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, demo_dataset())
        payload = bytearray(path.read_bytes())
        index = payload.index(b'"reward":') + 9
        payload[index] = ord("7") if payload[index] != ord("7") else ord("8")
        path.write_bytes(bytes(payload))
        with pytest.raises(DatasetChecksumError):
            read_dataset(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, demo_dataset())
        lines = path.read_bytes().splitlines(keepends=True)
        path.write_bytes(b"".join(lines[:-1]))
        with pytest.raises(DatasetTruncatedError):
            read_dataset(path)
        path.write_bytes(b"".join(lines)[:-20])
        with pytest.raises(DatasetTruncatedError):
            read_dataset(path)

    @pytest.mark.parametrize(
        "old,new",
        [(b'{"sha256":"', b'{"sha257":"'), (b'"}\n', b'g"}\n'), (b'"}\n', b'\n'), (b'{"sha256"', b'["sha256"')],
    )
    def test_damaged_checksum_line(self, tmp_path, old, new):
        path = tmp_path / "d.jsonl"
        write_dataset(path, demo_dataset())
        lines = path.read_bytes().splitlines(keepends=True)
        assert lines[-1].startswith(b'{"sha256":"')
        lines[-1] = lines[-1].replace(old, new)
        path.write_bytes(b"".join(lines))
        with pytest.raises(DatasetChecksumError):
            read_dataset(path)

    def test_flipped_digest_character(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, demo_dataset())
        payload = bytearray(path.read_bytes())
        index = len(payload) - 4
        payload[index] = ord("0") if payload[index] != ord("0") else ord("1")
        path.write_bytes(bytes(payload))
        with pytest.raises(DatasetChecksumError):
            read_dataset(path)

    def test_unsupported_version(self, tmp_path):
        dataset = demo_dataset()
        dataset.header.format_version = 99
        write_dataset(tmp_path / "d.jsonl", dataset)
        with pytest.raises(DatasetVersionError):
            read_dataset(tmp_path / "d.jsonl")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_dataset(tmp_path / "absent.jsonl")


class TestReplay:
    @pytest.mark.parametrize("task", ["reach", "push", "longhorizon"])
    def test_scripted_records_replay(self, task):
        for record in demo_dataset(task, range(3)).records:
            assert verify_replay(record) == []

    def test_tampered_reward_detected(self):
        record = demo_dataset(seeds=[0]).records[0]
        record.steps[-1].reward = 0.0
        assert verify_replay(record)


class TestMix:
    def test_mixed_keeps_record_sources(self):
        human = demo_dataset(seeds=range(4))
        other = demo_dataset(seeds=range(10, 14))
        for record in other.records:
            record.source = "diffusion_rl"
        mixed = mix_datasets(human, other, 1.0)
        assert mixed.source == "mixed"
        assert sorted(r.source for r in mixed.records) == ["diffusion_rl"] * 4 + ["scripted_human"] * 4

    def test_ratio(self):
        mixed = mix_datasets(demo_dataset(seeds=range(4)), demo_dataset(seeds=range(10, 12)), 0.5)
        assert len(mixed) == 6


class TestGenerate:
    def test_collects_successes_with_provenance(self):
        task = get_task("reach")
        dataset = generate_dataset(
            {"reach": ScriptedReplayPolicy()}, [task], 3, "diffusion_rl", checkpoint_hashes={"reach": "abc"}
        )
        assert len(dataset) == 3
        assert all(r.success and r.source == "diffusion_rl" and r.checkpoint_hash == "abc" for r in dataset.records)
        assert all(verify_replay(r) == [] for r in dataset.records)

    def test_deterministic_file(self, tmp_path):
        tasks = [get_task("reach")]
        first = generate_dataset({"reach": ScriptedReplayPolicy()}, tasks, 2, "diffusion_rl")
        second = generate_dataset({"reach": ScriptedReplayPolicy()}, tasks, 2, "diffusion_rl")
        assert write_dataset(tmp_path / "a.jsonl", first) == write_dataset(tmp_path / "b.jsonl", second)

    def test_budget_exhausted(self, schedule):
        from diffusion_datagen.diffusion.nets import NoisePredictor
        from diffusion_datagen.diffusion.policy import DiffusionPolicy

        policy = DiffusionPolicy(NoisePredictor(12, 17, hidden_dim=8, cond_dim=4), schedule)
        with pytest.raises(GenerationBudgetError):
            generate_dataset({"pickplace": policy}, [get_task("pickplace")], 1, "diffusion_rl", retry_factor=2)
