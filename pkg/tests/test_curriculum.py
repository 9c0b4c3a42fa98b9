import shutil

import numpy as np
import pytest
import torch

from conftest import state_param_checksum, tiny_config
from evovid.captions import InvalidInputError
from evovid.checkpoint import CheckpointFormatError, MAGIC
from evovid.curriculum import (CurriculumConfig, MetricsLog, TrainingLockError,
                               advance_step, config_from_text, config_to_text,
                               config_with_overrides, fit_caption_pca,
                               generate_clips, init_state, inspect_checkpoint,
                               load_checkpoint, run_stage1, run_step,
                               save_checkpoint, train, _TrainContext,
                               _train_iteration)


def fresh_state(tiny_index, **overrides):
    cfg = tiny_config(**overrides)
    return init_state(cfg, fit_caption_pca(tiny_index, cfg))


class TestConfig:
    def test_text_roundtrip(self):
        cfg = tiny_config(steps_mask=(1, 2), nonsaturating_g=True)
        assert config_from_text(config_to_text(cfg)) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidInputError):
            config_from_text("bogus_key=1\n")

    def test_mask_must_include_final_step(self):
        with pytest.raises(InvalidInputError):
            tiny_config(n=4, steps_mask=(1, 2)).validate()

    def test_mask_range_checked(self):
        with pytest.raises(InvalidInputError):
            tiny_config(n=2, steps_mask=(1, 2, 3)).validate()

    def test_budget_redistribution(self):
        cfg = CurriculumConfig(n=4, iters_per_step=1500, steps_mask=(1, 4))
        assert cfg.step_budgets() == {1: 1500, 4: 4500}
        cfg = CurriculumConfig(n=4, iters_per_step=1500, steps_mask=(2, 4))
        assert cfg.step_budgets() == {2: 3000, 4: 3000}

    def test_overrides(self):
        cfg = config_with_overrides(tiny_config(), n=3, steps_mask=[3],
                                    batch_size=None)
        assert cfg.n == 3 and cfg.steps_mask == (3,)
        assert cfg.batch_size == tiny_config().batch_size


class TestStageMachine:
    def test_zero_budget_leaves_networks_untouched(self, tiny_index):
        state = fresh_state(tiny_index, iters_stage1=0)
        before = state_param_checksum(state)
        run_stage1(state, tiny_index)
        assert state.global_iter == 0
        assert state_param_checksum(state) == before

    def test_one_iteration_one_update_each(self, tiny_index):
        state = fresh_state(tiny_index)
        ctx = _TrainContext(state, tiny_index)
        _train_iteration(state, ctx, None)
        g_param = next(iter(state.generator.parameters()))
        d_param = next(iter(state.image_disc.parameters()))
        assert int(state.opt_g.state[g_param]["step"]) == 1
        assert int(state.opt_di.state[d_param]["step"]) == 1

    def test_update_order_g_then_di_then_ds(self, tiny_index):
        state = fresh_state(tiny_index)
        advance_step(state, 1)
        order = []
        for name in ("opt_g", "opt_di", "opt_ds"):
            opt = getattr(state, name)
            orig = opt.step
            opt.step = (lambda o=orig, n=name: (order.append(n), o())[1])
        ctx = _TrainContext(state, tiny_index)
        _train_iteration(state, ctx, None)
        assert order == ["opt_g", "opt_di", "opt_ds"]

    def test_advance_doubles_channels(self, tiny_index):
        state = fresh_state(tiny_index)
        advance_step(state, 1)
        ch1 = state.step_disc.input_channels
        run_step(state, 1, tiny_index, budget=1)
        advance_step(state, 2)
        assert state.step_disc.input_channels == 2 * ch1

    def test_advance_preserves_other_models(self, tiny_index):
        state = fresh_state(tiny_index)
        ids = [id(p) for p in state.generator.parameters()]
        ids += [id(p) for p in state.recurrent.parameters()]
        ids += [id(p) for p in state.image_disc.parameters()]
        from conftest import param_checksum
        di_sum = param_checksum(state.image_disc)
        g_sum = param_checksum(state.generator)
        advance_step(state, 1)
        ids_after = [id(p) for p in state.generator.parameters()]
        ids_after += [id(p) for p in state.recurrent.parameters()]
        ids_after += [id(p) for p in state.image_disc.parameters()]
        assert ids == ids_after
        assert param_checksum(state.image_disc) == di_sum
        assert param_checksum(state.generator) == g_sum

    def test_advance_inherits_deeper_layers(self, tiny_index):
        state = fresh_state(tiny_index)
        advance_step(state, 1)
        run_step(state, 1, tiny_index, budget=1)
        prev_state = {k: v.clone() for k, v in state.step_disc.state_dict().items()}
        advance_step(state, 2)
        for key, val in state.step_disc.state_dict().items():
            if key == "trunk.0.weight":
                continue
            assert torch.equal(val, prev_state[key]), key

    def test_advance_random_init_ablation(self, tiny_index):
        state = fresh_state(tiny_index, use_eq1_init=False)
        advance_step(state, 1)
        run_step(state, 1, tiny_index, budget=1)
        prev_tail = {k: v.clone() for k, v in state.step_disc.state_dict().items()}
        advance_step(state, 2)
        same = [k for k, v in state.step_disc.state_dict().items()
                if k != "trunk.0.weight" and torch.equal(v, prev_tail[k])]
        assert not same  # fresh random weights share nothing

    def test_advance_past_n_rejected(self, tiny_index):
        state = fresh_state(tiny_index, n=2)
        with pytest.raises(InvalidInputError):
            advance_step(state, 3)

    def test_exactly_one_step_disc(self, tiny_index):
        state = fresh_state(tiny_index)
        assert state.step_disc is None
        advance_step(state, 1)
        first = state.step_disc
        run_step(state, 1, tiny_index, budget=1)
        advance_step(state, 2)
        assert state.step_disc is not first


class TestTrainSchedule:
    def test_full_run_schedule(self, tiny_index, tmp_path):
        cfg = tiny_config(iters_stage1=2, iters_per_step=2)
        out = tmp_path / "run"
        path = train(cfg, tiny_index, out)
        state = load_checkpoint(path)
        assert state.stage_label == "step2"
        assert state.global_iter == 2 + 2 + 2
        names = {p.name for p in out.glob("checkpoint_*.tivg")}
        assert {"checkpoint_done_stage1.tivg", "checkpoint_boundary_step1.tivg",
                "checkpoint_done_step1.tivg", "checkpoint_boundary_step2.tivg",
                "checkpoint_done_step2.tivg",
                "checkpoint_latest.tivg"} <= names
        lines = (out / "metrics.tsv").read_text().splitlines()
        stages = [line.split("\t")[1] for line in lines[1:]]
        assert stages == ["stage1"] * 2 + ["step1"] * 2 + ["step2"] * 2
        # step-discriminator columns are blank during the image stage
        assert lines[1].split("\t")[8] == "nan"

    def test_steps_mask_skips_and_rebalances(self, tiny_index, tmp_path):
        cfg = tiny_config(n=4, iters_stage1=1, iters_per_step=1,
                          steps_mask=(1, 4))
        path = train(cfg, tiny_index, tmp_path / "run")
        state = load_checkpoint(path)
        assert state.step_disc.step_index == 4
        lines = (tmp_path / "run" / "metrics.tsv").read_text().splitlines()
        stages = [line.split("\t")[1] for line in lines[1:]]
        assert stages == ["stage1", "step1", "step4", "step4", "step4"]

    def test_repeat_run_bit_identical(self, tiny_index, tmp_path):
        cfg = tiny_config(iters_stage1=2, iters_per_step=1)
        p1 = train(cfg, tiny_index, tmp_path / "a")
        p2 = train(cfg, tiny_index, tmp_path / "b")
        s1, s2 = load_checkpoint(p1), load_checkpoint(p2)
        assert state_param_checksum(s1) == state_param_checksum(s2)

    def test_lock_refuses_concurrent_run(self, tiny_index, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / ".lock").write_text("12345")
        with pytest.raises(TrainingLockError):
            train(tiny_config(), tiny_index, out)

    def test_dataset_too_short_rejected(self, tiny_index):
        state = fresh_state(tiny_index, n=5)
        with pytest.raises(InvalidInputError):
            run_stage1(state, tiny_index)


class TestCheckpoint:
    def test_roundtrip_bitexact_forward(self, tiny_index, tmp_path):
        state = fresh_state(tiny_index)
        ctx = _TrainContext(state, tiny_index)
        for _ in range(2):
            _train_iteration(state, ctx, None)
        path = tmp_path / "ck.tivg"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert state_param_checksum(loaded) == state_param_checksum(state)
        a = generate_clips(state, "a red circle moving left", 1, seed=3)
        b = generate_clips(loaded, "a red circle moving left", 1, seed=3)
        assert np.array_equal(a, b)

    def test_pca_persisted(self, tiny_index, tmp_path):
        state = fresh_state(tiny_index)
        path = tmp_path / "ck.tivg"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.pca.mean, state.pca.mean)
        assert np.array_equal(loaded.pca.components, state.pca.components)

    def test_corrupted_magic(self, tiny_index, tmp_path):
        state = fresh_state(tiny_index)
        path = tmp_path / "ck.tivg"
        save_checkpoint(state, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_version_mismatch(self, tiny_index, tmp_path):
        state = fresh_state(tiny_index)
        path = tmp_path / "ck.tivg"
        save_checkpoint(state, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated_file(self, tiny_index, tmp_path):
        state = fresh_state(tiny_index)
        path = tmp_path / "ck.tivg"
        save_checkpoint(state, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_resume_equals_uninterrupted(self, tiny_index, tmp_path):
        cfg = tiny_config(iters_stage1=3, iters_per_step=2, checkpoint_every=2)
        full = train(cfg, tiny_index, tmp_path / "full")
        # restart from a mid-run periodic checkpoint
        mid_dir = tmp_path / "mid"
        mid_dir.mkdir()
        # rerun the first part only: train writes periodic checkpoints; take
        # the one at global iteration 4 by replaying a fresh run with the
        # same seed and stopping early via a copy of the latest file
        probe_dir = tmp_path / "probe"
        state = init_state(cfg, fit_caption_pca(tiny_index, cfg))
        log = MetricsLog(probe_dir / "metrics.tsv", offset=0)
        ctx = _TrainContext(state, tiny_index)
        for _ in range(3):
            _train_iteration(state, ctx, log)
        advance_step(state, 1)
        ctx = _TrainContext(state, tiny_index)
        _train_iteration(state, ctx, log)
        state.metrics_offset = log.offset()
        log.close()
        save_checkpoint(state, mid_dir / "checkpoint_latest.tivg")
        shutil.copy(probe_dir / "metrics.tsv", mid_dir / "metrics.tsv")
        resumed = train(cfg, tiny_index, mid_dir, resume=True)
        s_full, s_res = load_checkpoint(full), load_checkpoint(resumed)
        assert state_param_checksum(s_full) == state_param_checksum(s_res)
        assert ((tmp_path / "full" / "metrics.tsv").read_text()
                == (mid_dir / "metrics.tsv").read_text())

    def test_inspect(self, tiny_index, tmp_path):
        cfg = tiny_config(iters_stage1=1, iters_per_step=1)
        path = train(cfg, tiny_index, tmp_path / "run")
        info = inspect_checkpoint(path)
        assert info["stage"] == "step2"
        assert info["global_iteration"] == 3
        assert info["step_disc_input_channels"] == 4 * 3
        assert set(info["parameter_counts"]) == {"generator", "recurrent",
                                                 "image_disc", "step_disc"}


class TestGenerateClips:
    def test_shape_and_determinism(self, tiny_index):
        state = fresh_state(tiny_index)
        a = generate_clips(state, "a red circle moving left", 2, seed=1)
        b = generate_clips(state, "a red circle moving left", 2, seed=1)
        c = generate_clips(state, "a red circle moving left", 2, seed=2)
        assert a.shape == (2, 4, 3, 16, 16)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert a.min() >= -1.0 and a.max() <= 1.0
