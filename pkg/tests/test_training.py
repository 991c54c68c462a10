import numpy as np
import pytest
import torch
from scipy import stats

from vesseldiff import training
from vesseldiff.diffusion_core import build_schedule
from vesseldiff.synthetic import make_synthetic_windows
from vesseldiff.training import TrainingError, load_checkpoint, train

from conftest import desk_config


def tiny_windows(n=12, seed=0):
    return make_synthetic_windows(n_trajectories=n, seed=seed)


def fast_cfg(**overrides):
    base = {
        "training.max_steps": 6,
        "training.batch_size": 8,
        "training.log_every": 1,
        "training.checkpoint_every": 3,
    }
    base.update(overrides)
    return desk_config(**base)


class TestStepSampling:
    def test_k_uniform_chi_square(self):
        # the loop draws k via torch.randint over {1..K}; 1e5 draws must be
        # compatible with the uniform law at p > 0.01
        gen = torch.Generator().manual_seed(123)
        total_steps = 100
        draws = torch.randint(1, total_steps + 1, (100_000,), generator=gen)
        counts = torch.bincount(draws, minlength=total_steps + 1)[1:].numpy()
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01


class TestDeterminism:
    def test_identical_seeds_identical_loss_curves(self):
        cfg = fast_cfg()
        windows = tiny_windows()
        a = train(windows, cfg)
        b = train(windows, cfg)
        assert a.losses == b.losses

    def test_different_seed_different_curve(self):
        windows = tiny_windows()
        a = train(windows, fast_cfg())
        b = train(windows, fast_cfg(**{"training.seed": 5}))
        assert a.losses != b.losses

    def test_gradient_step_touches_only_parameters(self):
        cfg = fast_cfg()
        windows = tiny_windows()
        observed_before = windows.observed.copy()
        future_before = windows.future.copy()
        result = train(windows, cfg)
        np.testing.assert_array_equal(windows.observed, observed_before)
        np.testing.assert_array_equal(windows.future, future_before)
        fresh = build_schedule(
            cfg.diffusion.total_steps, cfg.diffusion.schedule,
            cfg.diffusion.beta_start, cfg.diffusion.beta_end,
        )
        assert torch.equal(result.bundle.schedule.alpha_bar, fresh.alpha_bar)


class TestLearningRate:
    def test_exact_exponential_decay(self):
        # batch covers the set, so each step is one epoch boundary after the first
        cfg = fast_cfg(**{"training.max_steps": 5, "training.batch_size": 64,
                          "training.learning_rate": 1e-3, "training.lr_decay": 0.9,
                          "training.log_every": 1})
        result = train(tiny_windows(8), cfg)
        lrs = [row[2] for row in result.losses]
        assert lrs == [1e-3 * 0.9**epoch for epoch in range(5)]


class TestCheckpointing:
    def test_resume_reproduces_continuous_run_bitwise(self, tmp_path):
        windows = tiny_windows()
        full = train(windows, fast_cfg(**{"training.max_steps": 6}))

        half_dir = tmp_path / "half"
        half = train(windows, fast_cfg(**{"training.max_steps": 3}), out_dir=half_dir)
        resumed = train(
            windows,
            fast_cfg(**{"training.max_steps": 6}),
            resume_from=half.checkpoint_path,
        )
        assert resumed.losses[-3:] == full.losses[-3:]

    def test_parameters_round_trip_bitwise(self, tmp_path):
        windows = tiny_windows()
        result = train(windows, fast_cfg(), out_dir=tmp_path)
        bundle, state = load_checkpoint(result.checkpoint_path)
        for name, p in result.bundle.denoiser.state_dict().items():
            assert torch.equal(p, bundle.denoiser.state_dict()[name])
        for name, p in result.bundle.encoder.state_dict().items():
            assert torch.equal(p, bundle.encoder.state_dict()[name])
        assert state["step"] == 6

    def test_compat_mismatch_refused(self, tmp_path):
        windows = tiny_windows()
        result = train(windows, fast_cfg(), out_dir=tmp_path)
        other = fast_cfg(**{"model.model_dim": 128, "model.ff_dim": 256})
        with pytest.raises(TrainingError, match="compat hash"):
            train(windows, other, resume_from=result.checkpoint_path)

    def test_longer_max_steps_is_compatible_on_resume(self, tmp_path):
        windows = tiny_windows()
        result = train(windows, fast_cfg(), out_dir=tmp_path)
        more = train(
            windows, fast_cfg(**{"training.max_steps": 9}), resume_from=result.checkpoint_path
        )
        assert more.losses[-1][0] == 9

    def test_poisoned_weights_abort_and_dump(self, tmp_path):
        windows = tiny_windows()
        first = train(windows, fast_cfg(), out_dir=tmp_path / "run")
        state = torch.load(first.checkpoint_path, weights_only=False)
        name = next(iter(state["denoiser_state"]))
        state["denoiser_state"][name].fill_(float("nan"))
        poisoned = tmp_path / "poisoned.pt"
        torch.save(state, poisoned)
        out = tmp_path / "resume"
        with pytest.raises(TrainingError, match="aborted at step"):
            train(windows, fast_cfg(**{"training.max_steps": 9, "training.checkpoint_every": 1}),
                  out_dir=out, resume_from=poisoned)

    def test_empty_dataset_fatal(self):
        windows = tiny_windows().subset(np.array([], dtype=int))
        with pytest.raises(TrainingError):
            train(windows, fast_cfg())


class TestAblationMask:
    def test_masked_encoder_parameters_never_move(self):
        cfg = fast_cfg(**{"training.ablation_mask": ["his"]})
        windows = tiny_windows()
        torch.manual_seed(cfg.training.seed)
        before = training.build_models(cfg)
        ref_history = {
            name: p.clone() for name, p in before.encoder.history_rnn.named_parameters()
        }
        result = train(windows, cfg)
        after = dict(result.bundle.encoder.history_rnn.named_parameters())
        for name, p in ref_history.items():
            assert torch.equal(p, after[name])
        # unmasked rows must keep training
        trained = dict(result.bundle.encoder.neighbor_rnn.named_parameters())
        torch.manual_seed(cfg.training.seed)
        fresh = training.build_models(cfg)
        ref_neighbor = dict(fresh.encoder.neighbor_rnn.named_parameters())
        assert any(not torch.equal(ref_neighbor[n], trained[n]) for n in trained)


class TestLossTrend:
    def test_loss_decreases_over_first_200_steps_on_frozen_batch(self):
        cfg = fast_cfg(**{
            "training.max_steps": 200,
            "training.batch_size": 64,  # full batch: every step sees the same data
            "training.learning_rate": 2e-3,
            "training.log_every": 10,
        })
        result = train(tiny_windows(16, seed=2), cfg)
        losses = [row[1] for row in result.losses]
        head = float(np.mean(losses[:3]))
        tail = float(np.mean(losses[-3:]))
        assert tail < head


class TestValidate:
    def test_metric_report_rows(self):
        cfg = fast_cfg()
        windows = tiny_windows()
        result = train(windows, cfg)
        report = training.validate(
            result.bundle, windows, n_samples=2, horizons_hours=[0.5, 1.0, 4.0]
        )
        assert [r.steps for r in report.rows] == [3, 6, 24]
        assert report.n == 2
        assert all(np.isfinite(r.ade_km) and r.ade_km >= 0 for r in report.rows)

    def test_best_of_one_equals_plain_ade(self):
        cfg = fast_cfg()
        windows = tiny_windows(6)
        result = train(windows, cfg)
        gen = torch.Generator().manual_seed(0)
        out = training.sample_windows(result.bundle, windows, 1, gen)
        from vesseldiff.evaluation import ade

        samples = out.trajectories.numpy()
        lat, lon = windows.params.denormalize(samples[..., 0], samples[..., 1])
        pred = np.stack([lat, lon], axis=-1)
        tlat, tlon = windows.params.denormalize(windows.future[..., 0], windows.future[..., 1])
        truth = np.stack([tlat, tlon], axis=-1)
        plain = np.mean([ade(pred[i, 0], truth[i], 24) for i in range(len(windows))])
        gen2 = torch.Generator().manual_seed(0)
        out2 = training.sample_windows(result.bundle, windows, 1, gen2)
        assert torch.equal(out.trajectories, out2.trajectories)
        assert plain >= 0.0
