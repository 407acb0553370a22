import tempfile
import unittest
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from scipy import stats

from p3d.datagen.storage import DatasetContainer
from p3d.models.backbone import P3D
from p3d.models.config import preset
from p3d.training.crops import crop_sample
from p3d.training.data import PairDataset
from p3d.training.losses import SIGMA_MIN, fm_sample_xt, fm_target, mse_loss
from p3d.training.optim import EMA, OptimizerState, adamw_step, ema_update
from p3d.training.sampler import euler_sample
from p3d.training.setups import TrainSetup
from p3d.training.trainer import LOSS_COLUMNS, LOSS_LOG, Trainer, TrainingError
from p3d.validation import ValidationError


def synthetic_container(snapshots: int = 4, extent: int = 16, channels: int = 3, seed: int = 0,
                        fill: Optional[float] = None) -> DatasetContainer:
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((snapshots, channels, extent, extent, extent)).astype(np.float32)
    if fill is not None:
        data[:] = fill
    manifest = {"family": "synthetic", "channel_names": [f"c{i}" for i in range(channels)],
                "params": {"nu": 0.25}}
    return DatasetContainer(manifest, data)


class TestFlowMatching(unittest.TestCase):
    def setUp(self):
        """A float64 target and noise draw"""
        generator = torch.Generator().manual_seed(0)
        self.u = torch.randn(2, 3, 4, 4, 4, generator=generator, dtype=torch.float64)
        self.eps = torch.randn(2, 3, 4, 4, 4, generator=generator, dtype=torch.float64)

    def test_target_is_time_derivative_of_path(self):
        """Central differences of x_t in t match the regression target"""
        h = 1e-4
        for t in (0.1, 0.5, 0.9):
            derivative = (fm_sample_xt(self.u, self.eps, t + h) - fm_sample_xt(self.u, self.eps, t - h)) / (2 * h)
            self.assertLessEqual(float((derivative - fm_target(self.u, self.eps)).abs().max()), 1e-4)

    def test_path_endpoints(self):
        """x_0 is pure noise and x_1 is the data plus σ_min noise"""
        torch.testing.assert_close(fm_sample_xt(self.u, self.eps, 0.0), self.eps)
        torch.testing.assert_close(fm_sample_xt(self.u, self.eps, 1.0), self.u + SIGMA_MIN * self.eps)

    def test_per_sample_times_and_range(self):
        """A vector of times applies per batch entry; times outside [0, 1] raise"""
        x = fm_sample_xt(self.u, self.eps, torch.tensor([0.0, 1.0]))
        torch.testing.assert_close(x[0], self.eps[0])
        with self.assertRaises(ValidationError):
            fm_sample_xt(self.u, self.eps, 1.5)

    def test_euler_follows_exact_velocity(self):
        """Integrating the exact path velocity lands on the data end of the path"""
        def velocity(u_in, x, cond):
            return fm_target(self.u, self.eps)

        out = euler_sample(velocity, None, None, steps=10, x0=self.eps)
        torch.testing.assert_close(out, self.u + SIGMA_MIN * self.eps)

    def test_euler_needs_shape_or_start(self):
        """Sampling without a shape or x0 raises"""
        with self.assertRaises(ValidationError):
            euler_sample(lambda u, x, c: x, None, None, steps=2)

    def test_mse_checks_shapes(self):
        """Mismatched prediction and target shapes raise"""
        with self.assertRaises(ValidationError):
            mse_loss(self.u, self.u[:1])


class TestCropsAndOptimizer(unittest.TestCase):
    def setUp(self):
        """A pair of distinguishable fields"""
        self.s_in = torch.arange(8 * 8 * 8, dtype=torch.float32).reshape(1, 8, 8, 8)
        self.s_out = -self.s_in

    def test_pair_cropped_at_same_offset(self):
        """Input and target crops come from the same window"""
        a, b = crop_sample((self.s_in, self.s_out), 4, torch.Generator().manual_seed(1))
        self.assertEqual(tuple(a.shape), (1, 4, 4, 4))
        self.assertTrue(torch.equal(a, -b))

    def test_full_size_crop_is_identity(self):
        """A crop as large as the domain returns the whole pair"""
        a, b = crop_sample((self.s_in, self.s_out), 8, torch.Generator().manual_seed(3))
        self.assertTrue(torch.equal(a, self.s_in))
        self.assertTrue(torch.equal(b, self.s_out))

    def test_seed_reproduces_crops(self):
        """The same generator seed picks the same window"""
        a, _ = crop_sample((self.s_in, self.s_out), 3, torch.Generator().manual_seed(5))
        b, _ = crop_sample((self.s_in, self.s_out), 3, torch.Generator().manual_seed(5))
        self.assertTrue(torch.equal(a, b))

    def test_offsets_uniform(self):
        """10⁴ crops of 32 from 64 spread their offsets evenly over [0, 32]"""
        coords = torch.stack(torch.meshgrid(*(torch.arange(64),) * 3, indexing="ij"))
        generator = torch.Generator().manual_seed(0)
        offsets = np.array([
            crop_sample((coords, coords), 32, generator)[0][:, 0, 0, 0].tolist() for _ in range(10_000)
        ])
        for axis in range(3):
            counts = np.bincount(offsets[:, axis], minlength=33)
            self.assertEqual(len(counts), 33)
            self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)

    def test_oversized_crop_raises(self):
        """Crops larger than the domain are rejected"""
        with self.assertRaises(ValidationError):
            crop_sample((self.s_in, self.s_out), 9, torch.Generator())

    def test_ema_update(self):
        """ema ← decay·ema + (1 - decay)·w"""
        ema = [torch.ones(3)]
        ema_update([torch.zeros(3)], ema, decay=0.9)
        torch.testing.assert_close(ema[0], torch.full((3,), 0.9))

    def test_ema_tracks_model(self):
        """EMA shadows follow the model and copy back into a clone"""
        model = nn.Linear(2, 1)
        ema = EMA(model, decay=0.5)
        with torch.no_grad():
            model.weight.add_(2.0)
        before = ema.shadow["weight"].clone()
        ema.update()
        torch.testing.assert_close(ema.shadow["weight"], before + 1.0)
        averaged = ema.averaged_model()
        torch.testing.assert_close(averaged.weight, ema.shadow["weight"])
        with self.assertRaises(ValidationError):
            ema.load_state_dict({})

    def test_adamw_skips_parameters_without_gradient(self):
        """Parameters with a None gradient stay unchanged"""
        a = nn.Parameter(torch.ones(2))
        b = nn.Parameter(torch.ones(2))
        state = OptimizerState([a, b], lr=0.1, wd=0.0)
        adamw_step([a, b], [torch.ones(2), None], state)
        torch.testing.assert_close(b.detach(), torch.ones(2))
        self.assertLess(float(a.detach().max()), 1.0)
        with self.assertRaises(ValidationError):
            adamw_step([b, a], [None, None], state)

    def test_mse_regresses_to_mean_of_targets(self):
        """A constant predictor trained on two targets settles on their average"""
        c = nn.Parameter(torch.zeros(1))
        state = OptimizerState([c], lr=0.01, wd=0.0)
        targets = torch.tensor([1.0, 3.0])
        for _ in range(1500):
            loss = mse_loss(c.expand(2), targets)
            (grad,) = torch.autograd.grad(loss, [c])
            adamw_step([c], [grad], state)
        self.assertAlmostEqual(float(c), 2.0, delta=1e-2)


class TestPairDataset(unittest.TestCase):
    def setUp(self):
        """Two-channel data for a three-channel model"""
        self.container = synthetic_container(snapshots=5, extent=8, channels=2)

    def test_pairs_pad_channels(self):
        """Missing channels are zero-filled and keys name the source"""
        data = PairDataset([self.container], channels=3, param_keys=["nu"], names=["gs"])
        self.assertEqual(len(data), 4)
        sample = data[2]
        self.assertEqual(tuple(sample.u_in.shape), (3, 8, 8, 8))
        self.assertFalse(sample.u_in[2].any())
        np.testing.assert_array_equal(sample.u_out[:2].numpy(), self.container.snapshots[3])
        self.assertEqual(sample.key, "gs:2")
        self.assertEqual(float(sample.params[0]), 0.25)

    def test_history_stacks_oldest_first(self):
        """With history 2 the input holds states t-1 and t"""
        data = PairDataset([self.container], channels=2, history=2)
        self.assertEqual(len(data), 3)
        sample = data[0]
        np.testing.assert_array_equal(sample.u_in[:2].numpy(), self.container.snapshots[0])
        np.testing.assert_array_equal(sample.u_in[2:].numpy(), self.container.snapshots[1])

    def test_too_many_channels_raise(self):
        """Datasets wider than the model are rejected"""
        with self.assertRaises(ValidationError):
            PairDataset([self.container], channels=1)


class TestTrainer(unittest.TestCase):
    def setUp(self):
        """Synthetic data and a scratch run directory"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.data = PairDataset([synthetic_container()], channels=3)

    def tearDown(self):
        self.tmp.cleanup()

    def _trainer(self, out: str, steps: int, checkpoint_every: int = 100, **overrides) -> Trainer:
        torch.manual_seed(0)
        model = P3D(preset("tiny", **overrides.pop("model", {})))
        options = dict(mode="crops", crop_size=8, batch=2, steps=steps, lr=1e-3,
                       checkpoint_every=checkpoint_every, log_every=1)
        options.update(overrides)
        setup = TrainSetup(**options)
        return Trainer(model, setup, self.data, self.root / out, seed=11)

    def test_loop_writes_checkpoints_and_loss_log(self):
        """Checkpoints land every checkpoint_every steps and at the end"""
        trainer = self._trainer("run", steps=3, checkpoint_every=2)
        paths = list(trainer.train_loop())
        self.assertEqual([p.name for p in paths], ["step_0000002", "step_0000003"])
        frame = pd.read_csv(self.root / "run" / LOSS_LOG)
        self.assertEqual(list(frame.columns), LOSS_COLUMNS)
        self.assertEqual(frame["step"].tolist(), [1, 2, 3])
        self.assertTrue(np.isfinite(frame["loss"]).all())

    def test_resume_matches_uninterrupted_run(self):
        """Stopping at step 2 and resuming gives the same losses as one run"""
        straight = self._trainer("a", steps=4)
        list(straight.train_loop())

        first = self._trainer("b", steps=2, checkpoint_every=2)
        list(first.train_loop())
        resumed = self._trainer("b", steps=4)
        resumed.resume(self.root / "b" / "checkpoints" / "step_0000002")
        self.assertEqual(resumed.step, 2)
        list(resumed.train_loop())
        np.testing.assert_allclose(resumed.losses, straight.losses, rtol=1e-6)

    def test_flow_objective_trains(self):
        """Flow matching conditions on the noisy state and diffusion time"""
        trainer = self._trainer("flow", steps=2, objective="flow", model={"in_channels": 6})
        list(trainer.train_loop())
        self.assertEqual(len(trainer.losses), 2)
        self.assertTrue(all(np.isfinite(trainer.losses)))

    def test_non_finite_loss_dumps_diagnostics(self):
        """A NaN loss raises TrainingError after writing a diagnostic dump"""
        self.data = PairDataset([synthetic_container(fill=float("nan"))], channels=3)
        trainer = self._trainer("nan", steps=2)
        with self.assertRaises(TrainingError) as ctx:
            list(trainer.train_loop())
        dump = Path(ctx.exception.dump_path)
        self.assertTrue((dump / "report.json").is_file())
        self.assertTrue((dump / "model" / "manifest.json").is_file())
        self.assertEqual(ctx.exception.step, 0)

    def test_context_mode_needs_context_model(self):
        """Context setups reject a bare backbone"""
        with self.assertRaises(ValidationError):
            self._trainer("ctx", steps=1, mode="context_full", region_size=8)


if __name__ == '__main__':
    unittest.main()
