import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from p3d.cli import enstrophy_crop_size, main
from p3d.config import ConfigError, GenConfig, load_run_config, read_layered
from p3d.evaluation.rollout import Strategy
from p3d.validation import ValidationError


def write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data))
    return path


class TestConfigLoading(unittest.TestCase):
    def setUp(self):
        """A base file and a scratch directory"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        write_json(self.root / "base.json", {"seed": 3, "logging": {"level": "DEBUG", "format": "plain"}})

    def tearDown(self):
        self.tmp.cleanup()

    def test_extends_merges_and_resolves_paths(self):
        """Child values override the base and paths become absolute"""
        path = write_json(self.root / "sub" / "gen.json", {
            "extends": "../base.json", "family": "fisher", "out": "data", "logging": {"level": "WARNING"},
        })
        config = load_run_config("gen", path)
        self.assertIsInstance(config, GenConfig)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.logging.level, "WARNING")
        self.assertEqual(config.logging.format, "plain")
        self.assertEqual(Path(config.out), (self.root / "sub" / "data").resolve())

    def test_overrides_replace_file_values(self):
        """Command-line seed and out take precedence"""
        path = write_json(self.root / "gen.json", {"extends": "base.json", "family": "fisher"})
        config = load_run_config("gen", path, {"seed": 9, "out": str(self.root / "x"), "threads": None})
        self.assertEqual(config.seed, 9)
        self.assertIsNone(config.threads)

    def test_unknown_keys_rejected(self):
        """Misspelled keys fail instead of being ignored"""
        path = write_json(self.root / "gen.json", {"extends": "base.json", "family": "fisher", "simulatons": 2})
        with self.assertRaises(ConfigError) as ctx:
            load_run_config("gen", path)
        self.assertEqual(ctx.exception.field, "simulatons")

    def test_invalid_values_rejected(self):
        """Unknown families and malformed nested configs raise ConfigError"""
        path = write_json(self.root / "gen.json", {"family": "navier-stokes"})
        with self.assertRaises(ConfigError):
            load_run_config("gen", path)
        path = write_json(self.root / "train.json", {"data": {"datasets": ["d"]}, "setup": {"mode": "sideways"}})
        with self.assertRaises(ConfigError):
            load_run_config("train", path)

    def test_circular_extends(self):
        """A file extending itself through another raises"""
        write_json(self.root / "a.json", {"extends": "b.json"})
        write_json(self.root / "b.json", {"extends": "a.json"})
        with self.assertRaises(ConfigError):
            read_layered(self.root / "a.json")

    def test_shipped_configs_validate(self):
        """Every config file in the repository passes its schema"""
        config_dir = Path(__file__).resolve().parents[1] / "config"
        for command in ("gen", "train", "finetune", "rollout", "sample", "gradcheck"):
            load_run_config(command, config_dir / f"{command}.json")


class TestEnstrophyCrops(unittest.TestCase):
    def setUp(self):
        """A strategy whose crops do not tile a 48³ domain"""
        self.strategy = Strategy.parse("<32|48>")

    def test_training_crop_used_when_it_tiles(self):
        """Crops of the training resolution are used when they divide the domain"""
        self.assertEqual(enstrophy_crop_size((32, 32, 32), Strategy.parse("<16|32>")), 16)

    def test_whole_domain_when_crops_do_not_tile(self):
        """A cubic domain not tiled by the crops falls back to one whole-domain crop"""
        with self.assertLogs("p3d.cli", level="WARNING"):
            self.assertEqual(enstrophy_crop_size((48, 48, 48), self.strategy), 48)

    def test_non_cubic_untiled_domain_raises(self):
        """Without a cubic fallback the mismatch is reported before any rollout"""
        with self.assertRaises(ValidationError):
            enstrophy_crop_size((48, 48, 96), self.strategy)


class TestCommands(unittest.TestCase):
    def setUp(self):
        """Scratch directory with a base config"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        write_json(self.root / "base.json", {"seed": 0, "logging": {"level": "WARNING", "format": "plain"}})

    def tearDown(self):
        self.tmp.cleanup()

    def _config(self, name: str, data: dict) -> str:
        return str(write_json(self.root / f"{name}.json", {"extends": "base.json", **data}))

    def _generate(self, out: str, threads: str = "1") -> Path:
        config = self._config("gen", {"family": "fisher", "simulations": 2, "resolution": [16, 16, 16],
                                      "snapshots": 4})
        self.assertEqual(main(["gen", config, "--out", str(self.root / out), "--threads", threads]), 0)
        return self.root / out

    def test_gen_is_reproducible_across_thread_counts(self):
        """Two generations with the same seed produce identical dataset digests"""
        first = json.loads((self._generate("a", "1") / "index.json").read_text())
        second = json.loads((self._generate("b", "2") / "index.json").read_text())
        self.assertEqual(sorted(first["datasets"]), ["fisher_0000", "fisher_0001"])
        self.assertEqual(first["datasets"], second["datasets"])

    def test_gradcheck_passes(self):
        """The finite-difference audit of the tiny model succeeds"""
        config = self._config("gradcheck", {"out": "audit", "extents": [8, 8, 8], "samples_per_tensor": 2})
        self.assertEqual(main(["gradcheck", config]), 0)
        report = json.loads((self.root / "audit" / "report.json").read_text())
        self.assertEqual(report["failed"], 0)
        self.assertGreater(report["tensors"], 10)

    def test_train_finetune_rollout_pipeline(self):
        """Pretrain on crops, finetune the context model and roll out both"""
        data = str(self._generate("data"))
        train = self._config("train", {
            "out": "pre", "data": {"datasets": [data]}, "model": {"preset": "tiny"},
            "setup": {"mode": "crops", "crop_size": 8, "batch": 1, "steps": 2, "checkpoint_every": 1},
        })
        self.assertEqual(main(["train", train]), 0)
        pretrained = self.root / "pre" / "checkpoints" / "step_0000002"
        self.assertTrue((pretrained / "manifest.json").is_file())
        self.assertEqual(len(pd.read_csv(self.root / "pre" / "loss.csv")), 2)

        finetune = self._config("finetune", {
            "out": "ctx", "pretrained": str(pretrained), "data": {"datasets": [data]},
            "context": {"layers": 1, "latent_dim": 16, "heads": 2},
            "setup": {"mode": "context_partial", "crop_size": 16, "region_size": 8, "batch": 1, "steps": 1,
                      "p_enc": 0.5, "p_dec": 0.5},
        })
        self.assertEqual(main(["finetune", finetune]), 0)

        for name, checkpoint, strategy in (("plain", pretrained, "<16|16>"),
                                           ("context", self.root / "ctx" / "checkpoints" / "step_0000001",
                                            "<X8|X16>")):
            rollout = self._config(f"rollout_{name}", {
                "out": f"eval_{name}", "checkpoint": str(checkpoint), "data": {"datasets": [data]},
                "strategy": strategy, "steps": 2,
            })
            self.assertEqual(main(["rollout", rollout]), 0)
            metrics = pd.read_csv(self.root / f"eval_{name}" / "metrics.csv")
            self.assertEqual(set(metrics["metric"]), {"nrmse"})
            self.assertEqual(len(metrics), 4)
            self.assertTrue((self.root / f"eval_{name}" / "slices" / "fisher_0000_pred.pgm").is_file())

    def test_flow_training_and_sampling(self):
        """A flow-matching model samples every state and reports profile moments"""
        data = str(self._generate("data"))
        train = self._config("train", {
            "out": "flow", "data": {"datasets": [data], "param_keys": ["reactivity"]},
            "setup": {"mode": "crops", "objective": "flow", "crop_size": 8, "batch": 1, "steps": 1},
        })
        self.assertEqual(main(["train", train]), 0)
        sample = self._config("sample", {
            "out": "samples", "checkpoint": str(self.root / "flow" / "checkpoints" / "step_0000001"),
            "data": {"datasets": [data], "param_keys": ["reactivity"]}, "steps": 2, "samples": 2,
            "group_by": "reactivity",
        })
        self.assertEqual(main(["sample", sample]), 0)
        metrics = pd.read_csv(self.root / "samples" / "metrics.csv")
        self.assertIn("pooled", set(metrics["run_id"]))
        self.assertEqual(set(metrics["metric"]), {"profile_l2_m1", "profile_l2_m2", "profile_l2_m3"})

    def test_invalid_runs_exit_nonzero(self):
        """Bad configs and misused commands return exit status 1"""
        bogus = self._config("bad", {"family": "fisher", "unknown": 1})
        self.assertEqual(main(["gen", bogus]), 1)
        train = self._config("train_ctx", {
            "data": {"datasets": [str(self.root / "missing")]},
            "setup": {"mode": "context_full", "region_size": 8},
        })
        self.assertEqual(main(["train", train]), 1)
        self.assertEqual(main(["gen", str(self.root / "nothing.json")]), 1)


if __name__ == '__main__':
    unittest.main()
