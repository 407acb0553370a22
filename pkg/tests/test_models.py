import tempfile
import unittest
from pathlib import Path

import torch

from p3d.models.attention import effective_window, log_relative_offsets, window_partition, window_reverse, WindowedMSA
from p3d.models.backbone import P3D
from p3d.models.blocks import EncoderBlock
from p3d.models.checkpoint import CheckpointError, checkpoint_digest, load_checkpoint, save_checkpoint
from p3d.models.conditioning import Conditioning
from p3d.models.config import PRESETS, ModelConfig, preset
from p3d.models.transformer import TransformerBlock
from p3d.numerics.gradcheck import perturb_parameters
from p3d.validation import ValidationError


def perturbed(model: torch.nn.Module, seed: int = 0) -> torch.nn.Module:
    """Noise on every parameter so zero-initialised branches contribute."""
    return perturb_parameters(model, 0.05, torch.Generator().manual_seed(seed))


class TestModelConfig(unittest.TestCase):
    def setUp(self):
        """The tiny audit configuration"""
        self.tiny = preset("tiny")

    def test_presets_are_valid(self):
        """S, B and L build valid configs with token spacing 32"""
        for name in ("S", "B", "L"):
            self.assertEqual(preset(name).token_spacing, 32)
        self.assertEqual(self.tiny.token_spacing, 8)
        self.assertIn("tiny", PRESETS)

    def test_unknown_preset_raises(self):
        """Unknown preset names are rejected"""
        with self.assertRaises(ValidationError):
            preset("XL")

    def test_token_grid_requires_divisible_extents(self):
        """Extents must be multiples of the token spacing"""
        self.assertEqual(self.tiny.token_grid((16, 24, 8)), (2, 3, 1))
        with self.assertRaises(ValidationError):
            self.tiny.token_grid((16, 12, 16))

    def test_invalid_widths_raise(self):
        """Widths not divisible by the group count are rejected"""
        with self.assertRaises(ValidationError):
            ModelConfig(embed_dims=[6, 6, 8], groups=4)

    def test_from_dict_accepts_preset_with_overrides(self):
        """A preset name plus overrides builds the merged config"""
        config = ModelConfig.from_dict({"preset": "tiny", "in_channels": 6})
        self.assertEqual(config.in_channels, 6)
        self.assertEqual(config.embed_dims, [4, 4, 8])
        self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)


class TestBlocks(unittest.TestCase):
    def setUp(self):
        """Random features and conditioning vectors"""
        self.generator = torch.Generator().manual_seed(3)
        self.x = torch.randn(2, 4, 4, 4, 4, generator=self.generator)
        self.e = torch.randn(2, 16, generator=self.generator)

    def test_fresh_encoder_block_is_identity(self):
        """Zero-initialised modulation and closing conv make a new block the identity"""
        block = EncoderBlock(4, 2, 16)
        self.assertTrue(torch.equal(block(self.x, self.e), self.x))

    def test_fresh_transformer_block_is_identity(self):
        """adaLN-Zero gates start at zero"""
        block = TransformerBlock(8, 16, WindowedMSA(8, 2, 2))
        tokens = torch.randn(2, 8, 8, generator=self.generator)
        self.assertTrue(torch.equal(block(tokens, self.e, (2, 2, 2)), tokens))

    def test_region_grid_modulation_matches_broadcast(self):
        """A constant per-region grid equals the plain conditioning vector"""
        block = perturbed(EncoderBlock(4, 2, 16))
        grid = self.e[:, :, None, None, None].expand(-1, -1, 2, 2, 2)
        torch.testing.assert_close(block(self.x, grid), block(self.x, self.e))


class TestAttention(unittest.TestCase):
    def setUp(self):
        """Tokens on a 4x2x4 grid"""
        self.grid = (4, 2, 4)
        self.x = torch.randn(2, 32, 8, generator=torch.Generator().manual_seed(5))

    def test_partition_reverse(self):
        """window_reverse undoes window_partition"""
        window = effective_window(2, self.grid)
        windows = window_partition(self.x, self.grid, window)
        self.assertEqual(tuple(windows.shape), (2 * 2 * 1 * 2, 8, 8))
        self.assertTrue(torch.equal(window_reverse(windows, self.grid, window, 2), self.x))

    def test_effective_window_clamps_and_checks(self):
        """Windows clamp to small grids and must divide the grid"""
        self.assertEqual(effective_window(4, (2, 8, 4)), (2, 4, 4))
        with self.assertRaises(ValidationError):
            effective_window(4, (6, 4, 4))

    def test_log_offsets_bounded(self):
        """Log-spaced offsets lie in [-1, 1] and vanish on the diagonal"""
        offsets = log_relative_offsets((4, 4, 4))
        self.assertLessEqual(float(offsets.abs().max()), 1.0 + 1e-6)
        self.assertTrue(torch.all(offsets[torch.arange(64), torch.arange(64)] == 0))

    def test_token_count_must_fill_grid(self):
        """A token count that does not match the grid raises"""
        msa = WindowedMSA(8, 2, 2)
        with self.assertRaises(ValidationError):
            msa(self.x[:, :30], self.grid)


class TestBackbone(unittest.TestCase):
    def setUp(self):
        """A perturbed tiny model on 16³ inputs"""
        torch.manual_seed(0)
        self.model = perturbed(P3D(preset("tiny")))
        self.x = torch.randn(2, 3, 16, 16, 16, generator=torch.Generator().manual_seed(1))

    def test_forward_shape(self):
        """Output has out_channels and the input extents"""
        self.assertEqual(tuple(self.model(self.x).shape), (2, 3, 16, 16, 16))

    def test_rejects_wrong_channels_and_extents(self):
        """Channel count and token-spacing divisibility are enforced"""
        with self.assertRaises(ValidationError):
            self.model(self.x[:, :2])
        with self.assertRaises(ValidationError):
            self.model(torch.zeros(1, 3, 12, 16, 16))

    def test_noisy_state_concatenates(self):
        """A flow model takes u_in and x_t stacked along channels"""
        model = P3D(preset("tiny", in_channels=6))
        out = model(self.x, torch.zeros_like(self.x), Conditioning(t=torch.tensor([0.1, 0.9])))
        self.assertEqual(tuple(out.shape), (2, 3, 16, 16, 16))

    def test_parameter_conditioning_changes_output(self):
        """Different physical parameters give different predictions"""
        model = perturbed(P3D(preset("tiny", num_params=1)))
        a = model(self.x, cond=Conditioning(params=torch.tensor([[0.1], [0.1]])))
        b = model(self.x, cond=Conditioning(params=torch.tensor([[0.9], [0.9]])))
        self.assertGreater(float((a - b).abs().max()), 0.0)

    def test_token_spacing_shift_commutes_with_single_token_windows(self):
        """With circular padding and one-token windows a shift by token_spacing shifts the output"""
        model = perturbed(P3D(preset("tiny", pad_mode="circular", window=1)))
        self._check_shift(model, self.x, model.config.token_spacing)

    def test_whole_window_shift_commutes_with_windowed_attention(self):
        """With multi-token windows a shift by token_spacing·window shifts the output"""
        model = perturbed(P3D(preset("tiny", pad_mode="circular")))
        x = torch.randn(1, 3, 32, 32, 32, generator=torch.Generator().manual_seed(2))
        self._check_shift(model, x, model.config.token_spacing * model.config.window)

    def _check_shift(self, model, x, shift):
        with torch.no_grad():
            out = model(x)
            for dim in (2, 3, 4):
                shifted = model(torch.roll(x, shift, dims=dim))
                deviation = (shifted - torch.roll(out, shift, dims=dim)).pow(2).mean().sqrt()
                rms = out.pow(2).mean().sqrt()
                self.assertLessEqual(float(deviation), 1e-5 * float(rms))

    def test_masked_decoder_block_gets_no_gradient(self):
        """Masked decoder blocks pass gradients through but receive none"""
        e = self.model.embed(None, 2, self.x.dtype)
        state = self.model.process(self.model.encode(self.x, e), e)
        out = self.model.decode(state, e, block_mask=[False, True, True, True])
        masked = list(self.model.decoder_levels[0][0].parameters())
        upstream = list(self.model.stem.parameters())
        grads = torch.autograd.grad(out.pow(2).sum(), masked + upstream, allow_unused=True)
        self.assertTrue(all(g is None for g in grads[:len(masked)]))
        self.assertTrue(all(g is not None and float(g.abs().max()) > 0 for g in grads[len(masked):]))

    def test_block_mask_length_checked(self):
        """A mask with the wrong number of entries raises"""
        e = self.model.embed(None, 2, self.x.dtype)
        state = self.model.process(self.model.encode(self.x, e), e)
        with self.assertRaises(ValidationError):
            self.model.decode(state, e, block_mask=[True])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        """A tiny model and a scratch directory"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.model = perturbed(P3D(preset("tiny")))

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_and_restore(self):
        """A saved model is rebuilt from its manifest with identical parameters"""
        ema = {n: p.detach() * 0.5 for n, p in self.model.named_parameters()}
        save_checkpoint(self.root / "ck", self.model, step=7, seed=3, ema=ema)
        ckpt = load_checkpoint(self.root / "ck")
        self.assertEqual((ckpt.step, ckpt.seed), (7, 3))
        for (name, a), (_, b) in zip(self.model.named_parameters(), ckpt.model.named_parameters()):
            self.assertTrue(torch.equal(a, b), name)
        name = next(iter(ema))
        self.assertTrue(torch.equal(ckpt.ema[name], ema[name]))

    def test_digest_is_stable(self):
        """Saving the same weights twice gives the same digest"""
        save_checkpoint(self.root / "a", self.model)
        save_checkpoint(self.root / "b", self.model)
        self.assertEqual(checkpoint_digest(self.root / "a"), checkpoint_digest(self.root / "b"))

    def test_incompatible_model_raises(self):
        """Loading into a different architecture raises CheckpointError"""
        save_checkpoint(self.root / "ck", self.model)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.root / "ck", P3D(preset("tiny", depth=1)))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.root / "missing")


if __name__ == '__main__':
    unittest.main()
