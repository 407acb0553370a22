import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import torch

from p3d.numerics import ops
from p3d.numerics.blobs import BlobError, decode_blob, encode_blob, read_blob, write_blob
from p3d.numerics.gradcheck import check_function
from p3d.numerics.runtime import THREADS_ENV, resolve_threads, seed_everything
from p3d.numerics.spectral import (
    dealias_mask,
    half_spectrum_weights,
    irfft3,
    mode_indices,
    rfft3,
    spectral_energy,
    wavenumbers,
)
from p3d.validation import ValidationError


class TestOps(unittest.TestCase):
    def setUp(self):
        """Seeded generator and a small random volume"""
        self.generator = torch.Generator().manual_seed(0)
        self.x = torch.randn(2, 3, 8, 8, 8, generator=self.generator, dtype=torch.float64)

    def test_conv3_zero_padding_matches_torch(self):
        """Zero padding reproduces F.conv3d with padding 1"""
        w = torch.randn(4, 3, 3, 3, 3, generator=self.generator, dtype=torch.float64)
        b = torch.randn(4, generator=self.generator, dtype=torch.float64)
        out = ops.conv3(self.x, w, b)
        expected = torch.nn.functional.conv3d(self.x, w, b, padding=1)
        torch.testing.assert_close(out, expected)

    def test_conv3_circular_commutes_with_shifts(self):
        """Circular stride-2 convolution commutes with shifts by multiples of the stride"""
        w = torch.randn(4, 3, 3, 3, 3, generator=self.generator, dtype=torch.float64)
        shift = (2, 4, 6)
        out = ops.conv3(self.x, w, stride=2, pad_mode="circular")
        shifted = ops.conv3(torch.roll(self.x, shift, dims=(2, 3, 4)), w, stride=2, pad_mode="circular")
        torch.testing.assert_close(shifted, torch.roll(out, (1, 2, 3), dims=(2, 3, 4)))

    def test_conv3_rejects_bad_contracts(self):
        """Even kernels, channel mismatch, bad stride and odd circular extents raise"""
        with self.assertRaises(ValidationError):
            ops.conv3(self.x, torch.zeros(4, 3, 2, 2, 2, dtype=torch.float64))
        with self.assertRaises(ValidationError):
            ops.conv3(self.x, torch.zeros(4, 5, 3, 3, 3, dtype=torch.float64))
        with self.assertRaises(ValidationError):
            ops.conv3(self.x, torch.zeros(4, 3, 3, 3, 3, dtype=torch.float64), stride=3)
        with self.assertRaises(ValidationError):
            ops.conv3(self.x[..., :7], torch.zeros(4, 3, 3, 3, 3, dtype=torch.float64), stride=2, pad_mode="circular")

    def test_pixel_shuffle_index_mapping(self):
        """Channel c·r³ + (i·r² + j·r + l) lands at (r·x + i, r·y + j, r·z + l)"""
        r = 2
        x = torch.arange(1 * 16 * 2 * 2 * 2, dtype=torch.float64).reshape(1, 16, 2, 2, 2)
        out = ops.pixel_shuffle_3d(x, r)
        self.assertEqual(tuple(out.shape), (1, 2, 4, 4, 4))
        c, i, j, l, px, py, pz = 1, 1, 0, 1, 1, 0, 1
        self.assertEqual(out[0, c, r * px + i, r * py + j, r * pz + l], x[0, c * 8 + i * 4 + j * 2 + l, px, py, pz])

    def test_pixel_unshuffle_inverts_shuffle(self):
        """Unshuffle undoes shuffle exactly"""
        x = torch.randn(2, 16, 3, 3, 3, generator=self.generator)
        self.assertTrue(torch.equal(ops.pixel_unshuffle_3d(ops.pixel_shuffle_3d(x, 2), 2), x))

    def test_attention_matches_manual_softmax(self):
        """Dense attention equals softmax(qkᵀ/√d + bias)·v"""
        q, k, v = (torch.randn(1, 2, 5, 4, generator=self.generator, dtype=torch.float64) for _ in range(3))
        bias = torch.randn(2, 5, 5, generator=self.generator, dtype=torch.float64)
        scores = torch.einsum("bhtd,bhsd->bhts", q, k) / 2.0 + bias
        expected = torch.einsum("bhts,bhsd->bhtd", torch.softmax(scores, -1), v)
        torch.testing.assert_close(ops.attention(q, k, v, bias), expected)

    def test_linear_uses_in_out_layout(self):
        """linear computes x @ W + b with W as [in, out]"""
        x = torch.ones(2, 3)
        w = torch.arange(6, dtype=torch.float32).reshape(3, 2)
        out = ops.linear(x, w, torch.tensor([1.0, -1.0]))
        torch.testing.assert_close(out, torch.tensor([[7.0, 8.0], [7.0, 8.0]]))
        with self.assertRaises(ValidationError):
            ops.linear(torch.ones(2, 4), w)

    def test_concat_checks_other_axes(self):
        """concat rejects tensors that differ off the concatenation axis"""
        self.assertEqual(ops.concat([torch.zeros(1, 2, 4), torch.zeros(1, 3, 4)]).shape[1], 5)
        with self.assertRaises(ValidationError):
            ops.concat([torch.zeros(1, 2, 4), torch.zeros(1, 2, 5)])

    def test_group_norm_validates_groups(self):
        """Channels must split evenly into groups"""
        with self.assertRaises(ValidationError):
            ops.group_norm(self.x, 2)

    def test_backward_zero_for_unreached_leaves(self):
        """Detached or unused leaves receive zero gradients"""
        a = torch.tensor([1.0, 2.0], requires_grad=True)
        b = torch.tensor([3.0], requires_grad=True)
        c = torch.tensor([5.0])
        loss = (a ** 2).sum() + b.detach().sum()
        ga, gb, gc = ops.backward(loss, [a, b, c])
        torch.testing.assert_close(ga, torch.tensor([2.0, 4.0]))
        self.assertTrue(torch.equal(gb, torch.zeros(1)))
        self.assertTrue(torch.equal(gc, torch.zeros(1)))

    def test_backward_rejects_non_scalar(self):
        """A vector loss raises"""
        a = torch.ones(2, requires_grad=True)
        with self.assertRaises(ValidationError):
            ops.backward(a * 2, [a])

    def test_attention_gradcheck(self):
        """Attention gradients agree with finite differences in float64"""
        q, k, v = (torch.randn(1, 1, 3, 2, generator=self.generator, dtype=torch.float64, requires_grad=True)
                   for _ in range(3))
        self.assertTrue(check_function(lambda a, b, c: ops.attention(a, b, c), (q, k, v)))


class TestSpectral(unittest.TestCase):
    def setUp(self):
        """Random real field on an 8x6x10 grid"""
        self.rng = np.random.default_rng(1)
        self.field = self.rng.standard_normal((2, 8, 6, 10))

    def test_inverse_transform(self):
        """irfft3 recovers the field"""
        np.testing.assert_allclose(irfft3(rfft3(self.field)), self.field, atol=1e-12)

    def test_parseval_with_half_spectrum_weights(self):
        """Weighted half-spectrum energy equals N·Σu²"""
        energy = spectral_energy(rfft3(self.field))
        expected = self.field[0].size * np.sum(self.field ** 2, axis=(-3, -2, -1))
        np.testing.assert_allclose(energy, expected, rtol=1e-12)

    def test_rejects_complex_and_tiny_grids(self):
        """Complex input and extents below 2 raise"""
        with self.assertRaises(ValidationError):
            rfft3(self.field.astype(complex))
        with self.assertRaises(ValidationError):
            rfft3(np.zeros((1, 4, 4)))

    def test_wavenumbers_and_nyquist(self):
        """k = 2π·m/L, with the Nyquist mode zeroed on request"""
        kx, _, kz = wavenumbers((8, 8, 8), (2.0, 2.0, 2.0))
        self.assertAlmostEqual(float(kx[1, 0, 0]), np.pi)
        self.assertAlmostEqual(float(kz[0, 0, 4]), 4 * np.pi)
        kx0, _, kz0 = wavenumbers((8, 8, 8), (2.0, 2.0, 2.0), zero_nyquist=True)
        self.assertEqual(float(kx0[4, 0, 0]), 0.0)
        self.assertEqual(float(kz0[0, 0, 4]), 0.0)

    def test_dealias_mask_two_thirds(self):
        """Only modes with |m| < n/3 on every axis survive"""
        mask = dealias_mask((12, 12, 12))
        mx, my, mz = mode_indices((12, 12, 12))
        self.assertTrue(mask[3, 3, 3])
        self.assertFalse(mask[4, 0, 0])
        self.assertFalse(mask[0, 0, 4])
        self.assertEqual(int(mask.sum()), 7 * 7 * 4)

    def test_half_spectrum_weights(self):
        """Zero and Nyquist planes count once, the rest twice"""
        np.testing.assert_array_equal(half_spectrum_weights(6), [1, 2, 2, 1])
        np.testing.assert_array_equal(half_spectrum_weights(5), [1, 2, 2])


class TestBlobs(unittest.TestCase):
    def setUp(self):
        """Temporary directory for blob files"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_preserves_name_dtype_and_values(self):
        """A written tensor reads back with its name, dtype and values"""
        value = torch.randn(3, 4, dtype=torch.float64)
        write_blob(self.root / "a" / "w.blob", "weight", value)
        name, array = read_blob(self.root / "a" / "w.blob")
        self.assertEqual(name, "weight")
        self.assertEqual(array.dtype, np.float64)
        np.testing.assert_array_equal(array, value.numpy())

    def test_truncated_payload_raises(self):
        """A short payload is reported instead of silently reshaped"""
        data = encode_blob("x", np.zeros((4, 4), dtype=np.float32))
        with self.assertRaises(BlobError):
            decode_blob(data[:-3])

    def test_corrupt_header_raises(self):
        """Garbage header bytes raise BlobError"""
        data = encode_blob("x", np.zeros(2, dtype=np.float32))
        with self.assertRaises(BlobError):
            decode_blob(data[:4] + b"{" * (len(data) - 4))

    def test_unsupported_dtype_raises(self):
        """Complex arrays are not storable"""
        with self.assertRaises(BlobError):
            encode_blob("x", np.zeros(2, dtype=np.complex128))

    def test_missing_file_raises(self):
        """Reading a missing blob raises BlobError"""
        with self.assertRaises(BlobError):
            read_blob(self.root / "nothing.blob")


class TestRuntime(unittest.TestCase):
    def setUp(self):
        """Name of the thread environment variable"""
        self.env = THREADS_ENV

    def test_thread_resolution_order(self):
        """Explicit request, then P3D_THREADS, then 1"""
        with mock.patch.dict(os.environ, {self.env: "3"}):
            self.assertEqual(resolve_threads(5), 5)
            self.assertEqual(resolve_threads(), 3)
        with mock.patch.dict(os.environ, {self.env: "many"}):
            self.assertEqual(resolve_threads(), 1)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_threads(), 1)

    def test_seed_everything_is_reproducible(self):
        """The same seed yields the same draws"""
        a = torch.rand(4, generator=seed_everything(7))
        b = torch.rand(4, generator=seed_everything(7))
        self.assertTrue(torch.equal(a, b))


if __name__ == '__main__':
    unittest.main()
