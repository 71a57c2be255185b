import numpy as np
import pytest
import torch

from oracles import central_difference, correlate2d, rel_err
from tamperloc.errors import ConstraintViolation, InputError, NotInitializedError
from tamperloc.filterbank import (
    LUMA,
    NUM_CHANNELS,
    SOBEL_X,
    SOBEL_Y,
    SRM_KERNELS,
    FilterBank,
    NoiseNet,
    BayarConv,
    apply_bayar,
    apply_noise_net,
    apply_sobel,
    apply_srm,
    check_bayar,
    project_bayar,
    read_feature_map,
    write_feature_map,
)
from tamperloc.images import to_tensor


def _img(rng, h=16, w=16):
    return rng.random((h, w, 3))


def _np(t):
    return t[0].double().numpy()


class TestSRM:
    def test_constant_image_gives_zero(self):
        out = apply_srm(to_tensor(np.full((16, 16, 3), 0.37), torch.float64))
        assert out.shape == (1, 9, 16, 16)
        np.testing.assert_allclose(_np(out), 0.0, atol=1e-12)

    def test_impulse_stamps_flipped_kernel(self):
        img = np.zeros((17, 17, 3))
        img[8, 8, :] = 1.0
        out = _np(apply_srm(to_tensor(img, torch.float64)))
        for colour in range(3):
            for k in range(3):
                patch = out[3 * colour + k, 6:11, 6:11]
                np.testing.assert_allclose(patch, SRM_KERNELS[k][::-1, ::-1], atol=1e-12)

    def test_matches_brute_force(self, rng):
        img = _img(rng)
        out = _np(apply_srm(to_tensor(img, torch.float64)))
        for colour in range(3):
            for k in range(3):
                ref = correlate2d(img[..., colour], SRM_KERNELS[k])
                np.testing.assert_allclose(out[3 * colour + k], ref, atol=1e-5)

    def test_pure(self, rng):
        x = to_tensor(_img(rng))
        assert torch.equal(apply_srm(x), apply_srm(x))

    def test_rejects_non_finite(self, rng):
        x = to_tensor(_img(rng))
        x[0, 0, 3, 3] = float("nan")
        with pytest.raises(InputError):
            apply_srm(x)
        img = _img(rng)
        img[0, 0, 0] = np.inf
        with pytest.raises(InputError):
            to_tensor(img)


class TestBayarProjection:
    def test_all_ones(self):
        w = project_bayar(torch.ones(5, 5, dtype=torch.float64))
        assert w[2, 2] == -1.0
        off = w.clone()
        off[2, 2] = 1 / 24
        np.testing.assert_allclose(off.numpy(), np.full((5, 5), 1 / 24), atol=1e-15)

    def test_constrained_kernel_unchanged(self, rng):
        w = project_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))))
        np.testing.assert_allclose(project_bayar(w).numpy(), w.numpy(), atol=1e-12)

    def test_idempotent_and_valid(self, rng):
        for _ in range(100):
            w = torch.as_tensor(rng.normal(size=(3, 3, 5, 5)))
            p = project_bayar(w)
            np.testing.assert_allclose(project_bayar(p).numpy(), p.numpy(), atol=1e-12)
            flat = p.reshape(-1, 5, 5)
            assert torch.all(flat[:, 2, 2] == -1.0)
            off = flat.sum(dim=(1, 2)) + 1.0
            assert torch.all((off - 1.0).abs() <= 1e-6)

    def test_float32_large_taps_within_tolerance(self, rng):
        for _ in range(50):
            w = torch.as_tensor(rng.normal(size=(3, 3, 5, 5)) * 400, dtype=torch.float32)
            p = project_bayar(w)
            assert p.dtype == torch.float32
            check_bayar(p)
            off = p.double().sum(dim=(2, 3)) + 1.0
            assert torch.all((off - 1.0).abs() <= 1e-6)

    def test_unconstrained_regression_stays_valid(self):
        conv = BayarConv()
        target = torch.nn.Conv2d(3, 3, 5, padding=2, bias=False)
        opt = torch.optim.AdamW(conv.parameters(), lr=1e-2)
        for _ in range(100):
            x = torch.rand(4, 3, 32, 32)
            loss = (conv(x) - target(x).detach()).pow(2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            conv.project_()
        check_bayar(conv.weight)

    def test_zero_sum_uses_additive_correction(self):
        w = torch.zeros(5, 5, dtype=torch.float64)
        w[0, 0], w[0, 1] = 1.0, -1.0
        p = project_bayar(w)
        assert p[2, 2] == -1.0
        assert abs(float(p.sum()) + 1.0 - 1.0) < 1e-12
        assert p[0, 0] - p[0, 1] == pytest.approx(2.0)

    def test_input_not_mutated(self, rng):
        w = torch.as_tensor(rng.random((5, 5)))
        before = w.clone()
        project_bayar(w)
        assert torch.equal(w, before)


class TestBayarConv:
    def test_constant_image_zero(self, rng):
        w = project_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))))
        out = apply_bayar(w, to_tensor(np.full((16, 16, 3), 0.6), torch.float64))
        assert out.shape[1] == 3
        np.testing.assert_allclose(_np(out), 0.0, atol=1e-12)

    def test_matches_brute_force(self, rng):
        w = project_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))))
        img = _img(rng)
        out = _np(apply_bayar(w, to_tensor(img, torch.float64)))
        for o in range(3):
            ref = sum(correlate2d(img[..., i], w[o, i].numpy()) for i in range(3))
            np.testing.assert_allclose(out[o], ref, atol=1e-5)

    def test_unprojected_rejected(self, rng):
        with pytest.raises(ConstraintViolation):
            apply_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))), to_tensor(_img(rng)))
        w = project_bayar(torch.as_tensor(rng.random((3, 3, 5, 5))))
        w[0, 0, 0, 0] += 0.01
        with pytest.raises(ConstraintViolation):
            check_bayar(w)


class TestSobel:
    def test_constant_zero(self):
        out = apply_sobel(to_tensor(np.full((16, 16, 3), 0.2), torch.float64))
        np.testing.assert_allclose(_np(out), 0.0, atol=1e-12)

    def test_vertical_step(self):
        img = np.zeros((16, 16, 3))
        img[:, 8:, :] = 1.0
        out = _np(apply_sobel(to_tensor(img, torch.float64)))
        luma = img @ np.array(LUMA)
        np.testing.assert_allclose(out[0], correlate2d(luma, SOBEL_X), atol=1e-12)
        np.testing.assert_allclose(out[1], 0.0, atol=1e-12)
        assert np.all(np.abs(out[0][:, 7:9]) > 0)
        cols = np.nonzero(np.abs(out[0]).sum(axis=0))[0]
        assert set(cols) == {7, 8}

    def test_matches_brute_force_and_nonnegative_magnitude(self, rng):
        img = _img(rng)
        out = _np(apply_sobel(to_tensor(img, torch.float64)))
        luma = img @ np.array(LUMA)
        gx, gy = correlate2d(luma, SOBEL_X), correlate2d(luma, SOBEL_Y)
        np.testing.assert_allclose(out[0], gx, atol=1e-5)
        np.testing.assert_allclose(out[1], gy, atol=1e-5)
        np.testing.assert_allclose(out[2], np.hypot(gx, gy), atol=1e-5)
        assert np.all(out[2] >= 0)


class TestNoiseNet:
    def test_shape_and_determinism(self, rng):
        net = NoiseNet()
        x = to_tensor(_img(rng, 20, 24))
        a, b = net(x), net(x)
        assert a.shape == (1, 3, 20, 24)
        assert torch.equal(a, b)

    def test_functional_matches_module(self, rng):
        net = NoiseNet()
        x = to_tensor(_img(rng))
        assert torch.equal(apply_noise_net(dict(net.named_parameters()), x), net(x))

    def test_uninitialized_rejected(self, rng):
        with pytest.raises(NotInitializedError):
            apply_noise_net(None, _img(rng))
        with pytest.raises(NotInitializedError):
            apply_noise_net({}, _img(rng))

    def test_gradient_matches_finite_differences(self):
        net = NoiseNet().double()
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        net.zero_grad()
        net(x).sum().backward()
        g = torch.Generator().manual_seed(3)
        for name, p in net.named_parameters():
            v = torch.randn(p.shape, generator=g, dtype=p.dtype)
            analytic = float((p.grad * v).sum())
            numeric = central_difference(lambda: net(x).sum(), p, v)
            assert rel_err(analytic, numeric) < 1e-3, name


class TestFilterBank:
    def test_layout_and_concatenation(self, rng):
        bank = FilterBank().double()
        x = to_tensor(_img(rng), torch.float64)
        fmap = bank.extract_features(x)
        assert NUM_CHANNELS == 18 == fmap.values.shape[1]
        assert fmap.channel_layout == (("srm", 9), ("bayar", 3), ("sobel", 3), ("noise", 3))
        assert fmap.values.shape[-2:] == (16, 16)
        assert torch.equal(fmap.values[:, 0:9], apply_srm(x))
        assert torch.equal(fmap.slice("bayar"), apply_bayar(bank.bayar.weight, x))
        assert torch.equal(fmap.slice("sobel"), apply_sobel(x))
        assert torch.equal(fmap.slice("noise"), bank.noise(x))

    def test_constant_image_only_noise_slice_nonzero(self):
        bank = FilterBank().double()
        x = to_tensor(np.full((16, 16, 3), 0.5), torch.float64)
        values = bank(x)[0].detach()
        np.testing.assert_allclose(values[:15].numpy(), 0.0, atol=1e-12)
        assert values[15:].abs().max() > 0

    def test_preserves_odd_sizes(self, rng):
        bank = FilterBank()
        out = bank(to_tensor(_img(rng, 19, 23)))
        assert out.shape == (1, 18, 19, 23)

    def test_dump_roundtrip(self, rng, tmp_path):
        bank = FilterBank()
        fmap = bank.extract_features(to_tensor(_img(rng, 16, 20)))
        path = tmp_path / "f.bin"
        write_feature_map(fmap, path)
        raw = path.read_bytes()
        assert np.frombuffer(raw[:12], "<u4").tolist() == [16, 20, 18]
        back = read_feature_map(path)
        assert back.channel_layout == fmap.channel_layout
        np.testing.assert_array_equal(back.values.numpy(), fmap.values.detach().numpy())
