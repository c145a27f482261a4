import numpy as np
import pytest
import torch
import torch.nn.functional as F

from semdyn import inpaint as inp


def test_partial_conv_full_validity_is_ordinary_conv():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(2, 3, 9, 10, generator=g, dtype=torch.float64)
    w = torch.randn(5, 3, 4, 4, generator=g, dtype=torch.float64)
    b = torch.randn(5, generator=g, dtype=torch.float64)
    out, m = inp.partial_conv(x, torch.ones(2, 1, 9, 10, dtype=torch.float64), w, b, stride=2, padding=1)
    assert torch.allclose(out, F.conv2d(x, w, b, stride=2, padding=1), atol=1e-12)
    assert torch.all(m == 1)


def test_partial_conv_matches_loop_renormalization():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(1, 2, 5, 5, generator=g, dtype=torch.float64)
    w = torch.randn(1, 2, 3, 3, generator=g, dtype=torch.float64)
    b = torch.tensor([0.5], dtype=torch.float64)
    mask = (torch.rand(1, 1, 5, 5, generator=g) > 0.5).double()
    mask[..., :3, :3] = 0  # one window with no valid input
    out, new = inp.partial_conv(x, mask, w, b, padding=0)
    for y in range(3):
        for xx in range(3):
            win_m = mask[0, 0, y : y + 3, xx : xx + 3]
            n = win_m.sum().item()
            if n == 0:
                assert out[0, 0, y, xx] == 0 and new[0, 0, y, xx] == 0
                continue
            s = (w[0] * x[0, :, y : y + 3, xx : xx + 3] * win_m).sum().item()
            assert out[0, 0, y, xx].item() == pytest.approx(s * 9 / n + 0.5, abs=1e-12)


def test_generator_and_discriminator_shapes():
    torch.manual_seed(0)
    gen = inp.InpaintGenerator(3)
    out = gen(torch.rand(2, 3, 32, 32), torch.ones(2, 1, 32, 32), torch.rand(2, 3, 32, 32))
    assert out.shape == (2, 3, 32, 32) and out.min() >= 0 and out.max() <= 1
    fd, cd = inp.FrameDiscriminator(3), inp.ClipDiscriminator(3)
    assert fd(torch.rand(2, 3, 32, 32), torch.rand(2, 3, 32, 32)).shape[:2] == (2, 1)
    assert cd(torch.rand(2, 5, 3, 32, 32), torch.rand(2, 5, 3, 32, 32)).shape[:3] == (2, 1, 5)


def test_reconstruction_term_matches_loop():
    g = torch.Generator().manual_seed(2)
    pred = torch.rand(2, 3, 3, 4, 5, generator=g, dtype=torch.float64)
    anchor = torch.rand(2, 3, 3, 4, 5, generator=g, dtype=torch.float64)
    disocc = (torch.rand(2, 3, 4, 5, generator=g) > 0.7).double()
    got = inp.reconstruction_term(pred, anchor, disocc)
    for n in range(2):
        total = 0.0
        for k in range(3):
            s = 0.0
            for y in range(4):
                for x in range(5):
                    if disocc[n, k, y, x] == 0:
                        s += (pred[n, k, :, y, x] - anchor[n, k, :, y, x]).abs().sum().item()
            total += s / 20
        assert got[n].item() == pytest.approx(total, abs=1e-12)


def test_loss_inpaint_terms_and_weights():
    torch.manual_seed(0)
    pred = torch.rand(1, 2, 3, 16, 16)
    cond = torch.rand(1, 2, 3, 16, 16)
    mask = torch.zeros(1, 2, 16, 16)
    total, terms = inp.loss_inpaint(pred, pred, pred, mask, cond, inp.InpaintLossWeights(),
                                    inp.RandomFeaturePyramid(), inp.FrameDiscriminator(3), inp.ClipDiscriminator(3))
    assert terms["reconstruction"].item() == 0 and terms["perceptual"].item() == 0
    assert set(terms) == {"reconstruction", "perceptual", "frame_adversarial", "clip_adversarial"}
    only_rec, t2 = inp.loss_inpaint(pred, pred, pred, mask, cond, inp.InpaintLossWeights(0, 0, 0))
    assert set(t2) == {"reconstruction"} and only_rec.item() == 0
    with pytest.raises(ValueError):
        inp.InpaintLossWeights(perceptual=-1)


def test_feature_pyramid_frozen_and_seeded():
    a, b = inp.RandomFeaturePyramid(), inp.RandomFeaturePyramid()
    assert not list(a.parameters())
    assert torch.equal(a.w1, b.w1)


def test_fully_disoccluded_input_carries_no_pixel_evidence():
    torch.manual_seed(0)
    gen = inp.InpaintGenerator(3, (8, 8, 8, 8))
    cond = torch.rand(1, 3, 16, 16)
    invalid = torch.zeros(1, 1, 16, 16)
    a = gen(torch.rand(1, 3, 16, 16), invalid, cond)
    b = gen(torch.rand(1, 3, 16, 16), invalid, cond)
    assert torch.equal(a, b)
    first, m = gen.enc_img[0](torch.rand(1, 3, 16, 16), invalid)
    # padding counts as valid, so border windows give the bias and interior ones 0
    bias = gen.enc_img[0].bias.view(1, -1, 1, 1)
    torch.testing.assert_close(first, bias * m, rtol=0, atol=1e-6)
    assert m[..., 1:-1, 1:-1].sum() == 0


def test_partial_conv_half_valid_window():
    x = torch.arange(9.0).view(1, 1, 3, 3)
    w = torch.ones(1, 1, 3, 3)
    mask = torch.zeros(1, 1, 3, 3)
    mask[..., :, :2] = 1.0  # k = 6 valid pixels
    out, new = inp.partial_conv(x, mask, w)
    valid_sum = x[..., :, :2].sum()
    assert out.item() == pytest.approx(valid_sum.item() * 9 / 6) and new.item() == 1


def test_gradient_reaches_generator_through_both_discriminators():
    torch.manual_seed(0)
    gen = inp.InpaintGenerator(2, (4, 4, 4, 4)).double()
    fd, cd = inp.FrameDiscriminator(2, 4).double(), inp.ClipDiscriminator(2, 4).double()
    anchor = torch.rand(1, 2, 3, 16, 16, dtype=torch.float64)
    valid = torch.ones(2, 1, 16, 16, dtype=torch.float64)
    cond = torch.rand(1, 2, 2, 16, 16, dtype=torch.float64)

    def objective(which):
        fake = gen(anchor.flatten(0, 1), valid, cond.flatten(0, 1)).view(1, 2, 3, 16, 16)
        if which == "frame":
            return inp.lsgan_generator_term(fd(fake.flatten(0, 1), cond.flatten(0, 1))).sum()
        return inp.lsgan_generator_term(cd(fake, cond)).sum()

    p = gen.head.weight
    for which in ("frame", "clip"):
        gen.zero_grad()
        objective(which).backward()
        ana = p.grad.view(-1)[:5].clone()
        num = torch.zeros(5, dtype=torch.float64)
        with torch.no_grad():
            for j in range(5):
                old = p.view(-1)[j].item()
                p.view(-1)[j] = old + 1e-5
                hi = objective(which).item()
                p.view(-1)[j] = old - 1e-5
                lo = objective(which).item()
                p.view(-1)[j] = old
                num[j] = (hi - lo) / 2e-5
        assert ana.abs().max() > 0
        assert torch.allclose(ana, num, rtol=1e-4, atol=1e-9)


def test_reconstruction_zero_cases():
    pred = torch.rand(1, 2, 3, 4, 4)
    anchor = torch.rand(1, 2, 3, 4, 4)
    assert inp.reconstruction_term(pred, anchor, torch.ones(1, 2, 4, 4)).item() == 0.0
    assert inp.reconstruction_term(pred, pred, torch.zeros(1, 2, 4, 4)).item() == 0.0


def test_discriminators_deterministic():
    torch.manual_seed(0)
    fd = inp.FrameDiscriminator(3)
    x, c = torch.rand(2, 3, 16, 16), torch.rand(2, 3, 16, 16)
    assert torch.equal(fd(x, c), fd(x, c))
