"""Acceptance criteria. Each test records one PASS/FAIL line, printed in the
terminal summary of the run."""
import time

import numpy as np
import pytest
import torch

from conftest import record_acceptance
from semdyn import dynamics as dyn
from semdyn import inpaint as inp
from semdyn import synthworld as sw
from semdyn import warp
from semdyn.core import boundary_weights
from semdyn.estimators import SemanticDynamicsPredictor, step_lr
from semdyn.harness import ablations, checkpoint as ck
from semdyn.harness.config import TrainConfig
from semdyn.harness.evaluation import evaluate
from semdyn.harness.training import set_deterministic, train_stage
from semdyn.estimators import VideoPredictor

# End-to-end protocol: default world, 500 train / 100 test clips, C=3, T=5, K=5.
E2E_SEED = 0
E2E_EPOCHS = 10
E2E_TRAIN, E2E_TEST = 500, 100


# -- 1. exactness ---------------------------------------------------------------


def test_exactness():
    g = torch.Generator().manual_seed(0)
    errors = {}

    probs = torch.softmax(torch.randn(2, 3, 6, 5, generator=g, dtype=torch.float64), 1)
    cf = torch.randn(2, 3, 2, 6, 5, generator=g, dtype=torch.float64)
    loop = torch.zeros(2, 2, 6, 5, dtype=torch.float64)
    for n, k, y, x in np.ndindex(2, 3, 6, 5):
        loop[n, :, y, x] += probs[n, k, y, x] * cf[n, k, :, y, x]
    errors["fuse_flows vs loop"] = (dyn.fuse_flows(probs, cf) - loop).abs().max().item(), 1e-6

    torch.manual_seed(0)
    net = dyn.SemanticDynamicsNet(dyn.DynamicsConfig(hidden_channels=4, horizon=2, observed_len=2)).eval()
    labels = torch.randint(0, 3, (2, 2, 16, 16), generator=g)
    out = net(torch.nn.functional.one_hot(labels, 3).movedim(-1, 2).float(), torch.randn(2, 2, 2, 16, 16, generator=g))
    errors["simplex sum"] = (out["probs"].sum(2) - 1).abs().max().item(), 1e-6

    img = np.random.default_rng(0).random((16, 16, 3))
    errors["zero-flow warp"] = np.abs(warp.warp_frame(img, np.zeros((16, 16, 2))) - img).max(), 1e-6

    x = torch.randn(2, 4, 16, 16, generator=g, dtype=torch.float64)
    w = torch.randn(6, 4, 4, 4, generator=g, dtype=torch.float64)
    b = torch.randn(6, generator=g, dtype=torch.float64)
    pc, _ = inp.partial_conv(x, torch.ones(2, 1, 16, 16, dtype=torch.float64), w, b, stride=2, padding=1)
    ref = torch.nn.functional.conv2d(x, w, b, stride=2, padding=1)
    errors["partial conv = conv"] = (pc - ref).abs().max().item(), 1e-6

    mean = 0.5 * torch.randn(1, 2, 4, generator=g, dtype=torch.float64)
    var = 0.3 + torch.rand(1, 2, 4, generator=g, dtype=torch.float64)
    rng = np.random.default_rng(1)
    m, v = mean.numpy().ravel(), var.numpy().ravel()
    z = m + np.sqrt(v) * rng.standard_normal((500_000, m.size))
    mc = np.mean(np.sum(-0.5 * (np.log(v) + (z - m) ** 2 / v) + 0.5 * z**2, axis=1))
    errors["KL vs Monte Carlo"] = abs(dyn.loss_kl(mean, var).item() - mc), 1e-2

    pred = torch.randn(2, 2, 2, 4, 4, generator=g, dtype=torch.float64)
    truth = torch.randn(2, 2, 2, 4, 4, generator=g, dtype=torch.float64)
    lf = sum(abs(pred[idx] - truth[idx]).item() for idx in np.ndindex(*pred.shape)) / 2
    errors["loss_flow vs loop"] = abs(dyn.loss_flow(pred, truth).item() - lf), 1e-5

    probs = torch.softmax(torch.randn(2, 2, 3, 4, 4, generator=g, dtype=torch.float64), 2)
    targets = torch.randint(0, 3, (2, 2, 4, 4), generator=g)
    wts = 1 + torch.rand(2, 2, 4, 4, generator=g, dtype=torch.float64)
    ls = sum(-wts[n, k, y, x].item() * np.log(max(probs[n, k, targets[n, k, y, x], y, x].item(), 1e-8))
             for n, k, y, x in np.ndindex(2, 2, 4, 4)) / 2
    errors["loss_semantic vs loop"] = abs(dyn.loss_semantic(probs, targets, wts).item() - ls), 1e-5

    fake = torch.rand(2, 2, 3, 4, 4, generator=g, dtype=torch.float64)
    anchor = torch.rand(2, 2, 3, 4, 4, generator=g, dtype=torch.float64)
    dis = (torch.rand(2, 2, 4, 4, generator=g) > 0.6).double()
    rec = [sum(sum(abs(fake[n, k, c, y, x] - anchor[n, k, c, y, x]).item() for c in range(3))
               for y, x in np.ndindex(4, 4) if dis[n, k, y, x] == 0) / 16 for n in range(2) for k in range(2)]
    rec = np.array(rec).reshape(2, 2).sum(1)
    got = inp.reconstruction_term(fake, anchor, dis).numpy()
    errors["inpaint reconstruction vs loop"] = np.abs(got - rec).max(), 1e-5

    ok = all(err <= tol for err, tol in errors.values())
    record_acceptance("1 exactness", ok, "; ".join(f"{k} {e:.2e}<={t:g}" for k, (e, t) in errors.items()))
    assert ok, errors


# -- 2. gradient check ----------------------------------------------------------


def test_gradient_check():
    torch.manual_seed(0)
    cfg = dyn.DynamicsConfig(num_classes=2, hidden_channels=4, horizon=1, observed_len=2, stochastic=True,
                             context_channels=4, mlp_hidden=6, fusion_channels=4)
    net = dyn.SemanticDynamicsNet(cfg).double().train()
    g = torch.Generator().manual_seed(1)
    labels = torch.randint(0, 2, (2, 3, 8, 8), generator=g)
    masks = torch.nn.functional.one_hot(labels, 2).movedim(-1, 2).double()
    flows = torch.randn(2, 3, 2, 8, 8, generator=g, dtype=torch.float64)
    w = torch.as_tensor(np.stack([[boundary_weights(lab.numpy() + 1).weights] for lab in labels[:, 2]]))
    noise = torch.randn(2, 8, 2, 2, generator=g, dtype=torch.float64)

    def loss():
        out = net(masks[:, :2], flows[:, :2], 1, future=(masks[:, 2:], flows[:, 2:]), noise=noise)
        return dyn.loss_dynamic(dyn.loss_flow(out["flows"], flows[:, 2:]),
                                dyn.loss_semantic(out["probs"], labels[:, 2:], w),
                                dyn.loss_kl(out["post_mean"], out["post_var"]), cfg.beta)

    params = list(net.parameters())
    net.zero_grad()
    loss().backward()
    grads = [p.grad.clone() for p in params]
    rng = np.random.default_rng(0)
    errs, h = [], 1e-4
    with torch.no_grad():
        for p, grad in zip(params, grads):
            flat = p.view(-1)
            for j in rng.choice(flat.numel(), size=min(flat.numel(), 60), replace=False):
                old = flat[j].item()
                flat[j] = old + h
                lp = loss().item()
                flat[j] = old - h
                lm = loss().item()
                flat[j] = old
                num, ana = (lp - lm) / (2 * h), grad.view(-1)[j].item()
                errs.append(abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    frac = float(np.mean(np.array(errs) <= 1e-3))
    ok = frac >= 0.99
    record_acceptance("2 gradient check", ok, f"{frac * 100:.2f}% of {len(errs)} sampled params within 1e-3")
    assert ok


# -- 3. dis-occlusion -----------------------------------------------------------


def test_disocclusion_detection():
    prev = np.ones((8, 8), int)
    prev[3:5, 0:2] = 2  # an object that leaves the canvas
    pred = np.ones((8, 8), int)
    flow = np.zeros((8, 8, 2))
    _, occ = warp.detect_occupancy(flow, pred, prev)
    sem = warp.detect_semantic(pred, prev, flow)
    constructed = (not occ[3, 0]) and bool(sem[3, 0])

    tp = fp = fn = 0
    for spec in sw.sample_specs(40, seed=123):
        clip = sw.generate(spec)
        for t in range(1, spec.length):
            found = warp.detect_disocclusion(clip.maps[t], clip.maps[t - 1], clip.flows[t]).mask
            truth = clip.disocclusion[t]
            tp += int((found & truth).sum())
            fp += int((found & ~truth).sum())
            fn += int((~found & truth).sum())
    f1 = 2 * tp / max(2 * tp + fp + fn, 1)
    ok = constructed and f1 >= 0.90
    record_acceptance("3 dis-occlusion", ok,
                      f"constructed case occupancy-miss/semantic-hit={constructed}; oracle F1={f1:.4f} (>=0.90)")
    assert ok


# -- 4/5. end-to-end and class swap -------------------------------------------------


@pytest.fixture(scope="module")
def e2e():
    set_deterministic()
    start = time.monotonic()
    train, test = sw.make_splits(E2E_TRAIN, E2E_TEST, seed=E2E_SEED)
    config = TrainConfig(epochs=E2E_EPOCHS, seed=E2E_SEED)
    report = ablations.ablate_single_class(train, test, config)
    return report, test, time.monotonic() - start


def test_end_to_end_against_single_class(e2e):
    report, _, elapsed = e2e
    sadm, base = report["models"]["sadm"], report["models"]["single_class"]
    miou_gap = 100 * (sadm["miou"][-1] - base["miou"][-1])
    band_sadm, band_base = np.mean(sadm["boundary_epe"]), np.mean(base["boundary_epe"])
    reduction = 1 - band_sadm / band_base
    ok_miou, ok_band = miou_gap >= 5.0, reduction >= 0.20
    ok_time = elapsed <= 45 * 60
    ok_params = base["parameters"] >= sadm["parameters"]
    ok = ok_miou and ok_band and ok_time and ok_params
    record_acceptance(
        "4 end-to-end vs single class", ok,
        f"mIoU@t+5 {sadm['miou'][-1]:.4f} vs {base['miou'][-1]:.4f} (gap {miou_gap:.2f} pts, need >=5); "
        f"band EPE {band_sadm:.4f} vs {band_base:.4f} ({reduction * 100:.1f}% lower, need >=20%); "
        f"params {sadm['parameters']} vs {base['parameters']}; {elapsed / 60:.1f} min",
    )
    assert ok


def test_class_swap(e2e):
    report, test, _ = e2e
    start = time.monotonic()
    swap = ablations.ablate_class_swap(report["estimators"]["sadm"], test, (2, 3))
    elapsed = time.monotonic() - start
    ok = swap["fraction_passed"] >= 0.90 and elapsed <= 300
    record_acceptance("5 class swap", ok,
                      f"{swap['fraction_passed'] * 100:.1f}% of clips follow the swapped law (need >=90%); {elapsed:.0f} s")
    assert ok


# -- 6. schedule and two-stage contract -----------------------------------------


def test_schedule_and_two_stage_contract(small_splits):
    train, _ = small_splits
    lr_ok = step_lr(20) == 0.0008 and TrainConfig().learning_rate == 0.001
    tiny = dict(hidden_channels=4, mlp_hidden=8, context_channels=4, fusion_channels=4, batch_size=4)
    stage1 = train_stage(TrainConfig(epochs=1, **tiny), train)
    est = ck.restore_dynamics(stage1)
    before = {k: v.clone() for k, v in est.model_.state_dict().items()}
    stage2 = train_stage(TrainConfig(stage="inpaint", epochs=1, channels=(4, 4, 4, 4), disc_channels=4,
                                     batch_size=4), train, stage1)
    same = ck.dynamics_keys_equal(stage1, stage2) and all(
        torch.equal(before[k], stage1["params"]["dynamics." + k]) for k in before)
    ok = lr_ok and same
    record_acceptance("6 schedule and two-stage contract", ok,
                      f"lr(20)={step_lr(20)!r}; stage-1 params bit-identical after stage 2: {same}")
    assert ok


# -- 7. determinism -------------------------------------------------------------


def _pipeline_report(seed):
    set_deterministic()
    train, test = sw.make_splits(16, 6, seed=seed)
    tiny = dict(hidden_channels=8, mlp_hidden=16, context_channels=8, fusion_channels=8, batch_size=4, seed=seed)
    stage1 = train_stage(TrainConfig(epochs=2, **tiny), train)
    stage2 = train_stage(TrainConfig(stage="inpaint", epochs=1, channels=(8, 8, 8, 8), disc_channels=8,
                                     batch_size=4, seed=seed), train, stage1)
    model = VideoPredictor(ck.restore_dynamics(stage2), ck.restore_inpainter(stage2))
    return evaluate(model, test, meta={"seed": seed}).to_json()


def test_determinism():
    first, second = _pipeline_report(5), _pipeline_report(5)
    ok = first == second
    record_acceptance("7 determinism", ok, "EvalReport JSON identical across two runs" if ok else "reports differ")
    assert ok
