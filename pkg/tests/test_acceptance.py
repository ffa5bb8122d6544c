"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from decimal import Decimal, getcontext

import numpy as np
import pytest

from spectradiff import nn
from spectradiff.classifier import ClassifierConfig, augmentation_experiment
from spectradiff.cli import main
from spectradiff.diffusion import (linear_beta_schedule, p_sample_step, q_sample, reverse_step)
from spectradiff.figure import figure_to_spectrum, interpolate_rows, spectrum_to_figure
from spectradiff.io import SynthSpec, generate_synthetic
from spectradiff.metrics import (GaussianFit, fit_gaussian, frechet_distance, jsd_gaussian,
                                 mmd_gaussian)
from spectradiff.pipeline import DiffRaman
from spectradiff.unet import UNetConfig, build_unet
from spectradiff.vqvae import (VQVAE, Codebook, LatentGrid, _to_channels_first,
                               _to_channels_last, nearest_codes, quantize, vq_loss)

from _gradcheck import numeric_grad, rel_error


# -- 1 ---------------------------------------------------------------------------

def test_1_transform_round_trip(criterion):
    rng = np.random.default_rng(1)
    scale = 10.0 ** rng.uniform(-3, 4, size=(1000, 1))
    baseline = rng.uniform(0, 1, size=(1000, 1)) * scale
    X = baseline + scale * rng.random((1000, 1024))
    t0 = time.perf_counter()
    worst = 0.0
    for x in X:
        back = figure_to_spectrum(spectrum_to_figure(x, 32))
        worst = max(worst, float(np.max(np.abs(back - x) / np.abs(x))))
    elapsed = time.perf_counter() - t0
    criterion(1, worst <= 1e-9 and elapsed < 5,
              f"max relative error {worst:.2e} (<= 1e-9), {elapsed:.2f}s (< 5s)")


# -- 2 ---------------------------------------------------------------------------

def test_2_quantization_oracle(criterion):
    rng = np.random.default_rng(2)
    # integer-valued half: exact distance ties are common and must go to the lowest index
    E = rng.integers(-2, 3, size=(1024, 16)).astype(float)
    E[512:600] = E[:88]
    Z_int = rng.integers(-2, 3, size=(5000, 16)).astype(float)
    Z_cont = rng.standard_normal((5000, 16))
    E_cont = rng.standard_normal((1024, 16))
    t0 = time.perf_counter()
    got_int = quantize(LatentGrid(Z_int.reshape(50, 100, 16)), Codebook(E)).indices.ravel()
    got_cont = nearest_codes(Z_cont, E_cont)
    elapsed = time.perf_counter() - t0

    def brute(Z, B):
        return np.array([np.argmin(np.sum((B - z) ** 2, axis=1)) for z in Z])

    ties = sum(int(np.sum(d == d.min()) > 1) for d in (np.sum((E - z) ** 2, axis=1) for z in Z_int))
    agree = (np.sum(got_int == brute(Z_int, E)) + np.sum(got_cont == brute(Z_cont, E_cont)))
    criterion(2, agree == 10_000 and elapsed < 10,
              f"{agree}/10000 indices agree ({ties} tie positions), {elapsed:.2f}s (< 10s)")


# -- 3 ---------------------------------------------------------------------------

def test_3_loss_decomposition(criterion):
    rng = np.random.default_rng(3)
    P, R = rng.uniform(0, 255, (2, 4, 32, 32))
    ze, zq = rng.standard_normal((2, 4, 8, 8, 16))
    rec = np.mean((P / 255 - R / 255) ** 2)
    sq = np.mean((ze - zq) ** 2)
    ok = True
    for zeta in (0.0, 0.25, 1.0, 2.0):
        out = vq_loss(P, R, ze, zq, commitment=zeta)
        ok &= out.total == out.reconstruction + out.codebook + zeta * out.commitment
        ok &= math.isclose(out.reconstruction, rec, rel_tol=1e-14)
        ok &= math.isclose(out.codebook, sq, rel_tol=1e-14)
        ok &= math.isclose(out.commitment, sq, rel_tol=1e-14)
        ok &= math.isclose(out.total, rec + sq + zeta * sq, rel_tol=1e-14)
    criterion(3, ok, "total = rec + codebook + zeta*commitment for zeta in {0, 0.25, 1, 2}")


# -- 4 ---------------------------------------------------------------------------

def test_4_schedule_and_forward_process(criterion):
    s = linear_beta_schedule(500, 1e-4, 0.02)
    endpoints = s.betas[0] == 1e-4 and s.betas[-1] == 0.02
    getcontext().prec = 60
    prod, worst = Decimal(1), 0.0
    for t in range(500):
        prod *= Decimal(1) - Decimal(float(s.betas[t]))
        worst = max(worst, abs(float(prod) - s.alpha_bars[t]))
    n, z0 = 100_000, 1.5
    rng = np.random.default_rng(4)
    moments_ok = True
    for t in (1, 250, 500):
        draws = q_sample(np.full(n, z0), t, rng.standard_normal(n), s)
        ab = s.alpha_bars[t - 1]
        moments_ok &= abs(draws.mean() - math.sqrt(ab) * z0) < 3 * math.sqrt((1 - ab) / n)
        moments_ok &= abs(draws.var(ddof=1) - (1 - ab)) < 3 * (1 - ab) * math.sqrt(2 / (n - 1))
    z = np.full(n, z0)
    chain_ok = True
    for t in range(1, 501):
        z = math.sqrt(s.alphas[t - 1]) * z + math.sqrt(s.betas[t - 1]) * rng.standard_normal(n)
        if t in (1, 250, 500):
            closed = q_sample(np.full(n, z0), t, rng.standard_normal(n), s)
            var = 1 - s.alpha_bars[t - 1]
            chain_ok &= abs(z.mean() - closed.mean()) < 3 * math.sqrt(2 * var / n)
            chain_ok &= abs(z.var(ddof=1) - closed.var(ddof=1)) < 3 * var * math.sqrt(4 / (n - 1))
    criterion(4, endpoints and worst <= 1e-12 and moments_ok and chain_ok,
              f"endpoints exact={endpoints}, alpha_bar err {worst:.1e}, "
              f"MC moments ok={moments_ok}, chain ok={chain_ok}")


# -- 5 ---------------------------------------------------------------------------

def test_5_reverse_step_algebra(criterion):
    hand = (1 / math.sqrt(0.99)) * (1 - 0.01 * 0.5 / math.sqrt(0.1))
    got = reverse_step(1.0, 0.5, 0.99, 0.9, 0.01, 0.0)
    s = linear_beta_schedule(500)
    rng = np.random.default_rng(5)
    z0 = rng.standard_normal((4, 16, 8, 8))
    z1 = q_sample(z0, 1, rng.standard_normal(z0.shape), s)

    def oracle(z_t, t, y):
        ab = s.alpha_bars[t[0] - 1]
        return (z_t - math.sqrt(ab) * z0) / math.sqrt(1 - ab)

    err = float(np.max(np.abs(p_sample_step(oracle, s, z1, 1, np.zeros(4, int), rng) - z0)))
    criterion(5, abs(got - hand) <= 1e-6 and err <= 1e-8,
              f"scalar step {got:.7f} vs hand {hand:.7f}; t=1 inversion error {err:.1e}")


# -- 6 ---------------------------------------------------------------------------

def _layer_error(layer, x, seed=0):
    r = np.random.default_rng(seed).standard_normal(layer.forward(x).shape)

    def f():
        return float(np.sum(layer.forward(x) * r))

    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(r)
    grads = {k: p.grad.copy() for k, p in layer.parameters().items()}
    errs = [rel_error(dx, numeric_grad(f, x))] if dx is not None else []
    errs += [rel_error(g, numeric_grad(f, layer.parameters()[k].value)) for k, g in grads.items()]
    return max(errs)


def _vqvae_error():
    vq = VQVAE(figure_side=8, latent_dim=3, codebook_size=6, hidden_channels=(2, 3),
               random_state=0)
    vq.initialize()
    net = vq.net_
    net.codebook.value[:] = np.random.default_rng(0).standard_normal((6, 3))
    # non-zero biases keep every ReLU input off its kink at the evaluation point
    for k, prm in net.parameters().items():
        if k.endswith("bias"):
            prm.value[:] = np.random.default_rng(2).normal(0, 0.1, prm.value.shape)
    x = np.random.default_rng(1).uniform(0, 1, (2, 1, 8, 8))
    ze0 = net.encoder.forward(x)
    cl = _to_channels_last(ze0)
    idx = nearest_codes(cl.reshape(-1, 3), net.codebook.value)
    offset = _to_channels_first(net.codebook.value[idx].reshape(cl.shape)) - ze0

    def loss():
        # stop-gradients realised as constants frozen at the evaluation point
        ze = net.encoder.forward(x)
        zq = _to_channels_first(net.codebook.value[idx].reshape(cl.shape))
        rec = np.mean((net.decoder.forward(ze + offset) - x) ** 2)
        return rec + np.mean((ze0 - zq) ** 2) + 0.25 * np.mean((ze - (ze0 + offset)) ** 2)

    net.zero_grad()
    vq._forward_backward(x, 0.25)
    grads = {k: p.grad.copy() for k, p in net.parameters().items()}
    return max(rel_error(g, numeric_grad(loss, net.parameters()[k].value))
               for k, g in grads.items())


def _unet_error():
    cfg = UNetConfig(class_count=3, latent_side=4, latent_channels=2, base_channels=4, depth=1,
                     time_embed_dim=8)
    net = build_unet(cfg, rng_seed=0)
    rng = np.random.default_rng(1)
    z = rng.standard_normal((2, 2, 4, 4))
    t, y = np.array([2, 40]), np.array([1, 2])
    eps = rng.standard_normal(z.shape)

    def loss():
        return nn.functional.mse_loss(net(z, t, y), eps)[0]

    net.zero_grad()
    _, g = nn.functional.mse_loss(net(z, t, y), eps)
    dz = net.backward(g)
    grads = {k: p.grad.copy() for k, p in net.parameters().items()}
    errs = [rel_error(dz, numeric_grad(loss, z))]
    errs += [rel_error(v, numeric_grad(loss, net.parameters()[k].value)) for k, v in grads.items()]
    return max(errs)


def test_6_gradient_integrity(criterion):
    rng = np.random.default_rng(6)
    ops = {
        "conv2d": (nn.Conv2d(2, 3, 3, stride=2, padding=1, rng=rng), (2, 2, 6, 6)),
        "conv_transpose2d": (nn.ConvTranspose2d(3, 2, 4, stride=2, padding=1, rng=rng),
                             (2, 3, 3, 3)),
        "conv1d": (nn.Conv1d(2, 3, 5, stride=2, padding=2, rng=rng), (2, 2, 11)),
        "linear": (nn.Linear(4, 3, rng=rng), (5, 4)),
        "silu": (nn.SiLU(), (3, 4)),
        "sigmoid": (nn.Sigmoid(), (3, 4)),
        "groupnorm": (nn.GroupNorm(2, 4), (2, 4, 3, 3)),
        "global_avg_pool": (nn.GlobalAvgPool(), (2, 3, 7)),
    }
    errors = {k: _layer_error(layer, rng.standard_normal(shape)) for k, (layer, shape) in ops.items()}
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 0.1] = 0.5
    errors["relu"] = _layer_error(nn.ReLU(), x)
    logits, labels = rng.standard_normal((4, 3)), np.array([0, 2, 1, 1])
    errors["cross_entropy"] = rel_error(nn.functional.cross_entropy(logits, labels)[1],
                                        numeric_grad(lambda: nn.functional.cross_entropy(
                                            logits, labels)[0], logits))
    emb = nn.Embedding(3, 4, rng=rng)
    idx = np.array([0, 2, 0])
    r = rng.standard_normal((3, 4))
    emb.zero_grad()
    emb.forward(idx)
    emb.backward(r)
    errors["embedding"] = rel_error(emb.weight.grad, numeric_grad(
        lambda: float(np.sum(emb.forward(idx) * r)), emb.weight.value))
    errors["tiny_vqvae"] = _vqvae_error()
    errors["tiny_unet"] = _unet_error()
    worst = max(errors, key=errors.get)
    criterion(6, all(v < 1e-3 for v in errors.values()),
              f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.1e} (< 1e-3)")


# -- 7 ---------------------------------------------------------------------------

def test_7_metric_closed_forms(criterion):
    one = lambda mu: GaussianFit(np.array([mu]), np.array([[1.0]]), 0)
    fd_unit = frechet_distance(one(0.0), one(1.0))
    rng = np.random.default_rng(7)
    axioms = True
    for _ in range(100):
        A, B = rng.standard_normal((2, 5, 5))
        a = GaussianFit(rng.standard_normal(5), A @ A.T + 0.1 * np.eye(5), 0)
        b = GaussianFit(rng.standard_normal(5), B @ B.T + 0.1 * np.eye(5), 0)
        for metric in (frechet_distance, mmd_gaussian, jsd_gaussian):
            ab, ba = metric(a, b), metric(b, a)
            axioms &= ab >= 0 and math.isclose(ab, ba, rel_tol=1e-8, abs_tol=1e-10)
            axioms &= abs(metric(a, a)) <= 1e-9
    x, y = rng.normal(0, 1, 100_000), rng.normal(1, 2, 100_000)
    w2 = float(np.mean((np.sort(x) - np.sort(y)) ** 2))
    fd = frechet_distance(fit_gaussian(x[:, None]), fit_gaussian(y[:, None]))
    criterion(7, abs(fd_unit - 1) <= 1e-9 and axioms and abs(fd - w2) <= 0.05 * w2,
              f"FD(N(0,1),N(1,1))={fd_unit:.12f}; axioms ok={axioms}; "
              f"1-D FD {fd:.4f} vs sorted W2 {w2:.4f}")


# -- 8 and 10 share one trained toy model -------------------------------------------

REDUCED = dict(vq_epochs=200, steps=100, beta_start=5e-4, beta_end=0.1, ddpm_epochs=300,
               base_channels=32, batch_size=8)


@pytest.fixture(scope="module")
def toy_run():
    full = generate_synthetic(SynthSpec(class_count=4, samples_per_class=110, seed=7))
    train = np.concatenate([np.flatnonzero(full.labels == k)[:10] for k in range(4)])
    held = np.concatenate([np.flatnonzero(full.labels == k)[10:] for k in range(4)])
    real, test = full.subset(train), full.subset(held)
    t0 = time.perf_counter()
    model = DiffRaman(random_state=0, **REDUCED).fit(real.intensities, real.labels)
    X, y = model.sample_balanced(20, random_state=1)
    return real, test, real.with_intensities(X, y), t0


@pytest.mark.slow
def test_8_augmentation_trend(toy_run, criterion):
    real, test, syn, t0 = toy_run
    cfg = ClassifierConfig(class_count=4)
    base = augmentation_experiment(real, None, test, cfg, trials=5)
    aug = augmentation_experiment(real, syn, test, cfg, trials=5)

    L = 1024
    R = interpolate_rows(real.intensities, L)
    T = interpolate_rows(test.intensities, L)
    G = interpolate_rows(syn.intensities, L)
    rng = np.random.default_rng(8)
    # unconditional noise: per-point mean and variance of all real training spectra
    mu, sd = R.mean(axis=0), R.std(axis=0)
    closer = []
    for k in range(4):
        ref = fit_gaussian(T[test.labels == k])
        g = G[syn.labels == k]
        noise = mu + sd * rng.standard_normal(g.shape)
        closer.append(frechet_distance(fit_gaussian(g), ref)
                      < frechet_distance(fit_gaussian(noise), ref))
    elapsed = time.perf_counter() - t0
    criterion(8, aug.mean >= base.mean and all(closer),
              f"accuracy real+DiffRaman {aug.mean:.4f} vs real {base.mean:.4f}; "
              f"FD below matched noise for {sum(closer)}/4 classes; {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_10_class_conditioning(toy_run, criterion):
    real, _, syn, _ = toy_run
    L = 1024
    R = interpolate_rows(real.intensities, L)
    G = interpolate_rows(syn.intensities, L)
    gen_means = np.array([G[syn.labels == k].mean(axis=0) for k in range(4)])
    real_means = np.array([R[real.labels == k].mean(axis=0) for k in range(4)])
    pair = np.linalg.norm(gen_means[:, None] - gen_means[None], axis=-1)
    min_pair = pair[np.triu_indices(4, 1)].min()
    nearest = np.linalg.norm(gen_means[:, None] - real_means[None], axis=-1).argmin(axis=1)
    hits = int(np.sum(nearest == np.arange(4)))
    criterion(10, min_pair > 0 and hits >= 3,
              f"min pairwise class-mean distance {min_pair:.3f}; nearest-class hits {hits}/4")


# -- 9 ---------------------------------------------------------------------------

def test_9_cli_determinism(tmp_path, criterion):
    tiny_vq = ["--side", "16", "--d", "2", "--codebook", "8", "--hidden", "2,4", "--epochs", "2"]
    tiny_dd = ["--steps", "10", "--beta-start", "1e-3", "--beta-end", "0.2", "--base-channels",
               "4", "--depth", "1", "--time-embed-dim", "8", "--epochs", "2", "--batch", "4"]
    spec = tmp_path / "spec.toml"
    spec.write_text("class_count = 3\nsamples_per_class = 4\ngrid_points = 60\n")

    def run(d):
        d.mkdir()
        p = lambda name: str(d / name)
        steps = {
            "synth-data": (["synth-data", "--spec", str(spec), "--out", p("train.csv"),
                            "--seed", "3"], ["train.csv"]),
            "train-vqvae": (["train-vqvae", "--data", p("train.csv"), "--out", p("vq.ckpt"),
                             "--seed", "3", *tiny_vq], ["vq.ckpt"]),
            "train-ddpm": (["train-ddpm", "--data", p("train.csv"), "--vqvae", p("vq.ckpt"),
                            "--out", p("dd.ckpt"), "--seed", "3", *tiny_dd], ["dd.ckpt"]),
            "sample": (["sample", "--ddpm", p("dd.ckpt"), "--vqvae", p("vq.ckpt"), "--class",
                        "class_1", "--count", "4", "--out", p("gen.csv"), "--seed", "3"],
                       ["gen.csv"]),
            "augment-da": (["augment-da", "--data", p("train.csv"), "--per-class", "3",
                            "--out", p("da.csv"), "--seed", "3"], ["da.csv"]),
            "metrics": (["metrics", "--real", p("train.csv"), "--generated", p("gen.csv"),
                         "--generated", p("da.csv"), "--out", p("m.csv")], ["m.csv"]),
            "augment-eval": (["augment-eval", "--real", p("train.csv"), "--synthetic", p("da.csv"),
                              "--test", p("train.csv"), "--trials", "2", "--max-epochs", "2",
                              "--out", p("eval.csv"), "--seed", "3"], ["eval.csv"]),
            "export-pca": (["export-pca", "--input", p("train.csv"), "--input", p("gen.csv"),
                            "--out", p("pca.csv")], ["pca.csv"]),
        }
        out = {}
        for name, (argv, files) in steps.items():
            assert main(argv) == 0, name
            out[name] = b"".join((d / f).read_bytes() for f in files)
        return out

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    same = [k for k in a if a[k] == b[k]]
    criterion(9, len(same) == len(a),
              f"{len(same)}/{len(a)} subcommands byte-identical across two runs")
