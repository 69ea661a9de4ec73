"""Acceptance suite: one test per release criterion, each printing a single
PASS line with its headline numbers. Tolerances and time budgets are pinned
in the asserts."""

import math
import statistics
import time
from dataclasses import replace

import numpy as np
import torch
import torch.nn.functional as F
import pytest
from scipy import stats

from _util import random_tokens, tiny_config, tiny_model, total_variation
from bargen.bitcodec import TokenGrid, bits_to_index, index_to_bits, patch_shuffle, patch_unshuffle
from bargen.cli import main
from bargen.errors import CapabilityError
from bargen.experiments import (
    comparison_config,
    head_comparison_experiment,
    throughput_experiment,
    token_accuracy_greedy,
)
from bargen.fsq import FsqConfig, fsq_dequantize, fsq_quantize
from bargen.masking import RatioStrategy, UnmaskSchedule, sample_mask_ratios
from bargen.model import (
    Generator,
    LinearHead,
    ModelConfig,
    bit_param_count,
    linear_param_count,
    mbm_param_count,
)
from bargen.oracle import (
    exact_model_distribution,
    single_step_distribution,
    token_distribution,
)
from bargen.sampler import SampleConfig, cfg_combine, generate_sequence, sample_token
from bargen.synthetic import SyntheticTask, gen_image_dataset
from bargen.toyae import train_toy_autoencoder
from bargen.trainer import run_experiment


def _report(capsys, n, text):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} PASS: {text}")


def test_acceptance_01_bit_budget_arithmetic(tmp_path, capsys):
    table = tmp_path / "budget.txt"
    table.write_text(
        "vq_k256 discrete 256 256 16 256\n"
        "vq_k64 discrete 256 256 16 64\n",
        encoding="utf-8",
    )
    t0 = time.perf_counter()
    assert main(["budget", "--config", str(table)]) == 0
    elapsed = time.perf_counter() - t0
    lines = capsys.readouterr().out.strip().splitlines()
    bits = [int(line.split("\t")[-1]) for line in lines[1:]]
    assert bits == [65536, 16384]
    assert elapsed < 1.0
    _report(capsys, 1, f"budget CLI reproduces 65536 and 16384 bits in {elapsed:.3f}s")


def test_acceptance_02_codec_round_trips(capsys):
    t0 = time.perf_counter()
    for k in range(1, 13):
        for v in range(2**k):
            assert bits_to_index(index_to_bits(v, k)) == v
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = int(rng.choice([1, 2, 4]))
        h = p * int(rng.integers(1, 5))
        w = p * int(rng.integers(1, 5))
        k = int(rng.integers(1, 17))
        grid = TokenGrid(rng.integers(0, 2, size=(h, w, k)).astype(np.uint8))
        assert patch_unshuffle(patch_shuffle(grid, p), p) == grid
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(
        capsys, 2,
        f"exhaustive index/bits round trip (k<=12) and 100 shuffle round trips "
        f"bit-exact in {elapsed:.2f}s",
    )


def test_acceptance_03_quantizer(capsys):
    t0 = time.perf_counter()
    k = 12
    codes = np.arange(2**k, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(k)) & 1).astype(np.uint8)
    round_trip, _ = fsq_quantize(fsq_dequantize(torch.from_numpy(bits)))
    assert torch.equal(round_trip, torch.from_numpy(bits))

    torch.manual_seed(0)
    latent = torch.randn(100, dtype=torch.float64, requires_grad=True)
    w = torch.randn(100, dtype=torch.float64)
    (fsq_quantize(latent)[1] * w).sum().backward()
    h = 1e-4
    max_err = 0.0
    with torch.no_grad():
        for i in range(100):
            z = latent.detach().clone()
            z[i] += h
            up = float((z * w).sum())
            z[i] -= 2 * h
            down = float((z * w).sum())
            fd = (up - down) / (2 * h)
            max_err = max(max_err, abs(fd - float(latent.grad[i])))
    assert max_err <= 1e-5
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(
        capsys, 3,
        f"quantize∘dequantize fixes all 4096 codes; STE vs finite differences "
        f"max err {max_err:.2e} in {elapsed:.2f}s",
    )


def test_acceptance_04_masking_statistics(capsys):
    n = 100_000
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cases = {
        "uniform": stats.uniform.cdf,
        "arccos": lambda x: 1.0 - np.cos(np.pi * x / 2),
        "logit_normal": lambda x: stats.norm.cdf(np.log(x / (1 - x))),
    }
    pvalues = {}
    for kind, cdf in cases.items():
        draws = sample_mask_ratios(RatioStrategy(kind), n, rng)
        pvalues[kind] = stats.kstest(draws, cdf).pvalue
        assert pvalues[kind] > 0.01
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    summary = ", ".join(f"{k} p={v:.3f}" for k, v in pvalues.items())
    _report(capsys, 4, f"KS tests at 1e5 draws: {summary} ({elapsed:.2f}s)")


def test_acceptance_05_head_complexity(capsys):
    t0 = time.perf_counter()
    for k in (4, 8, 10, 12, 16):
        mbm = tiny_model(k=k)
        assert sum(p.numel() for p in mbm.head.parameters()) == mbm_param_count(mbm.cfg)
        lin = tiny_model(k=k, head_kind="linear")
        assert sum(p.numel() for p in lin.head.parameters()) == linear_param_count(lin.cfg)
        bit = tiny_model(k=k, head_kind="bit")
        assert sum(p.numel() for p in bit.head.parameters()) == bit_param_count(bit.cfg)
    with pytest.raises(CapabilityError):
        ModelConfig(head_kind="linear", k=32)
    with pytest.raises(CapabilityError):
        LinearHead(tiny_config(k=32))
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(
        capsys, 5,
        f"parameter counts match closed forms for k in {{4,8,10,12,16}}; "
        f"linear head at k=32 raises a capability error ({elapsed:.2f}s)",
    )


def test_acceptance_06_sampler_distribution_oracle(capsys):
    t0 = time.perf_counter()
    model = tiny_model(seed=2, k=3, class_count=2)
    schedule = UnmaskSchedule((1, 2), 3)

    # single token: Monte Carlo vs exact enumeration
    with torch.no_grad():
        z, _ = model.backbone.prefill(torch.tensor([0]))
    exact_token = token_distribution(model, z[0], schedule)
    cfg = SampleConfig(schedule=schedule, selection="random_order", seed=0)
    rng = torch.Generator().manual_seed(0)
    n = 100_000
    with torch.no_grad():
        bits, _ = sample_token(model, z.expand(n, -1), None, cfg, rng)
    freq = np.bincount(
        (bits.long() << torch.arange(3)).sum(dim=-1).numpy(), minlength=8
    ) / n
    tv_token = total_variation(freq, exact_token)
    assert tv_token <= 0.02

    # single-step schedule: closed-form Bernoulli product
    one_step = token_distribution(model, z[0], UnmaskSchedule((3,), 3))
    closed = single_step_distribution(model, z[0])
    assert np.abs(one_step - closed).max() < 1e-12

    # two-token joint distribution
    exact_seq = exact_model_distribution(model, 1, 2, schedule)
    counts = np.zeros(64)
    total = 0
    for seed in range(5):
        seq_cfg = SampleConfig(schedule=schedule, selection="random_order", seed=seed)
        tokens, _, _ = generate_sequence(model, 1, 2, seq_cfg, batch=20_000)
        flat = (
            (tokens[:, 0].long() << torch.arange(3)).sum(dim=-1)
            + 8 * (tokens[:, 1].long() << torch.arange(3)).sum(dim=-1)
        ).numpy()
        counts += np.bincount(flat, minlength=64)
        total += 20_000
    tv_seq = total_variation(counts / total, exact_seq)
    assert tv_seq <= 0.02
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report(
        capsys, 6,
        f"Monte Carlo vs exact enumeration: token TV {tv_token:.4f}, "
        f"sequence TV {tv_seq:.4f}, single-step exact ({elapsed:.1f}s)",
    )


def test_acceptance_07_gradient_correctness(capsys):
    t0 = time.perf_counter()
    torch.manual_seed(0)
    model = Generator(tiny_config(depth=2, k=4, class_count=2)).double()
    rng = np.random.default_rng(0)
    tokens = random_tokens(rng, 4, 3, 4)
    classes = torch.tensor([0, 1, 0, 1])
    mask = torch.from_numpy(rng.random((4, 3, 4)) < 0.6)
    mask[0, 0, 0] = True

    def loss_fn():
        z = model.backbone(tokens, classes)[:, :-1, :]
        logits = model.head(tokens.long(), mask, z)
        return F.binary_cross_entropy_with_logits(logits, tokens.double())

    model.zero_grad()
    loss_fn().backward()

    h = 1e-4
    checked = 0
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            grad = p.grad.view(-1)
            idx = rng.choice(flat.numel(), size=min(5, flat.numel()), replace=False)
            for i in idx:
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                fd = (up - down) / (2 * h)
                analytic = float(grad[i])
                err = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6)
                worst = max(worst, err)
                assert err <= 1e-2, f"{name}[{i}]: fd {fd} vs grad {analytic}"
                checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report(
        capsys, 7,
        f"finite differences vs autograd on {checked} entries, worst relative "
        f"error {worst:.2e} ({elapsed:.1f}s)",
    )


def test_acceptance_08_trainability(tmp_path, capsys):
    t0 = time.perf_counter()
    # memorization: 4 fixed sequences to < 0.01 nats/bit in 200 steps
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    model = Generator(tiny_config(k=8, width=64, ffn_width=128, head_width=64))
    tokens = random_tokens(rng, 4, 4, 8)
    classes = torch.arange(4)
    mask = torch.ones(4, 4, 8, dtype=torch.bool)
    opt = torch.optim.AdamW(model.parameters(), lr=2e-3)
    final = None
    for _ in range(200):
        z = model.backbone(tokens, classes)[:, :-1, :]
        logits = model.head(tokens.long(), mask, z)
        loss = F.binary_cross_entropy_with_logits(logits, tokens.float())
        opt.zero_grad()
        loss.backward()
        opt.step()
        final = float(loss.detach())
    assert final < 0.01

    # synthetic task: held-out greedy token accuracy > 0.95 on 3/3 seeds
    accuracies = []
    for seed in (0, 1, 2):
        exp = comparison_config(8, "mbm", seed, epochs=20)
        exp = replace(exp, task=replace(exp.task, determinism=0.995))
        result = run_experiment(exp, tmp_path / f"s{seed}")
        acc = token_accuracy_greedy(result["model"], *result["heldout"])
        accuracies.append(acc)
        assert acc > 0.95
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    _report(
        capsys, 8,
        f"memorization loss {final:.2e} nats/bit after 200 steps; held-out "
        f"accuracy {', '.join(f'{a:.3f}' for a in accuracies)} ({elapsed:.1f}s)",
    )


def test_acceptance_09_head_ordering(tmp_path, capsys):
    t0 = time.perf_counter()
    report = head_comparison_experiment(
        [4, 8, 12, 16, 32], seeds=[0, 1, 2], out_dir=tmp_path,
        heads=("mbm", "bit"),
    )
    nll = {
        (c["k"], c["head"], c["seed"]): c["nll_nats_per_token"]
        for c in report["cells"]
    }
    margins = []
    for k in (4, 8, 12, 16, 32):
        for seed in (0, 1, 2):
            assert nll[(k, "mbm", seed)] <= nll[(k, "bit", seed)], (
                f"k={k} seed={seed}: mbm {nll[(k, 'mbm', seed)]:.4f} vs "
                f"bit {nll[(k, 'bit', seed)]:.4f}"
            )
            margins.append(nll[(k, "bit", seed)] - nll[(k, "mbm", seed)])
    elapsed = time.perf_counter() - t0
    assert elapsed < 3600.0
    _report(
        capsys, 9,
        f"mbm head NLL <= bit head NLL on all 15 (k, seed) cells, min margin "
        f"{min(margins):.4f} nats/token ({elapsed:.1f}s)",
    )


def test_acceptance_10_reconstruction_vs_bits(capsys):
    t0 = time.perf_counter()
    task = SyntheticTask(kind="toy_images", class_count=4, image_size=32)
    images, _ = gen_image_dataset(task, 16, seed=0)
    medians = {}
    for k in (4, 8, 16):
        mses = []
        for seed in (0, 1, 2):
            cfg = FsqConfig(channels_per_token=k, downsample_factor=4)
            _, _, mse = train_toy_autoencoder(
                images, cfg, epochs=150, batch_size=16, seed=seed
            )
            mses.append(mse)
        medians[k] = statistics.median(mses)
    assert medians[8] <= medians[4] * 1.05
    assert medians[16] <= medians[8] * 1.05
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0
    summary = ", ".join(f"k={k}: {m:.5f}" for k, m in medians.items())
    _report(capsys, 10, f"median reconstruction MSE non-increasing ({summary}; {elapsed:.1f}s)")


def test_acceptance_11_schedule_and_guidance_identities(capsys):
    t0 = time.perf_counter()
    assert UnmaskSchedule((4, 4, 4, 4), 16).steps == (4, 4, 4, 4)
    assert UnmaskSchedule((2, 2, 5, 7), 16).steps == (2, 2, 5, 7)
    from bargen.errors import ScheduleError

    with pytest.raises(ScheduleError):
        UnmaskSchedule((8, 8, 8), 16)

    torch.manual_seed(0)
    cond, uncond = torch.randn(4, 16), torch.randn(4, 16)
    assert torch.equal(cfg_combine(cond, uncond, 0.0), uncond)
    assert torch.allclose(cfg_combine(cond, uncond, 1.0), cond, atol=1e-6)

    # guidance_scale = 0 takes the single-pass path bit-exactly
    model = tiny_model(seed=1, k=4)
    cfg = SampleConfig(schedule=UnmaskSchedule((2, 2), 4), seed=0, guidance_scale=0.0)
    tokens, cost, _ = generate_sequence(model, 0, 4, cfg, batch=2)
    assert cost["head_calls_per_token"] == len(cfg.schedule)
    rng = torch.Generator().manual_seed(0)
    classes = torch.tensor([0, 0])
    manual = []
    with torch.no_grad():
        for _ in range(4):
            prev = (
                torch.stack(manual, dim=1)
                if manual
                else torch.zeros(2, 0, 4, dtype=torch.uint8)
            )
            z = model.backbone(prev, classes)[:, -1, :]
            bits, _ = sample_token(model, z, None, cfg, rng)
            manual.append(bits)
    assert torch.equal(tokens, torch.stack(manual, dim=1))
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(
        capsys, 11,
        f"schedule validation and guidance identities hold ({elapsed:.2f}s)",
    )


def test_acceptance_12_throughput_direction(capsys):
    t0 = time.perf_counter()
    report = throughput_experiment(grid=8, k=16, patches=(1, 2), steps=4, batch=8)
    rows = {row[0]: row for row in report["throughput"]}
    assert rows[1][1] == 4 * rows[2][1]  # 64 vs 16 tokens
    base_p1 = rows[1][4]
    base_p2 = rows[2][4]
    assert base_p2 > base_p1  # strict improvement in base-token throughput
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report(
        capsys, 12,
        f"patch size 2 cuts tokens 64->16 and lifts throughput "
        f"{base_p1:.1f} -> {base_p2:.1f} base tokens/s ({elapsed:.1f}s)",
    )
