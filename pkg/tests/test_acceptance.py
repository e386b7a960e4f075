"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two training
proxies (criteria 7 and 8) dominate the runtime; everything else finishes
in seconds.
"""

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from udlalign import imaging
from udlalign.datasets import (
    AlignmentPair,
    generate_coco_pairs,
    load_dataset,
)
from udlalign.evaluation import correntropy, evaluate_reference, evaluate_synthetic
from udlalign.fourier_align import phase_correlation
from udlalign.geometry import RigidTransform, compose, invert, to_matrix, warp
from udlalign.network import NetworkConfig, RotationEstimator, RotationNet, match_features
from udlalign.udl import (
    BiasCalibration,
    TrainConfig,
    calibrate_bias,
    periodic_loss,
    train,
    udl_loss,
)

from conftest import OracleEstimator, make_texture


def report(num, desc, ok, detail=""):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {desc}{detail}")
    assert ok, f"criterion {num}: {desc}{detail}"


def test_criterion_01_oracle_zero_loss():
    rng = np.random.default_rng(101)
    t0 = time.time()
    gt = rng.uniform(0.0, 360.0, 1000)
    c = rng.uniform(-1000.0, 1000.0, 1000)
    a1 = rng.uniform(0.0, 360.0, 1000)
    a2 = rng.uniform(0.0, 360.0, 1000)
    p = (gt + c) % 360.0
    p_d = (gt - (a1 - a2) + c) % 360.0
    worst = float(np.max(np.abs(udl_loss(p, p_d, a1, a2, 360.0))))
    elapsed = time.time() - t0
    report(1, "oracle outputs zero the difference loss",
           worst < 1e-9 and elapsed < 1.0,
           f": max |loss| {worst:.2e} over 1000 quadruplets ({elapsed:.2f}s)")


def test_criterion_02_circular_distance_equivalence():
    rng = np.random.default_rng(102)
    t0 = time.time()
    a = rng.uniform(0.0, 360.0, 10_000)
    b = rng.uniform(0.0, 360.0, 10_000)
    got = periodic_loss(a, b, 360.0)
    expected = np.minimum(np.abs(a - b), 360.0 - np.abs(a - b))
    exact = bool(np.array_equal(got, expected))
    elapsed = time.time() - t0
    report(2, "periodic loss equals the circular L1 distance exactly",
           exact and elapsed < 1.0, f": 10^4 pairs, bitwise ({elapsed:.2f}s)")


def test_criterion_03_transform_algebra():
    rng = np.random.default_rng(103)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        m = RigidTransform(rng.uniform(0, 360), *rng.uniform(-10, 10, 2))
        m1 = RigidTransform(rng.uniform(0, 360), *rng.uniform(-10, 10, 2))
        m2 = RigidTransform(rng.uniform(0, 360), *rng.uniform(-10, 10, 2))
        m_prime = compose(compose(m2, m), invert(m1))
        residual = np.linalg.norm(to_matrix(m2) @ to_matrix(m) -
                                  to_matrix(m_prime) @ to_matrix(m1))
        worst = max(worst, float(residual))
    elapsed = time.time() - t0
    report(3, "consistent transform quadruples commute in matrix form",
           worst < 1e-9 and elapsed < 1.0,
           f": max Frobenius residual {worst:.2e} ({elapsed:.2f}s)")


def test_criterion_04_phase_correlation():
    t0 = time.time()
    textures = [make_texture(128, 128, seed=4000 + i) for i in range(100)]

    rng = np.random.default_rng(104)
    exact_hits = 0
    for i, img in enumerate(textures):
        dx, dy = int(rng.integers(-10, 11)), int(rng.integers(-10, 11))
        shifted = np.roll(img, (dy, dx), axis=(0, 1))
        gx, gy, _ = phase_correlation(img, shifted)
        exact_hits += (gx, gy) == (dx, dy)

    noisy_hits = 0
    for trial in range(200):
        trial_rng = np.random.default_rng(5000 + trial)
        img = textures[trial % 100]
        dx, dy = int(trial_rng.integers(-10, 11)), int(trial_rng.integers(-10, 11))
        shifted = np.roll(img, (dy, dx), axis=(0, 1))
        noisy = imaging.add_gaussian_noise(shifted, 0.5, trial_rng)
        gx, gy, _ = phase_correlation(img, noisy)
        noisy_hits += max(abs(gx - dx), abs(gy - dy)) <= 1
    elapsed = time.time() - t0
    report(4, "phase correlation recovers shifts (clean exact, noisy within 1px)",
           exact_hits == 100 and noisy_hits >= 190 and elapsed < 30.0,
           f": clean {exact_hits}/100 exact, snr-0.5 {noisy_hits}/200 within 1px "
           f"({elapsed:.1f}s)")


def test_criterion_05_feature_matching_oracle():
    t0 = time.time()
    worst = 0.0
    for seed in range(5):
        torch.manual_seed(500 + seed)
        f1 = torch.randn(8, 4, 4, dtype=torch.float64)
        f2 = torch.randn(8, 4, 4, dtype=torch.float64)
        corr = match_features(f1, f2)
        u1 = f1 / (f1.norm(dim=0, keepdim=True) + 1e-8)
        u2 = f2 / (f2.norm(dim=0, keepdim=True) + 1e-8)
        for i in range(4):
            for j in range(4):
                for y in range(4):
                    for x in range(4):
                        expected = float(torch.dot(u1[:, y, x], u2[:, i, j]))
                        got = float(corr[i * 4 + j, y, x])
                        worst = max(worst, abs(got - expected))
    elapsed = time.time() - t0
    report(5, "matching layer equals the brute-force correlation",
           worst < 1e-6 and elapsed < 1.0,
           f": max deviation {worst:.2e} ({elapsed:.2f}s)")


def test_criterion_06_gradient_checks():
    t0 = time.time()

    # (a) difference loss versus central finite differences
    rng = np.random.default_rng(106)
    loss_worst = 0.0
    checked = 0
    while checked < 100:
        p = float(rng.uniform(-30.0, 390.0))
        p_d = float(rng.uniform(-30.0, 390.0))
        a1, a2 = rng.uniform(0.0, 360.0, 2)
        x = (p - p_d) % 360.0
        b = (a1 - a2) % 360.0
        d = abs(x - b)
        if min(x, 360.0 - x, d, abs(d - 180.0),
               abs(p), abs(p - 360.0), abs(p_d), abs(p_d - 360.0)) < 1e-3:
            continue
        checked += 1
        pt = torch.tensor(p, dtype=torch.float64, requires_grad=True)
        loss = udl_loss(pt, torch.tensor(p_d, dtype=torch.float64),
                        torch.tensor(float(a1), dtype=torch.float64),
                        torch.tensor(float(a2), dtype=torch.float64), 360.0)
        loss.backward()
        h = 1e-5
        fd = (udl_loss(p + h, p_d, a1, a2) - udl_loss(p - h, p_d, a1, a2)) / (2 * h)
        denom = max(abs(fd), 1e-8)
        loss_worst = max(loss_worst, abs(float(pt.grad) - fd) / denom)

    # (b) full network forward versus central finite differences
    torch.manual_seed(606)
    cfg = NetworkConfig(height=32, width=32, mask_widths=(4, 4, 4, 1),
                        extractor_widths=(4, 8, 8, 16),
                        post_match_widths=(8, 8), fc_widths=(32, 32))
    net = RotationNet(cfg).double().eval()
    i1 = torch.rand(1, 1, 32, 32, dtype=torch.float64)
    i2 = torch.rand(1, 1, 32, 32, dtype=torch.float64)
    net(i1, i2).backward()
    params = [p for p in net.parameters() if p.grad is not None]
    net_worst = 0.0
    wrng = np.random.default_rng(107)
    checked_w = 0
    for _ in range(60):
        if checked_w >= 10:
            break
        p = params[int(wrng.integers(len(params)))]
        flat = p.detach().reshape(-1)
        idx = int(wrng.integers(flat.numel()))
        analytic = float(p.grad.reshape(-1)[idx])
        if abs(analytic) < 1e-7:
            continue
        h = 1e-6 * max(1.0, abs(float(flat[idx])))
        with torch.no_grad():
            flat[idx] += h
            plus = float(net(i1, i2))
            flat[idx] -= 2 * h
            minus = float(net(i1, i2))
            flat[idx] += h
        fd = (plus - minus) / (2 * h)
        net_worst = max(net_worst, abs(analytic - fd) / max(abs(fd), 1e-8))
        checked_w += 1

    elapsed = time.time() - t0
    report(6, "loss and network gradients match finite differences",
           loss_worst < 1e-3 and net_worst < 1e-3 and checked_w == 10
           and elapsed < 120.0,
           f": loss rel err {loss_worst:.2e} (100 pts), "
           f"network rel err {net_worst:.2e} (10 weights) ({elapsed:.1f}s)")


def _dir_digest(directory):
    digest = hashlib.sha256()
    for path in sorted(Path(directory).iterdir()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_criterion_09_dataset_self_consistency(tmp_path, source_image_dir):
    t0 = time.time()
    generate_coco_pairs(source_image_dir, tmp_path / "a", count=1000,
                        patch=64, max_shift=5, seed=909)
    worst = 0.0
    ds = load_dataset(tmp_path / "a")
    ones = np.ones((64, 64), dtype=np.float32)
    for pair in ds:
        projected = warp(pair.source, pair.gt)
        support = warp(ones, pair.gt) > 0.999
        mae = float(np.abs(projected[support] - pair.target[support]).mean())
        worst = max(worst, mae)
    generate_coco_pairs(source_image_dir, tmp_path / "b", count=1000,
                        patch=64, max_shift=5, seed=909)
    deterministic = _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")
    elapsed = time.time() - t0
    report(9, "synthetic pairs are warp-consistent and byte-deterministic",
           worst < 0.03 and deterministic and elapsed < 60.0,
           f": worst interior MAE {worst:.4f} over 1000 pairs, "
           f"regeneration {'identical' if deterministic else 'DIFFERS'} "
           f"({elapsed:.1f}s)")


def test_criterion_10_correntropy_contract():
    t0 = time.time()
    img = make_texture(64, 64, seed=1010)
    identical_ok = correntropy(img, img, sigma=0.2) == 1.0

    sigma = 0.31
    offset_score = correntropy(np.full((32, 32), 0.4), np.full((32, 32), 0.4 + sigma), sigma)
    offset_ok = abs(offset_score - math.exp(-0.5)) < 1e-9

    # oracle-aligned average must be sharper than the unaligned average
    reference = make_texture(64, 64, seed=1011)
    rng = np.random.default_rng(1012)
    images, oracle = [], OracleEstimator()
    for _ in range(200):
        t = RigidTransform(float(rng.uniform(0, 360)),
                           int(rng.integers(-5, 6)), int(rng.integers(-5, 6)))
        img_t = warp(reference, t)
        images.append(img_t)
        oracle.register(img_t, reference, invert(t).angle)
    _, average = evaluate_reference(
        oracle, BiasCalibration(0.0, 1, 0.0), images, reference
    )
    aligned_std = float(average.std())
    unaligned_std = float(np.mean(images, axis=0).std())
    sharper = aligned_std > unaligned_std
    elapsed = time.time() - t0
    report(10, "correntropy contract and aligned-average sharpness",
           identical_ok and offset_ok and sharper,
           f": identical=1.0 {identical_ok}, sigma-offset err "
           f"{abs(offset_score - math.exp(-0.5)):.1e}, aligned std {aligned_std:.4f} "
           f"> unaligned {unaligned_std:.4f} ({elapsed:.1f}s)")
