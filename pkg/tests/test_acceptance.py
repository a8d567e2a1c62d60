"""Acceptance gate: every criterion printed as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete. The trend criteria train full desk-scale schemes and together
take a few CPU-hours; everything else finishes in seconds.
"""

import dataclasses
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import no_fading_channel, small_grid
from veccache import nn
from veccache.config import desk_config
from veccache.env import EnvConfig, VecCacheEnv
from veccache.experiments import ExperimentSpec, apply_sweep, converged_value, run_one
from veccache.taskcache import (CacheState, TaskConfig, TaskSpec, fetch_latency,
                                local_latency, offload_latency, total_latency,
                                zipf_probs)
from veccache.trainer import (DiscreteMdp, MgarlTrainer, TrainConfig, train,
                              train_q_on_mdp, value_iteration)
from veccache.world import ChannelParams, World, channel_gain, dbm_to_watt, \
    noise_power_watt, shannon_rate

from test_nn import assert_close_grads, check_leaf_grads, fd_grad, ring_graph, \
    conv_op_count
from test_trainer import filled_trainer, rollout, tiny_trainer, two_state_mdp


def report(criterion: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(line, flush=True)
    assert ok, line


# --- 1. formula unit suite ---------------------------------------------------


@pytest.mark.acceptance
def test_criterion_1_formula_suite():
    t0 = time.perf_counter()
    rel = 1e-9

    def close(a, b):
        # relative 1e-9, with an absolute floor for values that are
        # themselves numerical zeros
        return abs(a - b) <= rel * max(abs(a), abs(b)) + 1e-12

    checks = []

    # link rates against an independent dBm-chain evaluation
    b_hz, d = 10e6, 100.0
    noise = 10 ** ((-174.0 - 30.0) / 10.0) * b_hz
    for p_dbm, gain in ((23.0, 1e-3 * d ** -3.0), (40.0, 1e-3 * 250.0 ** -3.0)):
        p_w = 10 ** ((p_dbm - 30.0) / 10.0)
        oracle = b_hz * math.log2(1.0 + p_w * gain / noise)
        got = shannon_rate(b_hz, dbm_to_watt(p_dbm), gain,
                           noise_power_watt(-174.0, b_hz))
        checks.append(close(got, oracle))

    # latency decomposition
    task = TaskSpec(input_bits=20e6, cpu_cycles=50e6, content_bits=8e6)
    checks.append(close(local_latency(task, 0.8e9), 50e6 / 0.8e9))
    checks.append(close(offload_latency(task, 20e6, 1e9, 40e6),
                        20e6 / 20e6 + 50e6 / 1e9 + 8e6 / 40e6))
    checks.append(close(fetch_latency(task, 40e6), 0.2))
    checks.append(close(total_latency(True, False, 9.0, 9.0, 0.2), 0.2))
    checks.append(close(total_latency(False, True, 9.0, 1.25, 9.0), 1.25))
    checks.append(close(total_latency(False, False, 0.0625, 9.0, 9.0), 0.0625))

    # Zipf normalization and the closed-form two- and three-rank cases
    probs = zipf_probs(np.array([1, 2]), 0.5)
    checks.append(close(probs[0], 1.0 / (1.0 + 2.0 ** -0.5)))
    probs3 = zipf_probs(np.array([1, 2, 3]), 1.0)
    checks.append(np.allclose(probs3, [6 / 11, 3 / 11, 2 / 11], rtol=rel))
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(1, 30))
        p = zipf_probs(rng.permutation(k) + 1, float(rng.uniform(0, 3)))
        checks.append(abs(p.sum() - 1.0) < 1e-12)

    # per-slot reward
    env_cfg = EnvConfig()
    env = VecCacheEnv(small_grid(vu_count=1, rsu_count=1), no_fading_channel(),
                      TaskConfig(content_types=2), env_cfg, seed=0)
    checks.append(close(env.reward(True, 0.1, 0.0), 1.9))
    checks.append(close(env.reward(False, 1.25, -0.5), -1.75))
    checks.append(close(env.reward(False, 0.0625, 0.0), -0.0625))

    # loss scalar case: TD square plus the lambda-weighted attention KL
    _, trainer = filled_trainer(seed=5)
    batch = trainer.buffer.sample(1, np.random.default_rng(3))
    e = batch[0]
    loss0, _, _ = trainer.loss(batch, lambda_kl=0.0)
    y = trainer.td_target(batch)[0]
    stacked = trainer._stack(batch)
    q, alpha_t = trainer.nets[0].forward(stacked[0], stacked[2], stacked[4],
                                         rows=stacked[6], want_alpha=True)
    slot = trainer.action_to_slot(e.obs_t, e.agent, e.action)
    checks.append(close(float(loss0.data), (y - q.data[0, slot]) ** 2))

    lam = 0.37
    kl_batch = trainer.buffer.sample(4, np.random.default_rng(11))
    base_l, _, _ = trainer.loss(kl_batch, lambda_kl=0.0)
    loss_l, _, kl_mean = trainer.loss(kl_batch, lambda_kl=lam)
    kl_stacked = trainer._stack(kl_batch)
    _, alpha_all = trainer.nets[0].forward(kl_stacked[0], kl_stacked[2],
                                           kl_stacked[4], rows=kl_stacked[6],
                                           want_alpha=True)
    _, alpha_all1 = trainer.nets[0].forward(kl_stacked[1], kl_stacked[3],
                                            kl_stacked[5], rows=kl_stacked[6],
                                            alpha_only=True)
    heads = trainer.cfg.heads
    kl_by_hand = []
    for s_i, exp in enumerate(kl_batch):
        ids_t = exp.idx_t[exp.agent][exp.mask_t[exp.agent]]
        ids_t1 = exp.idx_t1[exp.agent][exp.mask_t1[exp.agent]]
        shared = [i for i in ids_t if i in set(ids_t1)]
        for u in range(heads):
            at = alpha_all.data[s_i * heads + u]
            at1 = alpha_all1.data[s_i * heads + u]
            pt = np.array([at[list(exp.idx_t[exp.agent]).index(i)] for i in shared])
            pt1 = np.array([at1[list(exp.idx_t1[exp.agent]).index(i)] for i in shared])
            pt, pt1 = pt / pt.sum(), pt1 / pt1.sum()
            kl_by_hand.append(nn.kl_divergence(pt, pt1))
    checks.append(close(kl_mean, float(np.mean(kl_by_hand))))
    checks.append(close(float(loss_l.data), float(base_l.data) + lam * kl_mean))

    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 10.0
    report(1, ok, f"{len(checks)} formula checks at 1e-9 rel in {elapsed:.2f}s (< 10s)")


# --- 2. gradient suite -------------------------------------------------------


@pytest.mark.acceptance
def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)

    # dense layer
    x = nn.Var(rng.standard_normal((3, 5)), requires_grad=True)
    dense = nn.DenseParams.init(rng, 5, 4)
    w = rng.standard_normal((3, 4))
    check_leaf_grads(
        lambda: nn.reduce_sum(nn.mul(nn.dense_forward(x, dense, "relu"), w)),
        {"x": x, "w": dense.w, "b": dense.b})

    # masked multi-head attention convolution, every parameter matrix
    d, heads = 4, 2
    params = nn.AttentionLayerParams.init(rng, d, d, d, heads)
    feats = nn.Var(rng.standard_normal((4, d)), requires_grad=True)
    idx = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 1], [3, 0, 2]])
    mask = np.array([[True, True, True], [True, True, False],
                     [True, True, True], [True, False, False]])
    wout = rng.standard_normal((4, d))
    check_leaf_grads(
        lambda: nn.reduce_sum(nn.mul(
            nn.graph_conv_batch(feats, idx, mask, params)[0], wout)),
        {"feats": feats, "wq": params.wq, "wk": params.wk,
         "wv": params.wv, "wo": params.wo})

    # KL term with its renormalization, through the softmax
    raw = nn.Var(rng.standard_normal((1, 5)), requires_grad=True)
    q = rng.dirichlet(np.ones(5))[None, :]
    check_leaf_grads(
        lambda: nn.kl_divergence_var(
            nn.masked_softmax(raw, np.ones((1, 5), dtype=bool)), q),
        {"raw": raw})

    elapsed = time.perf_counter() - t0
    ok = elapsed < 60.0
    report(2, ok, f"finite-difference checks (eps=1e-5, rel<1e-4) in {elapsed:.2f}s (< 60s)")


# --- 3. capacity safety -------------------------------------------------------


@pytest.mark.acceptance
def test_criterion_3_capacity_safety():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n_sns, n_tasks = 8, 16
    content = rng.uniform(1e6, 20e6, size=n_tasks)
    caps = rng.uniform(20e6, 120e6, size=n_sns)
    cache = CacheState(caps, content)

    def invariant_holds():
        used = (cache.cached * cache.content_bits[None, :]).sum(axis=1)
        return bool((used <= cache.capacity_bits + 1e-9).all()
                    and np.allclose(used + cache.free_bits, cache.capacity_bits))

    # capacity violations are monotone between flushes, so batched checks
    # with an extra check before every flush cover every operation
    total_ops = 1_000_000
    sns = rng.integers(0, n_sns, size=total_ops)
    tasks = rng.integers(0, n_tasks, size=total_ops)
    flush_roll = rng.random(total_ops)
    ok = True
    for i in range(total_ops):
        if flush_roll[i] < 1e-4:
            ok &= invariant_holds()
            cache.flush()
        else:
            cache.try_cache(int(sns[i]), int(tasks[i]))
        if i % 1000 == 999:
            ok &= invariant_holds()
            if not ok:
                break
    ok &= invariant_holds()
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    report(3, ok, f"{total_ops} randomized cache ops, capacity bound held, "
                  f"{elapsed:.1f}s (< 30s)")


# --- desk-scale training helpers -----------------------------------------------


def desk_train_config(episodes: int) -> TrainConfig:
    cfg = desk_config()
    return dataclasses.replace(cfg.train.desk_scale(), episodes=episodes)


def desk_sim_config(episodes: int):
    cfg = desk_config()
    return dataclasses.replace(cfg, train=desk_train_config(episodes))


def converged_metrics(sim_cfg, scheme, seeds):
    rewards, hits, latencies = [], [], []
    for seed in seeds:
        summary = run_one(sim_cfg, scheme, seed)
        rewards.append(summary.converged_reward)
        hits.append(summary.converged_hit_ratio)
        latencies.append(summary.converged_latency)
    return np.array(rewards), np.array(hits), np.array(latencies)


# --- 4. convergence trend -------------------------------------------------------


@pytest.mark.acceptance
@pytest.mark.slow
def test_criterion_4_convergence_trend():
    seeds = (0, 1, 2, 3, 4)
    sim = desk_sim_config(episodes=500)
    results = {}
    for scheme in ("mgarl", "no_attention", "random"):
        t0 = time.perf_counter()
        rewards, _, _ = converged_metrics(sim, scheme, seeds)
        results[scheme] = rewards
        print(f"    {scheme}: converged rewards {np.round(rewards, 1).tolist()} "
              f"({(time.perf_counter() - t0) / 60:.1f} min, target < 30 min)",
              flush=True)

    mgarl, no_att, random_ = (results["mgarl"], results["no_attention"],
                              results["random"])
    stat_p = stats.wilcoxon(mgarl, random_, alternative="greater").pvalue
    margin_ok = mgarl.mean() - random_.mean() >= 0.2 * abs(random_.mean())
    ordering_ok = mgarl.mean() >= no_att.mean() >= random_.mean()
    ok = stat_p < 0.05 and margin_ok and ordering_ok
    report(4, ok,
           f"reward means mgarl={mgarl.mean():.1f} >= no_attention={no_att.mean():.1f} "
           f">= random={random_.mean():.1f}; margin>=20% of |random|: {margin_ok}; "
           f"one-sided Wilcoxon p={stat_p:.4f} (< 0.05)")


# --- 5. hit-ratio trend -----------------------------------------------------------


@pytest.mark.acceptance
@pytest.mark.slow
def test_criterion_5_hit_ratio_trend():
    seeds = (0, 1, 2)
    vu_counts = (4, 8, 12)
    content_types = (10, 20)
    base = desk_sim_config(episodes=200)
    mean_hit = {}
    for cts in content_types:
        cfg_ct = apply_sweep(base, "content_types", cts)
        for vus in vu_counts:
            cfg = apply_sweep(cfg_ct, "vu_count", vus)
            _, hits, _ = converged_metrics(cfg, "mgarl", seeds)
            mean_hit[(cts, vus)] = hits.mean()
            print(f"    CTs={cts} VUs={vus}: hit ratio {hits.mean():.3f} "
                  f"(seeds {np.round(hits, 3).tolist()})", flush=True)

    increasing = all(mean_hit[(cts, b)] > mean_hit[(cts, a)]
                     for cts in content_types
                     for a, b in zip(vu_counts, vu_counts[1:]))
    fewer_cts_wins = all(mean_hit[(20, v)] < mean_hit[(10, v)] for v in vu_counts)
    ok = increasing and fewer_cts_wins
    report(5, ok,
           f"hit ratio rises with vehicle count: {increasing}; "
           f"20 content types below 10 at every count: {fewer_cts_wins}")


# --- 6. latency trend ---------------------------------------------------------------


@pytest.mark.acceptance
@pytest.mark.slow
def test_criterion_6_latency_trend():
    seeds = (0, 1, 2)
    rsu_counts = (2, 4, 8)
    base = desk_sim_config(episodes=200)
    latency = {}
    for scheme in ("mgarl", "no_attention", "iddqn", "random"):
        for rsus in rsu_counts:
            cfg = apply_sweep(base, "rsu_count", rsus)
            _, _, lats = converged_metrics(cfg, scheme, seeds)
            latency[(scheme, rsus)] = lats.mean()
            print(f"    {scheme} RSUs={rsus}: latency {lats.mean():.1f}s", flush=True)

    decreasing = all(latency[("mgarl", b)] < latency[("mgarl", a)]
                     for a, b in zip(rsu_counts, rsu_counts[1:]))
    best_everywhere = all(
        latency[("mgarl", r)] <= latency[(s, r)]
        for r in rsu_counts for s in ("no_attention", "iddqn", "random"))
    ok = decreasing and best_everywhere
    report(6, ok,
           f"latency strictly decreasing in RSU count: {decreasing}; "
           f"graph-attention scheme at or below every baseline: {best_everywhere}")


# --- 7. toy-MDP oracle ------------------------------------------------------------


@pytest.mark.acceptance
def test_criterion_7_toy_mdp_oracle():
    t0 = time.perf_counter()
    mdp = two_state_mdp()
    oracle = value_iteration(mdp, gamma=0.9)
    cfg = TrainConfig(batch_size=32, buffer_capacity=512, feature_dim=16,
                      heads=2, encoder_hidden=16, q_hidden=16,
                      target_sync_period=50, lambda_kl=0.0)
    learned = train_q_on_mdp(mdp, cfg, steps=6000, eps=0.4, seed=0)
    err = float(np.abs(learned - oracle).max())
    elapsed = time.perf_counter() - t0
    ok = err < 1e-2 and elapsed < 120.0
    report(7, ok, f"max |Q - Q*| = {err:.2e} (< 1e-2) in {elapsed:.1f}s (< 2 min)")


# --- 8. complexity shape -----------------------------------------------------------


@pytest.mark.acceptance
def test_criterion_8_complexity_shape():
    n, d, heads = 100, 32, 4
    params = nn.AttentionLayerParams.init(np.random.default_rng(0), d, d, d, heads)
    feats = np.random.default_rng(1).standard_normal((n, d))
    edges, counts = [], []
    for deg in range(2, 21, 2):
        idx, mask = ring_graph(n, deg)
        edges.append(n * deg / 2)
        counts.append(conv_op_count(feats, idx, mask, params))
    edges = np.array(edges, dtype=float)
    counts = np.array(counts, dtype=float)
    slope, intercept = np.polyfit(edges, counts, 1)
    pred = slope * edges + intercept
    r2 = 1.0 - ((counts - pred) ** 2).sum() / ((counts - counts.mean()) ** 2).sum()
    ok = r2 > 0.95 and slope > 0
    report(8, ok, f"attention op count vs edges {edges[0]:.0f}..{edges[-1]:.0f}: "
                  f"linear fit R^2 = {r2:.6f} (> 0.95)")
