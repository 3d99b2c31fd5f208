import numpy as np
import pytest
from scipy import stats

from momart.data import (DatasetError, DatasetReader, Episode, PairSampler, STD_FLOOR,
                         WindowSampler, compute_norm_stats, write_dataset)


def make_episode(rng, length, obs_dim=5, success=True, task="cleanup-sink", seed=0):
    return Episode(task_id=task, seed=seed, operator="expert", success=success,
                   obs=rng.random((length, obs_dim), dtype=np.float32),
                   actions=rng.uniform(-1, 1, (length, 6)).astype(np.float32),
                   stage_events=[(0, "approach-table")])


def test_roundtrip_byte_exact(tmp_path, rng):
    eps = [make_episode(rng, int(rng.integers(2, 40)), seed=i) for i in range(7)]
    path = tmp_path / "d.mmds"
    write_dataset(path, eps)
    reader = DatasetReader(path)
    assert len(reader) == 7
    for i, ep in enumerate(eps):
        back = reader.read_episode(i)
        assert back.obs.tobytes() == ep.obs.tobytes()
        assert back.actions.tobytes() == ep.actions.tobytes()
        assert back.task_id == ep.task_id and back.seed == ep.seed
        assert back.success == ep.success
        assert back.stage_events == ep.stage_events


def test_roundtrip_many_random_episodes(tmp_path, rng):
    # property-style: arbitrary contents survive the container
    for trial in range(5):
        eps = [make_episode(rng, int(rng.integers(1, 12)), obs_dim=3, seed=i)
               for i in range(int(rng.integers(1, 6)))]
        path = tmp_path / f"r{trial}.mmds"
        write_dataset(path, eps)
        reader = DatasetReader(path)
        for i, ep in enumerate(eps):
            back = reader.read_episode(i)
            assert np.array_equal(back.obs, ep.obs)
            assert np.array_equal(back.actions, ep.actions)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.mmds"
    p.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(DatasetError, match="magic"):
        DatasetReader(p)


def test_truncated_file(tmp_path, rng):
    p = tmp_path / "t.mmds"
    write_dataset(p, [make_episode(rng, 10)])
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(DatasetError):
        reader = DatasetReader(p)
        reader.read_episode(0)


def test_110_episode_index(tmp_path, rng):
    eps = [make_episode(rng, 3, obs_dim=2, seed=i) for i in range(110)]
    path = tmp_path / "big.mmds"
    write_dataset(path, eps)
    assert len(DatasetReader(path)) == 110


def test_mismatched_dims_rejected(tmp_path, rng):
    e1 = make_episode(rng, 4, obs_dim=5)
    e2 = make_episode(rng, 4, obs_dim=6)
    with pytest.raises(DatasetError, match="spec"):
        write_dataset(tmp_path / "x.mmds", [e1, e2])


def test_writes_deterministic_bytes(tmp_path, rng):
    eps = [make_episode(rng, 5, seed=i) for i in range(3)]
    p1, p2 = tmp_path / "a.mmds", tmp_path / "b.mmds"
    write_dataset(p1, eps)
    write_dataset(p2, eps)
    assert p1.read_bytes() == p2.read_bytes()


# -- normalization stats ------------------------------------------------------------


def test_constant_feature_std_clamped(rng):
    ep = make_episode(rng, 10, obs_dim=3)
    ep.obs[:, 1] = 0.25
    mean, std = compute_norm_stats([ep])
    assert std[1] == STD_FLOOR
    assert mean[1] == pytest.approx(0.25)


def test_two_frame_stats():
    ep = Episode(task_id="cleanup-sink", seed=0, operator="expert", success=True,
                 obs=np.array([[0.0], [1.0]], dtype=np.float32),
                 actions=np.zeros((2, 6), dtype=np.float32))
    mean, std = compute_norm_stats([ep])
    assert mean[0] == 0.5 and std[0] == 0.5


def test_stats_match_streaming_oracle(rng):
    # two-pass numpy result vs an online (Welford) oracle
    eps = [make_episode(rng, int(rng.integers(5, 30)), obs_dim=4, seed=i) for i in range(6)]
    mean, std = compute_norm_stats(eps)
    n = 0
    m = np.zeros(4)
    m2 = np.zeros(4)
    for ep in eps:
        for row in ep.obs.astype(np.float64):
            n += 1
            d = row - m
            m += d / n
            m2 += d * (row - m)
    assert np.allclose(mean, m, atol=1e-9)
    assert np.allclose(std, np.sqrt(m2 / n), atol=1e-9)


def test_stats_exclude_failures(rng):
    good = make_episode(rng, 10, obs_dim=2, success=True)
    bad = make_episode(rng, 10, obs_dim=2, success=False)
    bad.obs[:] = 1000.0
    mean, _ = compute_norm_stats([good, bad])
    assert mean.max() < 10.0


def test_stats_empty_error():
    with pytest.raises(DatasetError):
        compute_norm_stats([])


# -- samplers -------------------------------------------------------------------------


def _reader(tmp_path, rng, lengths, obs_dim=4):
    eps = [make_episode(rng, n, obs_dim=obs_dim, seed=i) for i, n in enumerate(lengths)]
    path = tmp_path / "s.mmds"
    write_dataset(path, eps)
    return DatasetReader(path)


def test_window_t1_reaches_every_frame(tmp_path, rng):
    reader = _reader(tmp_path, rng, [4, 3])
    sampler = WindowSampler(reader, window=1, rng=np.random.default_rng(0))
    assert len(sampler._starts) == 7    # one start per frame


def test_window_exact_length_single_window(tmp_path, rng):
    reader = _reader(tmp_path, rng, [50])
    sampler = WindowSampler(reader, window=50, rng=np.random.default_rng(0))
    assert sampler._starts == [(0, 0)]
    obs, act, mask = sampler.sample(1)
    assert mask.sum() == 50             # unpadded


def test_window_left_padding_and_mask(tmp_path, rng):
    reader = _reader(tmp_path, rng, [3])
    sampler = WindowSampler(reader, window=5, rng=np.random.default_rng(0))
    obs, act, mask = sampler.sample(1)
    assert mask.ravel().tolist() == [0, 0, 1, 1, 1]
    ep = reader.read_episode(0)
    # padded rows repeat the first frame
    assert np.allclose(obs[0], ep.obs[0])
    assert np.allclose(obs[1], ep.obs[0])
    assert np.allclose(obs[2:], ep.obs.astype(np.float64))


def test_window_start_uniformity_chi_square(tmp_path, rng):
    reader = _reader(tmp_path, rng, [20, 15, 8])
    sampler = WindowSampler(reader, window=5, rng=np.random.default_rng(1))
    counts = sampler.start_index_counts(10_000)
    n_slots = len(sampler._starts)
    observed = np.array([counts.get(s, 0) for s in sampler._starts])
    _, p = stats.chisquare(observed, f_exp=np.full(n_slots, 10_000 / n_slots))
    assert p > 0.01


def test_sampler_determinism(tmp_path, rng):
    reader = _reader(tmp_path, rng, [20, 15])
    a = WindowSampler(reader, 5, np.random.default_rng(3)).sample(4)
    b = WindowSampler(reader, 5, np.random.default_rng(3)).sample(4)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_sampler_skips_failures_by_default(tmp_path, rng):
    good = make_episode(rng, 10, success=True, seed=0)
    bad = make_episode(rng, 10, success=False, seed=1)
    path = tmp_path / "f.mmds"
    write_dataset(path, [good, bad])
    reader = DatasetReader(path)
    assert len(WindowSampler(reader, 4, np.random.default_rng(0))._episodes) == 1
    both = WindowSampler(reader, 4, np.random.default_rng(0), include_failures=True)
    assert len(both._episodes) == 2


def test_pair_sampler_gap(tmp_path, rng):
    reader = _reader(tmp_path, rng, [12, 9])
    gap = 4
    sampler = PairSampler(reader, gap, np.random.default_rng(2))
    s, sg = sampler.sample(64)
    eps = [reader.read_episode(i).obs.astype(np.float64) for i in range(2)]
    for row_s, row_g in zip(s, sg):
        matched = False
        for ep in eps:
            for i in range(len(ep) - gap):
                if np.array_equal(row_s, ep[i]) and np.array_equal(row_g, ep[i + gap]):
                    matched = True
        assert matched


def test_pair_sampler_skips_short_episodes(tmp_path, rng):
    reader = _reader(tmp_path, rng, [12, 4])
    sampler = PairSampler(reader, gap=10, rng=np.random.default_rng(0))
    assert len(sampler._episodes) == 1
    with pytest.raises(DatasetError, match="gap"):
        PairSampler(reader, gap=50, rng=np.random.default_rng(0))
