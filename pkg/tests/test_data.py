import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrd.data import (
    DomainDataset,
    SynthConfig,
    class_centers,
    dataset_to_csv,
    dirichlet_partition,
    domain_rng,
    gen_domains,
    leave_one_out_split,
    load_csv_dataset,
    rotate,
    sample_base_blobs,
    write_csv_dataset,
)

CFG = SynthConfig(
    num_domains=4,
    num_classes=5,
    samples_per_domain=1500,
    domain_rotation_degrees=(0, 30, 60, 90),
    class_center_radius=3.0,
    noise_sigma=1.0,
    dirichlet_alpha=0.5,
)


def test_zero_rotation_domain_is_the_base_blobs():
    domains = gen_domains(CFG, 11)
    x, y = sample_base_blobs(CFG, domain_rng(11, 0))
    assert np.array_equal(domains[0].features, x)
    assert np.array_equal(domains[0].labels, y)


def test_generation_is_deterministic():
    a, b = gen_domains(CFG, 3), gen_domains(CFG, 3)
    for da, db in zip(a, b):
        assert da.features.tobytes() == db.features.tobytes()
        assert np.array_equal(da.labels, db.labels)


def test_rotated_domain_class_means_match_base_centers():
    centers = class_centers(CFG.num_classes, CFG.class_center_radius)
    for dom, angle in zip(gen_domains(CFG, 5), CFG.domain_rotation_degrees):
        back = rotate(dom.features, -angle)
        for c in range(CFG.num_classes):
            pts = back[dom.labels == c]
            tol = 3 * CFG.noise_sigma / math.sqrt(len(pts))
            assert np.all(np.abs(pts.mean(axis=0) - centers[c]) < tol)


def test_labels_near_uniform_and_shared():
    domains = gen_domains(CFG, 0)
    share = CFG.samples_per_domain / CFG.num_classes
    for dom in domains:
        assert len(dom) == CFG.samples_per_domain
        assert np.all(np.abs(dom.label_counts() - share) <= 1)
    train, test = leave_one_out_split(domains, 2)
    assert set(np.concatenate([d.labels for d in train])) == set(test.labels)


def test_higher_feature_dim_rotates_first_plane_only():
    cfg = SynthConfig(2, 3, 30, (0, 45), 2.0, 0.5, 1.0, feature_dim=4)
    d0, d1 = gen_domains(cfg, 1)
    assert d1.features.shape == (30, 4)
    x, _ = sample_base_blobs(cfg, domain_rng(1, 1))
    assert np.allclose(d1.features[:, 2:], x[:, 2:])


@pytest.mark.parametrize(
    "change",
    [
        dict(num_domains=1, domain_rotation_degrees=(0,)),
        dict(domain_rotation_degrees=(0, 30, 30, 90)),
        dict(domain_rotation_degrees=(0, 30)),
        dict(noise_sigma=0.0),
        dict(samples_per_domain=3),
        dict(dirichlet_alpha=-1.0),
    ],
)
def test_invalid_synth_config(change):
    kwargs = {**CFG.__dict__, **change}
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_partition_single_client():
    parts = dirichlet_partition([0, 1, 1, 2], 1, 0.5, 0)
    assert len(parts) == 1 and parts[0].tolist() == [0, 1, 2, 3]


def test_partition_large_alpha_is_near_uniform():
    labels = np.arange(3000) % 3
    parts = dirichlet_partition(labels, 3, 1e6, 0)
    for p in parts:
        hist = np.bincount(labels[p], minlength=3) / len(p)
        assert np.all(np.abs(hist - 1 / 3) < 0.05)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 5),
    st.floats(0.3, 10),
    st.integers(0, 2**32 - 1),
    st.integers(2, 6),
)
def test_partition_is_a_partition(n_clients, alpha, seed, num_classes):
    labels = np.arange(200) % num_classes
    parts = dirichlet_partition(labels, n_clients, alpha, seed)
    assert len(parts) == n_clients
    assert all(len(p) > 0 for p in parts)
    joined = np.concatenate(parts)
    assert len(joined) == len(set(joined.tolist())) == 200
    assert set(joined.tolist()) == set(range(200))


def test_partition_is_deterministic():
    labels = np.arange(100) % 4
    a = dirichlet_partition(labels, 4, 0.3, 9)
    b = dirichlet_partition(labels, 4, 0.3, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_partition_errors():
    with pytest.raises(ValueError):
        dirichlet_partition([0, 1], 3, 1.0, 0)
    # so concentrated that one of many clients always ends up empty
    with pytest.raises(RuntimeError):
        dirichlet_partition(np.zeros(40, dtype=int), 30, 1e-3, 0)


def test_leave_one_out():
    domains = gen_domains(CFG, 0)
    train, test = leave_one_out_split(domains, 2)
    assert [d.domain_id for d in train] == [0, 1, 3]
    assert test is domains[2]
    with pytest.raises(ValueError):
        leave_one_out_split(domains, 9)
    with pytest.raises(ValueError):
        leave_one_out_split(domains[:1], 0)


def test_csv_parse(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("domain,label,f0,f1\n3,1,0.5,-2\n3,0,1e-3,4.25\n")
    ds = load_csv_dataset(p)
    assert ds.domain_id == 3
    assert ds.labels.tolist() == [1, 0]
    assert ds.features.tolist() == [[0.5, -2.0], [0.001, 4.25]]


@pytest.mark.parametrize(
    "body, message",
    [
        ("domain,label,f0,f1\n0,1,0.5\n", ":2:"),
        ("domain,label,f0,f1\n0,1,0.5,2\n0,1,x,2\n", ":3:"),
        ("domain,label,f0\n0,1,0.5\n1,0,0.2\n", "mixed domain"),
        ("", "empty"),
        ("domain,label,f0\n", "no data"),
        ("dom,label,f0\n0,1,2\n", "header"),
        ("domain,label,f0\n0,-1,2\n", "negative"),
    ],
)
def test_csv_errors(tmp_path, body, message):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ValueError, match=message):
        load_csv_dataset(p)


def test_csv_roundtrip_is_exact(tmp_path):
    for dom in gen_domains(CFG, 8):
        path = tmp_path / f"domain_{dom.domain_id}.csv"
        write_csv_dataset(dom, path)
        back = load_csv_dataset(path, CFG.num_classes)
        assert back.domain_id == dom.domain_id
        assert back.features.tobytes() == dom.features.tobytes()
        assert np.array_equal(back.labels, dom.labels)


def test_csv_format_is_lf_and_17_digits():
    ds = DomainDataset(0, np.array([[1 / 3, 2.0]]), np.array([1]), 2)
    text = dataset_to_csv(ds)
    assert "\r" not in text
    assert text.splitlines()[1] == "0,1,0.33333333333333331,2"
