import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from barynet.data import gen_clusters, gen_latent_curve, gen_mixture, latent_curve, synthetic_images
from barynet.fileio import (FormatError, RunManifest, load_csv, load_image_ppm, load_model,
                            ppm_shape, read_ppm, save_model, write_csv, write_image_ppm,
                            write_sample_csv)
from barynet.nets import LabelNet, NetSpec, TransportNet, calibrate_batch_norm
from barynet.objectives import LabeledSample
from barynet.oracle import pearson

BIG = 100_000


# ---------------------------------------------------------------------------
# generators


def test_mixture_at_minus_one_is_single_gaussian():
    s = gen_mixture(0, BIG, z=-1.0)
    np.testing.assert_allclose(s.xs.mean(axis=0), 0.0, atol=0.01)
    np.testing.assert_allclose(np.cov(s.xs.T), 0.1 * np.eye(2), atol=0.003)


def test_mixture_moments_at_one():
    s = gen_mixture(1, BIG, z=1.0)
    np.testing.assert_allclose(s.xs.mean(axis=0), 0.0, atol=0.02)
    assert np.trace(np.cov(s.xs.T)) == pytest.approx(2.2, rel=0.03)


def test_mixture_labels_uniform():
    z = gen_mixture(2, BIG).zs[:, 0]
    assert z.min() >= -1 and z.max() <= 1
    assert z.mean() == pytest.approx(0.0, abs=0.01)
    assert z.var() == pytest.approx(1 / 3, rel=0.03)


def test_mixture_is_deterministic():
    a, b = gen_mixture(7, 50), gen_mixture(7, 50)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.zs, b.zs)


def test_clusters_moments():
    X, labels = gen_clusters(0, 3, std=0.3, N=BIG)
    centers = np.array([X[labels == k].mean(axis=0) for k in range(3)])
    ang = 2 * np.pi * np.arange(3) / 3
    np.testing.assert_allclose(centers, 5 * np.stack([np.cos(ang), np.sin(ang)], 1), atol=0.01)
    assert X[labels == 0].var(axis=0).mean() == pytest.approx(0.09, rel=0.03)
    assert np.bincount(labels).max() - np.bincount(labels).min() <= 1


def test_clusters_edge_cases():
    X, labels = gen_clusters(0, 1, N=20)
    assert set(labels) == {0}
    X, labels = gen_clusters(0, 4, N=4)
    assert sorted(labels) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        gen_clusters(0, 2, centers=[[0.0, 0.0]])


def test_latent_curve_noise_free():
    X, z = gen_latent_curve(0, 100, noise=0.0)
    np.testing.assert_array_equal(X[:, :2], latent_curve(z))
    np.testing.assert_array_equal(X[:, 2:], 0.0)


def test_latent_curve_moments():
    X, z = gen_latent_curve(3, BIG)
    assert pearson(z, X[:, 0]) > 0.99
    # E[sin(pi z)^2] = 1/2 for z uniform on [-1, 1]; noise adds 0.05^2
    assert np.mean(X[:, 1] ** 2) == pytest.approx(0.5 + 0.0025, rel=0.03)
    assert X[:, 4].var() == pytest.approx(0.0025, rel=0.03)
    with pytest.raises(ValueError):
        gen_latent_curve(0, 5)


def test_synthetic_images():
    imgs = synthetic_images(0, size=16)
    assert len(imgs) == 3
    assert all(im.shape == (16, 16, 3) and im.min() >= 0 and im.max() <= 1 for im in imgs)
    means = np.array([im.reshape(-1, 3).mean(axis=0) for im in imgs])
    assert means[0, 0] > means[0, 2] and means[1, 2] > means[1, 0]


# ---------------------------------------------------------------------------
# PPM


def ppm_bytes(w, h, pixels, header=None):
    head = header if header is not None else f"P6\n{w} {h}\n255\n".encode()
    return head + bytes(pixels)


def test_single_white_pixel(tmp_path):
    p = tmp_path / "w.ppm"
    p.write_bytes(ppm_bytes(1, 1, [255, 255, 255]))
    np.testing.assert_array_equal(load_image_ppm(p).points, [[1.0, 1.0, 1.0]])


def test_two_by_two_hand_decode(tmp_path):
    p = tmp_path / "q.ppm"
    p.write_bytes(ppm_bytes(2, 2, [255, 0, 0, 0, 51, 0, 0, 0, 102, 204, 204, 204],
                            header=b"P6 # comment\n2 2\n255\n"))
    dist = load_image_ppm(p)
    np.testing.assert_allclose(dist.points, [[1, 0, 0], [0, 0.2, 0], [0, 0, 0.4], [0.8, 0.8, 0.8]])
    np.testing.assert_allclose(dist.masses, 0.25)
    assert ppm_shape(p) == (2, 2)


def test_ppm_round_trip_bit_identical(tmp_path, rng):
    src = tmp_path / "a.ppm"
    raw = ppm_bytes(3, 2, rng.integers(0, 256, 18).tolist())
    src.write_bytes(raw)
    h, w, arr = read_ppm(src)
    write_image_ppm(tmp_path / "b.ppm", arr / 255.0)
    assert (tmp_path / "b.ppm").read_bytes() == raw


def test_write_clamps(tmp_path):
    write_image_ppm(tmp_path / "c.ppm", np.array([[-0.5, 0.5, 1.7]]), shape=(1, 1))
    np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm")[2].ravel(), [0, 128, 255])
    with pytest.raises(ValueError):
        write_image_ppm(tmp_path / "d.ppm", np.zeros((4, 3)))


@pytest.mark.parametrize("raw, where", [
    (b"P3\n1 1\n255\n\x00\x00\x00", "magic"),
    (b"P6\n1 1\n65535\n\x00\x00\x00", "maxval"),
    (b"P6\n1 x\n255\n\x00\x00\x00", "height"),
    (b"P6\n2 1\n255\n\x00\x00\x00", "pixel data"),
    (b"P6\n1 1\n", "end of header"),
])
def test_ppm_format_errors(tmp_path, raw, where):
    p = tmp_path / "bad.ppm"
    p.write_bytes(raw)
    with pytest.raises(FormatError, match=where) as info:
        read_ppm(p)
    assert "byte" in str(info.value)


# ---------------------------------------------------------------------------
# CSV


def test_csv_continuous_round_trip(tmp_path, rng):
    s = LabeledSample(rng.normal(size=(10, 2)), rng.normal(size=(10, 1)))
    write_sample_csv(tmp_path / "s.csv", s)
    back = load_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.xs, s.xs)
    np.testing.assert_array_equal(back.zs, s.zs)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x1,x2,z1"


def test_csv_discrete_round_trip(tmp_path, rng):
    s = LabeledSample(rng.normal(size=(6, 3)), np.array([0, 2, 1, 0, 2, 1]))
    write_sample_csv(tmp_path / "d.csv", s)
    back = load_csv(tmp_path / "d.csv")
    assert back.discrete
    np.testing.assert_array_equal(back.zs, s.zs)


def test_csv_unlabeled_and_explicit_columns(tmp_path):
    (tmp_path / "u.csv").write_text("a,x1,b\n1,2,3\n4,5,6\n")
    assert load_csv(tmp_path / "u.csv").zs is None
    s = load_csv(tmp_path / "u.csv", x_cols=["a", "b"], z_cols=["x1"])
    np.testing.assert_array_equal(s.xs, [[1, 3], [4, 6]])
    np.testing.assert_array_equal(s.zs, [[2], [5]])


def test_csv_missing_values(tmp_path):
    (tmp_path / "m.csv").write_text("x1,z1\n1,2\nNA,3\n4,\n5,6\n")
    with pytest.raises(FormatError, match="drop_incomplete"):
        load_csv(tmp_path / "m.csv")
    s = load_csv(tmp_path / "m.csv", drop_incomplete=True)
    np.testing.assert_array_equal(s.xs[:, 0], [1, 5])


@pytest.mark.parametrize("text, where", [
    ("", "empty"),
    ("x1,x1\n1,2\n", "duplicate"),
    ("y1,z1\n1,2\n", "missing columns"),
    ("x1,z1\n1,2,3\n", "fields"),
    ("x1,z1\n1,abc\n", "not a number"),
    ("x1,label\n1,0.5\n", "integers"),
])
def test_csv_format_errors(tmp_path, text, where):
    (tmp_path / "e.csv").write_text(text)
    with pytest.raises(FormatError, match=where):
        load_csv(tmp_path / "e.csv")


def test_write_csv_rejects_ragged(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "r.csv", {"a": [1.0, 2.0], "b": [1.0]})


@settings(max_examples=30)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_floats_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "f.csv"
    write_csv(path, {"x1": np.array(values)})
    np.testing.assert_array_equal(load_csv(path).xs[:, 0], values)


# ---------------------------------------------------------------------------
# manifest and models


def test_manifest_round_trip(tmp_path):
    m = RunManifest(7, "fit-supervised", params={"arch_T": "3-7-7-2", "lr": 4e-3},
                    inputs={"data": "d.csv"}, outputs={"model": "model.json"},
                    metrics={"final_loss": np.float64(0.25)})
    m.stamp(0.0)
    m.write(tmp_path)
    back = RunManifest.read(tmp_path)
    assert back.to_json() == m.to_json()
    assert json.loads(m.to_json())["params"]["arch_T"] == "3-7-7-2"


def test_model_round_trip(tmp_path, rng):
    T = TransportNet.create(NetSpec((3, 4, 2)), 2, 1, rng=rng, zero_last=False)
    Tk = TransportNet.create(NetSpec((2, 4, 2)), 2, 0, n_labels=3, rng=rng, zero_last=False)
    Z = LabelNet.create(NetSpec((2, 3, 1), batch_norm_hidden=True), rng=rng)
    x = rng.normal(size=(5, 2))
    Z_eval = calibrate_batch_norm(Z, x)
    save_model(tmp_path / "m.json", T=T, Tk=Tk, Z=Z_eval, skipped=None)
    back = load_model(tmp_path / "m.json")
    assert set(back) == {"T", "Tk", "Z"}
    z = rng.normal(size=(5, 1))
    np.testing.assert_array_equal(back["T"](x, z), T(x, z))
    labels = np.array([0, 1, 2, 0, 1])
    np.testing.assert_array_equal(back["Tk"](x, labels), Tk(x, labels))
    np.testing.assert_array_equal(back["Z"].encode(x).value, Z_eval.encode(x).value)


def test_model_unknown_kind(tmp_path):
    (tmp_path / "m.json").write_text('{"a": {"kind": "other", "spec": {"widths": [1, 1]}, "params": [0, 0]}}')
    with pytest.raises(FormatError):
        load_model(tmp_path / "m.json")
