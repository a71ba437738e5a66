import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srmkit.components import softmax
from srmkit.diffuse import VertexObservations, robust_min_irls
from srmkit.geometry import normalize, reflect
from srmkit.panorama import Panorama, bilinear_taps, dir_to_uv, lookup_bilinear, uv_to_dir

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False)).filter(lambda v: np.linalg.norm(v) > 1e-3)
sizes = st.sampled_from([(8, 4), (20, 10), (64, 32), (500, 250)])


@given(vec3, vec3)
def test_reflect_involution_and_mirror_law(d, n):
    d, n = normalize(d), normalize(n)
    r = reflect(d, n)
    assert np.allclose(reflect(r, n), d, atol=1e-12)
    assert np.isclose(np.linalg.norm(r), 1.0, atol=1e-12)
    assert np.isclose(r @ n, -(d @ n), atol=1e-12)


@given(vec3, sizes)
def test_uv_round_trip(d, size):
    d = normalize(d)
    if abs(d[2]) > 0.999999:
        return
    w, h = size
    u, v = dir_to_uv(d, w, h)
    assert 0 <= u < w and 0 <= v <= h
    assert np.allclose(uv_to_dir(u, v, w, h), d, atol=1e-6)


@given(arrays(np.float64, (5, 4), elements=finite))
def test_softmax_simplex(logits):
    w = softmax(logits)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(1), 1.0, atol=1e-15)
    assert np.allclose(softmax(logits + 7.5), w, atol=1e-12)


@given(vec3, sizes)
def test_bilinear_taps_are_convex(d, size):
    idx, w = bilinear_taps(normalize(d)[None], *size)
    assert np.all(w >= 0) and np.isclose(w.sum(), 1.0)
    assert np.all((idx >= 0) & (idx < size[0] * size[1]))


@given(vec3, st.floats(0.0, 5.0))
def test_lookup_of_constant(d, c):
    assert np.allclose(lookup_bilinear(Panorama.constant(c, 20, 10), normalize(d)), c)


samples = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=15)


def _obs(values):
    x = np.repeat(np.asarray(values, float)[:, None], 3, 1)
    return VertexObservations(1, np.zeros(len(values), np.int64), x, np.ones(len(values)),
                              np.zeros(len(values), np.int64))


@settings(max_examples=200)
@given(samples, st.randoms(use_true_random=False))
def test_irls_permutation_invariant_and_bounded(values, rnd):
    a, _ = robust_min_irls(_obs(values))
    shuffled = list(values)
    rnd.shuffle(shuffled)
    b, _ = robust_min_irls(_obs(shuffled))
    assert np.allclose(a, b, atol=1e-12)
    assert min(values) - 1e-12 <= a[0, 0] <= np.median(values) + 1e-12


@given(samples, st.floats(0.1, 10.0))
def test_irls_scale_equivariant(values, k):
    a, _ = robust_min_irls(_obs(values), epsilon=1e-3)
    b, _ = robust_min_irls(_obs([k * v for v in values]), epsilon=k * 1e-3)
    assert np.allclose(k * a, b, rtol=1e-9, atol=1e-12)
