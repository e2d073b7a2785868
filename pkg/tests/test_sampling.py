import numpy as np
import pytest

from bninvert.core.errors import InvalidArgumentError
from bninvert.core.sampling import derive_seed, generator, permutation, randn, standard_normal


def test_derive_seed_is_stable_and_keyed() -> None:
    assert derive_seed(0, "noise", 3) == derive_seed(0, "noise", 3)
    assert derive_seed(0, "noise", 3) != derive_seed(0, "noise", 4)
    assert 0 <= derive_seed("x") < 2**64


def test_randn_is_deterministic_per_seed() -> None:
    a = randn((4, 3), seed=11)
    b = randn((4, 3), seed=11)
    c = randn((4, 3), seed=12)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_box_muller_stream_order() -> None:
    rng = generator(5)
    u1 = 1.0 - rng.random(2)
    u2 = rng.random(2)
    radius = np.sqrt(-2.0 * np.log(u1))
    expected = [
        radius[0] * np.cos(2 * np.pi * u2[0]),
        radius[0] * np.sin(2 * np.pi * u2[0]),
        radius[1] * np.cos(2 * np.pi * u2[1]),
    ]
    np.testing.assert_allclose(standard_normal(3, seed=5), expected)


def test_randn_moments() -> None:
    x = randn((20000,), mean=2.0, stddev=0.5, seed=1, dtype=np.float64).data
    assert abs(x.mean() - 2.0) < 0.02
    assert abs(x.std() - 0.5) < 0.02


def test_randn_requires_grad_allocates_buffer() -> None:
    t = randn((2, 2), seed=0, requires_grad=True)
    assert t.requires_grad
    np.testing.assert_array_equal(t.grad, np.zeros((2, 2), dtype=np.float32))


@pytest.mark.parametrize("shape,stddev", [((), 1.0), ((2, 0), 1.0), ((2,), 0.0), ((2,), -1.0)])
def test_randn_rejects_bad_arguments(shape, stddev: float) -> None:
    with pytest.raises(InvalidArgumentError):
        randn(shape, stddev=stddev)


def test_permutation_is_seeded() -> None:
    np.testing.assert_array_equal(permutation(10, 3), permutation(10, 3))
    assert sorted(permutation(10, 3).tolist()) == list(range(10))
