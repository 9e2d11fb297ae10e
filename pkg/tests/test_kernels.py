import numpy as np
import pytest

from tangentdepth import _kernels_py, kernels

try:
    from tangentdepth import _ckernels
except ImportError:  # pure install
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_gather_scatter_parity(rng, dtype):
    x = rng.normal(size=(3, 50)).astype(dtype)
    idx = rng.integers(0, 50, (40, 4))
    w = rng.dirichlet(np.ones(4), 40)
    a = _ckernels.gather4(x, idx, w)
    b = _kernels_py.gather4(x, idx, w)
    assert a.dtype == dtype
    np.testing.assert_allclose(a, b, rtol=1e-5 if dtype == np.float32 else 1e-12)
    g = rng.normal(size=(3, 40)).astype(dtype)
    np.testing.assert_allclose(
        _ckernels.scatter4(g, idx, w, 50), _kernels_py.scatter4(g, idx, w, 50), rtol=1e-5, atol=1e-6
    )


@needs_ext
@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_col2im_parity(rng, stride):
    x = rng.normal(size=(2, 3, 9, 8))
    k = 3
    ho, wo = (9 - k) // stride + 1, (8 - k) // stride + 1
    a = _ckernels.im2col(x, k, stride, ho, wo)
    b = _kernels_py.im2col(x, k, stride, ho, wo)
    np.testing.assert_allclose(a, b, atol=0)
    g = rng.normal(size=a.shape)
    np.testing.assert_allclose(
        _ckernels.col2im(g, 3, 9, 8, k, stride), _kernels_py.col2im(g, 3, 9, 8, k, stride), atol=1e-12
    )


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.normal(size=(1, 2, 6, 7))
    cols = kernels.im2col(x, 3, 2, 2, 3)
    g = rng.normal(size=cols.shape)
    lhs = (cols * g).sum()
    rhs = (x * kernels.col2im(g, 2, 6, 7, 3, 2)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_scatter_is_adjoint_of_gather(rng):
    x = rng.normal(size=(2, 30))
    idx = rng.integers(0, 30, (25, 4))
    w = rng.uniform(0, 1, (25, 4))
    g = rng.normal(size=(2, 25))
    lhs = (kernels.gather4(x, idx, w) * g).sum()
    rhs = (x * kernels.scatter4(g, idx, w, 30)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pure_fallback_via_env():
    import os
    import subprocess
    import sys

    env = dict(os.environ, TANGENTDEPTH_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from tangentdepth import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
