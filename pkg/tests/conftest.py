import numpy as np
import pytest

from acnet.tensor import Tensor


def numeric_grad(f, arrays, eps=1e-4, coords=None):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array (float64).

    ``coords`` optionally lists, per array, the flat indices to difference;
    other entries of the returned gradient stay zero.
    """
    grads = []
    for n, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = range(a.size) if coords is None else coords[n]
        for j in flat:
            i = np.unravel_index(j, a.shape)
            old = a[i]
            a[i] = old + eps
            hi = f(*arrays)
            a[i] = old - eps
            lo = f(*arrays)
            a[i] = old
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


class NonSmooth(Exception):
    """The finite-difference stencil straddles a kink, so the oracle is invalid here."""


def gradcheck(build, arrays, eps=1e-4, tol=1e-3, smooth_check=False, n_coords=None, seed=0):
    """Compare autodiff gradients of ``build(*tensors) -> scalar Tensor`` with central differences.

    With ``smooth_check`` the oracle is first validated on its own: central
    differences at ``eps`` and ``eps / 2`` must agree, otherwise
    :class:`NonSmooth` is raised and the instance should be redrawn.
    ``n_coords`` limits the comparison to that many random entries per array.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    f = lambda *xs: float(build(*[Tensor(x, dtype=np.float64) for x in xs]).data)  # noqa: E731
    coords = None
    if n_coords is not None:
        pick = np.random.default_rng(seed)
        coords = [np.sort(pick.choice(a.size, size=min(n_coords, a.size), replace=False)) for a in arrays]
    numeric = numeric_grad(f, arrays, eps, coords)
    if smooth_check:
        half = numeric_grad(f, arrays, eps / 2, coords)
        if max(rel_error(a, b) for a, b in zip(numeric, half)) > tol / 10:
            raise NonSmooth()
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = build(*tensors)
    out.backward()
    analytic = [t.grad for t in tensors]
    if coords is not None:
        analytic = [None if g is None else g.ravel()[c] for g, c in zip(analytic, coords)]
        numeric = [n.ravel()[c] for n, c in zip(numeric, coords)]
    for g, n in zip(analytic, numeric):
        assert g is not None
        err = rel_error(g, n)
        assert err < tol, f"relative gradient error {err:.2e}"
    return max(rel_error(g, n) for g, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradcheck_instances(factory, n=20, seed=0, max_discards=None):
    """Run ``gradcheck`` on ``n`` valid random instances of ``factory(rng)``.

    Instances where the oracle itself is non-smooth are redrawn; the number of
    such discards is returned and capped at ``n``.
    """
    max_discards = n if max_discards is None else max_discards
    done, discards, i = 0, 0, 0
    worst = 0.0
    while done < n:
        build, arrays, *extra = factory(np.random.default_rng([seed, i]))
        options = extra[0] if extra else {}
        i += 1
        try:
            worst = max(worst, gradcheck(build, arrays, smooth_check=True, seed=i, **options))
        except NonSmooth:
            discards += 1
            assert discards <= max_discards, "too many non-smooth instances"
            continue
        done += 1
    return worst, discards


# ------------------------------------------------------- acceptance summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
