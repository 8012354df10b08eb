"""Smoke test for the cocoa_py extension.

Build and install first:  pip install --no-build-isolation crates/python
Then run:                 python3 python/smoke_test.py
"""

import numpy as np

import cocoa_py as cp


def ridge_optimum(X, y, lam):
    # X is d x n, one column per example
    d, n = X.shape
    return np.linalg.solve(X @ X.T / n + lam * np.eye(d), X @ y / n)


def main():
    rng = np.random.default_rng(0)
    n, d, K, lam = 80, 6, 4, 1e-2
    X = rng.standard_normal((d, n))
    y = X.T @ rng.standard_normal(d) + 0.1 * rng.standard_normal(n)

    data = cp.Dataset([list(col) for col in X.T], list(y))
    assert (data.n, data.d) == (n, d)
    assert cp.Dataset.parse_libsvm(data.to_libsvm()).n == n

    problem = cp.Problem(data, "quadratic", lam)
    part = cp.Partition(n, K, "random", seed=1)
    assert sorted(i for b in part.blocks for i in b) == list(range(n))

    alpha = rng.standard_normal(n)
    v = X @ alpha / (lam * n)
    assert np.allclose(problem.shared_vector(list(alpha)), v)
    dual = np.mean(y * alpha - 0.5 * alpha**2) - 0.5 * lam * v @ v
    assert abs(problem.dual_value(list(alpha)) - dual) < 1e-10

    for nu in ("add", "avg", 0.5):
        res = cp.train(problem, part, nu=nu, rounds=300, gap_tol=1e-10)
        print(f"nu={nu}: {res.termination} rounds={res.rounds_run} gap={res.final_gap:.3e}")
        assert not res.diverged
    res = cp.train(problem, part, rounds=300)
    rows = res.metrics
    assert rows[0]["round"] == 0 and len(rows) == 301
    gap = res.final_gap
    assert gap < rows[0]["gap"] * 1e-4
    # lam/2 |w - w*|^2 <= P(w) - P(w*) <= gap
    err = np.linalg.norm(np.array(res.w) - ridge_optimum(X, y, lam))
    print(f"|w - w*| = {err:.3e}, certificate {np.sqrt(2 * gap / lam):.3e}")
    assert err <= np.sqrt(2 * gap / lam)

    tcp = cp.train(problem, part, rounds=5, record_time=False, transport="tcp")
    local = cp.train(problem, part, rounds=5, record_time=False)
    assert tcp.alpha == local.alpha
    print("tcp loopback matches in-process run")

    smin = cp.sigma_prime_min(data, part, 1.0)
    assert smin <= cp.safe_sigma_prime(1.0, K) + 1e-8
    theory = cp.theory_params(data, part)
    bounds = cp.rate_bounds(lam, n, theory["sigma_max"], K, gamma=1.0, sigma=theory["sigma"], machines=K)
    assert bounds["adding_rounds_gap"] <= bounds["averaging_rounds_gap"]
    print(f"sigma'_min={smin:.4f} rates={bounds}")

    passed, summary = cp.property_suite(seed=0, trials=20)
    print(summary.strip())
    assert passed

    try:
        cp.train(problem, part, nu=1.5)
    except ValueError as e:
        print(f"rejected: {e}")
    else:
        raise AssertionError("nu=1.5 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
