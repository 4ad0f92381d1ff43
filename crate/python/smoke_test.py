"""Smoke test for the Python bindings: build with maturin, install the wheel, run."""

import math
import pathlib

import sirvax_py as sv

ROOT = pathlib.Path(__file__).resolve().parent.parent


def scalar_final_size(r0, i0):
    lo, hi = 0.0, 1.0 / r0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid - math.exp(r0 * (mid - 1.0 - i0)) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def main():
    m = sv.Model.homogeneous(1.0, 51, 2.0, 1.0, 1.0, 1e-4)
    t = sv.classify_threshold(m)
    assert abs(t["lambda1"] + 1.0) < 1e-8 and t["classification"] == "Spreads", t

    s_star = scalar_final_size(2.0, 1e-4)
    s_inf = sv.solve_final_size(m)
    assert max(abs(s - s_star) for s in s_inf) < 1e-6
    lam, phi = sv.principal_eigenvalue(m, s_inf)
    assert abs(lam - (1.0 - 2.0 * s_star)) < 1e-6 and min(phi) > 0.0

    sim = sv.simulate(m, dt=0.01, t_max=200.0)
    assert sim["converged"] and abs(sim["s_inf"][0] - s_star) < 1e-3 * s_star

    v = [0.3 * s for s in m.s0]
    n_star, runs = sv.maximizing_sequence(m, v, [0.2, 0.02], dt=0.01, t_max=200.0)
    assert abs(n_star - sv.objective_ivp(m, v)) < 1e-12
    assert runs[1]["gap"] < runs[0]["gap"] < 0.01 * n_star

    paper = sv.Model.from_toml(str(ROOT / "scenarios" / "paper.toml"))
    assert not paper.is_separable
    b = sv.bathtub(paper, 0.2, surrogate=True)
    assert abs(b["budget_used"] - 0.2) < 1e-9 and b["full_nodes"][0] == 0

    sep = sv.Model.from_toml(str(ROOT / "scenarios" / "separable.toml"))
    b = sv.bathtub(sep, 0.2)
    assert sv.objective_ivp(sep, b["allocation"]) >= sv.objective_ivp(sep, [0.2 / sep.integrate(sep.s0) * s for s in sep.s0])

    try:
        sv.Model.homogeneous(1.0, 5, 2.0, -1.0, 1.0, 1e-4)
    except ValueError:
        pass
    else:
        raise AssertionError("negative mu accepted")
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
