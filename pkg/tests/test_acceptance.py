"""Acceptance suite: one test per criterion, each timed against its limit.

Every test records PASS or FAIL with its measured numbers; the summary is
printed at the end of the pytest run under "acceptance criteria".
"""

import itertools
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import (
    ACCEPTANCE,
    REF_LAMBDA,
    cached_bump_result,
    random_field,
    reference_patch_grid,
    reference_patch_profile,
)
from oracles import apply_green_oracle, energy_oracle
from vortexpair.cli import main
from vortexpair.evolution import evolve, initial_state, stable_dt
from vortexpair.field import GridSpec, ScalarField, dump_field, impulse, lp_norm, norms
from vortexpair.greens import (
    LEMMA9_CONSTANTS,
    apply_green,
    energy,
    kernel,
    kernel_log_ratio,
    stream_function,
    sup_bound,
)
from vortexpair.maximizer import MaximizerConfig, maximize
from vortexpair.rearrange import (
    RearrangementProfile,
    decreasing_rearrangement,
    is_rearrangement,
    rearrange_along,
    steiner_symmetrize,
)
from vortexpair.stability import PerturbationSpec, dist_to_orbit, perturb, run_stability

SEED = 20240611


@contextmanager
def criterion(n, title, limit_s):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as err:
        msg = str(err).splitlines()[0] if str(err) else ""
        ACCEPTANCE[n] = (False, title, f"{type(err).__name__}: {msg}", time.perf_counter() - t0)
        raise
    secs = time.perf_counter() - t0 + info.pop("extra_s", 0.0)
    detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
    ok = secs < limit_s
    ACCEPTANCE[n] = (ok, title, detail if ok else f"{detail}; over the {limit_s} s limit", secs)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({secs:.1f} s) {detail}")
    assert ok, f"criterion {n} took {secs:.1f} s, limit {limit_s} s"


def test_criterion_01_kernel_identities():
    rng = np.random.default_rng(SEED)
    with criterion(1, "kernel identities on 10^4 pairs", 1.0) as info:
        pts = rng.uniform([-4, 1e-3, -4, 1e-3], [4, 4, 4, 4], size=(10_000, 4))
        worst = 0.0
        for a1, a2, b1, b2 in pts:
            x, y = (a1, a2), (b1, b2)
            k = kernel(x, y)
            worst = max(worst, abs(k - kernel_log_ratio(x, y)))
            assert kernel(y, x) == k
            assert kernel((a1, 0.0), y) == 0.0
        info["max_abs_diff"] = worst
        assert worst <= 1e-12


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(SEED)
    with criterion(2, "green operator and energy vs double sums, 16x16", 5.0) as info:
        g = GridSpec.centered(0.1, 16, 16)
        worst_psi = worst_e = 0.0
        for _ in range(3):
            f = random_field(rng, g)
            want = apply_green_oracle(f)
            for method in ("direct", "fft"):
                got = apply_green(f, method=method).values
                worst_psi = max(worst_psi, float(np.max(np.abs(got - want)) / np.max(np.abs(want))))
            worst_e = max(worst_e, abs(energy(f) - energy_oracle(f)) / energy_oracle(f))
        info["psi_rel"], info["energy_rel"] = worst_psi, worst_e
        assert worst_psi <= 1e-10 and worst_e <= 1e-10


def test_criterion_03_sup_bound_dominance(tmp_path):
    rng = np.random.default_rng(SEED)
    with criterion(3, "sup bound strictly dominates max |G zeta| on 200 fields", 10.0) as info:
        assert LEMMA9_CONSTANTS["c_log"] == math.log(216)
        assert LEMMA9_CONSTANTS["c_imp"] == 2.0
        assert LEMMA9_CONSTANTS["c_l2"] == math.sqrt(2 * math.pi)
        worst = 0.0
        for i in range(200):
            h = float(rng.choice([0.02, 0.05, 0.1, 0.2]))
            g = GridSpec.centered(h, int(rng.integers(8, 33)), int(rng.integers(8, 33)))
            f = random_field(rng, g, density=float(rng.uniform(0.05, 1.0))) * float(10 ** rng.uniform(-2, 2))
            if not f.values.any():
                continue
            top = float(np.max(np.abs(apply_green(f).values)))
            bound = sup_bound(norms(f))
            worst = max(worst, top / bound)
            assert top < bound
        info["max_ratio"] = worst
        # the constants are written to run metadata
        cfg = {"grid": {"x1_min": -0.8, "x1_max": 0.8, "x2_max": 1.6, "nx": 16, "ny": 16},
               "profile": {"kind": "patch", "value": 1.0, "area": 0.1}, "solver": {"lam": 1.0}}
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
        assert meta["lemma9_constants"]["c_log"] == math.log(216)
        assert meta["lemma9_constants"]["c_l2"] == math.sqrt(2 * math.pi)


def test_criterion_04_stream_negative_above_height():
    rng = np.random.default_rng(SEED)
    with criterion(4, "psi < 0 above Z = sup_bound/lambda on 50 fields", 10.0) as info:
        checked = 0
        for _ in range(50):
            g = GridSpec.centered(0.1, 24, 24)
            f = random_field(rng, g, density=float(rng.uniform(0.1, 1.0))) * float(10 ** rng.uniform(-1, 1))
            target = float(rng.uniform(0.3, 2.0))
            lam = sup_bound(norms(f)) / target
            Z = sup_bound(norms(f)) / lam
            psi = stream_function(f, lam).values
            above = g.x2 > Z
            checked += int(above.sum()) * g.nx
            assert np.all(psi[above] < 0)
        info["cells_checked"] = checked
        assert checked > 0


def test_criterion_05_rearrangement_optimality():
    rng = np.random.default_rng(SEED)
    with criterion(5, "rearrange_along vs all permutations, up to 8 cells", 5.0) as info:
        cases = 0
        for n in range(1, 9):
            g = GridSpec(0.0, float(n), 1.0, n, 1)
            for _ in range(6):
                # integer data make every pairing sum exact
                vals = rng.integers(0, 4, n).astype(float)
                if not vals.any():
                    vals[0] = 2.0
                psi = rng.integers(-20, 21, n).astype(float)
                out = rearrange_along(decreasing_rearrangement(ScalarField(g, vals)), ScalarField(g, psi))
                best = max(float(np.dot(p, psi)) for p in set(itertools.permutations(vals)))
                assert float(np.dot(out.flat(), psi)) == best
                cases += 1
        info["cases"] = cases


def test_criterion_06_steiner_properties():
    rng = np.random.default_rng(SEED)
    with criterion(6, "Steiner symmetrization on 100 random 16x16 fields", 30.0) as info:
        g = GridSpec.centered(0.1, 16, 16)
        worst = math.inf
        for _ in range(100):
            f = random_field(rng, g, density=float(rng.uniform(0.2, 1.0)))
            s = steiner_symmetrize(f)
            assert np.array_equal(steiner_symmetrize(s).values, s.values)
            assert np.array_equal(np.sort(s.values, axis=1), np.sort(f.values, axis=1))
            assert impulse(s) == impulse(f)
            ef, es = energy(f), energy(s)
            worst = min(worst, (es - ef) / ef)
            assert es >= ef * (1 - 1e-10)
        info["min_rel_energy_gain"] = worst


def test_criterion_07_ascent_monotone_in_class():
    with criterion(7, "reference patch ascent: monotone, in class, comonotone", 300.0) as info:
        g = reference_patch_grid()
        prof = reference_patch_profile(g)
        bad = []

        def check(k, z):
            if not is_rearrangement(z, prof, 0.0)[0]:
                bad.append(k)

        res = maximize(prof, g, MaximizerConfig(lam=REF_LAMBDA), on_iterate=check)
        objs = [r.objective for r in res.trace]
        drops = [b - a for a, b in zip(objs, objs[1:]) if b < a - 1e-10 * abs(a)]
        info["iterates"] = len(res.trace)
        info["residual"] = res.comonotonicity_residual
        info["s_lambda"] = res.s_lambda
        assert res.converged and not drops and not bad
        assert res.comonotonicity_residual < 1e-6


def test_criterion_08_multi_seed_agreement():
    with criterion(8, "five seeds agree on s_lambda", 25 * 60.0) as info:
        g = reference_patch_grid()
        prof = reference_patch_profile(g)
        rng = np.random.default_rng(SEED)
        # the ladder scattered over random cells of a box clear of the window edges
        X1, X2 = g.mesh()
        box = np.flatnonzero(((np.abs(X1) < 1.2) & (X2 > 0.2) & (X2 < 2.6)).ravel())
        scatter = np.zeros(g.size)
        scatter[rng.permutation(box)[: prof.n_cells]] = prof.expand()
        seeds = {
            "disk": MaximizerConfig(lam=REF_LAMBDA),
            "strip": MaximizerConfig(lam=REF_LAMBDA, seed_placement="strip"),
            "disk(0.3,0.8)": MaximizerConfig(lam=REF_LAMBDA, seed_center=(0.3, 0.8)),
            "disk(-0.2,2.0)": MaximizerConfig(lam=REF_LAMBDA, seed_center=(-0.2, 2.0)),
            "scatter": MaximizerConfig(lam=REF_LAMBDA, seed_placement="given-field",
                                       initial=ScalarField(g, scatter.reshape(g.shape))),
        }
        values = {name: maximize(prof, g, cfg).s_lambda for name, cfg in seeds.items()}
        top = max(values.values())
        spread = (top - min(values.values())) / abs(top)
        tol = MaximizerConfig(lam=REF_LAMBDA).tol_objective
        info["s_lambda"] = top
        info["rel_spread"] = spread
        assert spread <= 10 * tol


# --- steady runs shared by criteria 9 and 10 ------------------------------------

STEADY_N = (256, 512)
STEADY_CFL = 4.0


@pytest.fixture(scope="module")
def steady_runs():
    out = {}
    for n in STEADY_N:
        t0 = time.perf_counter()
        _, res = cached_bump_result(n)
        z = res.zeta_star
        T = 1 / REF_LAMBDA
        st, audits = evolve(initial_state(z, REF_LAMBDA), T, stable_dt(z, REF_LAMBDA, STEADY_CFL),
                            cfl=STEADY_CFL)
        d, k = dist_to_orbit(st.zeta, z)
        out[n] = {
            "h": z.grid.h,
            "err": d / lp_norm(z, 2),
            "shift": k,
            "drift": {c: max(getattr(a, c) for a in audits)
                      for c in ("E_drift", "I_drift", "l1_drift", "l2_drift", "lp_drift", "rearr_drift")},
            "steps": st.steps,
            "secs": time.perf_counter() - t0,
        }
        print(f"steady run n={n}: {out[n]}")
    return out


def test_criterion_09_steady_state_fidelity(steady_runs):
    with criterion(9, "steady maximizer over T = 1/lambda, two resolutions", 30 * 60.0) as info:
        info["extra_s"] = sum(r["secs"] for r in steady_runs.values())
        coarse, fine = (steady_runs[n] for n in STEADY_N)
        order = math.log(coarse["err"] / fine["err"]) / math.log(coarse["h"] / fine["h"])
        info["err_256"] = coarse["err"]
        info["err_512"] = fine["err"]
        info["order"] = order
        assert order >= 1.0
        assert abs(coarse["shift"]) <= 1 and abs(fine["shift"]) <= 2


def test_criterion_10_conservation_audit(steady_runs):
    with criterion(10, "invariant drifts < 2% at n=256 and falling at n=512", 30 * 60.0) as info:
        coarse, fine = (steady_runs[n]["drift"] for n in STEADY_N)
        for c in coarse:
            info[f"{c}_256"] = coarse[c]
            info[f"{c}_512"] = fine[c]
        for c in ("E_drift", "I_drift", "l1_drift", "l2_drift", "lp_drift"):
            assert coarse[c] < 0.02, c
        for c in coarse:
            assert fine[c] < coarse[c], c


def test_criterion_11_orbital_stability():
    with criterion(11, "1% perturbations over T = 2/lambda stay within 5x", 3600.0) as info:
        _, res = cached_bump_result(256)
        z = res.zeta_star
        mag = 0.01 * lp_norm(z, 2)
        T = 2 / REF_LAMBDA
        shuffle = run_stability(z, PerturbationSpec("rearranged-noise", mag, 10.0, 1), REF_LAMBDA, T,
                                cfl=STEADY_CFL)
        added = run_stability(z, PerturbationSpec("additive-nonnegative", mag, 10.0, 1), REF_LAMBDA, T,
                              cfl=STEADY_CFL)
        info["shuffle_dist2_ratio"] = shuffle.peak_dist2 / shuffle.initial_dist2
        info["additive_dist_y_ratio"] = added.peak_dist_y / added.initial_dist_y
        assert shuffle.peak_dist2 <= 5 * shuffle.initial_dist2
        assert added.peak_dist_y <= 5 * added.initial_dist_y


def test_criterion_12_determinism(tmp_path):
    with criterion(12, "repeated runs are byte-identical", math.inf) as info:
        g = GridSpec(-1.6, 1.6, 1.6, 64, 32)
        prof = RearrangementProfile.bump(1.0, 0.4, g.h)
        blobs = []
        for run in range(2):
            res = maximize(prof, g, MaximizerConfig(lam=0.2, steiner_every=1))
            spec = PerturbationSpec("rearranged-noise", 0.05 * lp_norm(res.zeta_star, 2), 2.0, 5)
            w = perturb(res.zeta_star, spec)
            rep = run_stability(res.zeta_star, spec, 0.2, 2.0, cfl=2.0, omega0=w)
            files = []
            for name, f in (("z", res.zeta_star), ("w", w)):
                p = tmp_path / f"{name}{run}.csv"
                dump_field(f, p)
                files.append(p.read_bytes())
            files.append(repr([r.row() for r in rep.series]).encode())
            blobs.append(files)
        info["artifacts"] = len(blobs[0])
        assert blobs[0] == blobs[1]
