"""Command-line surface: simulate, sweep, verify, duality, statmech, continuum.

Every subcommand exits 0 only if all requested checks pass.  Config keys
may be overridden on the command line as ``--key=value``.
"""

import argparse
import json
import sys

import numpy as np


def _parse_overrides(extras):
    out = []
    for item in extras:
        if not item.startswith("--") or "=" not in item:
            raise SystemExit(f"unrecognized argument {item!r} (expected --key=value)")
        key, raw = item[2:].split("=", 1)
        out.append((key, raw))
    return out


def cmd_simulate(args, extras):
    from .sweep import apply_overrides, build_spec, raw_config_values, run_one_trajectory

    values = {}
    if args.config:
        values = raw_config_values(open(args.config).read())
    values = apply_overrides(values, _parse_overrides(extras))
    values.setdefault("axis", "lambda")
    values.setdefault("values", (values.get("lam", 0.5),))
    values.setdefault("n_trajectories", 1)
    spec = build_spec(values)
    params = spec.point_params(spec.values[0])
    engine = spec.engine_for(params)
    from .model import derive_trajectory_seed

    results = []
    for k in range(spec.n_trajectories):
        seed = derive_trajectory_seed(spec.master_seed, k)
        obs = run_one_trajectory(
            params, seed, engine, spec.observable_list, spec.chi_max, spec.svd_cutoff
        )
        results.append(obs)
    from .observables import average_over_trajectories

    means, errs = average_over_trajectories(results, mode="sampled")
    print(json.dumps({"params": {
        "lambda_x": params.lambda_x, "lambda_zz": params.lambda_zz,
        "q_x": params.q_x, "q_zz": params.q_zz, "L": params.L, "T": params.T,
        "engine": engine,
    }, "means": means, "stderrs": errs}, indent=1, sort_keys=True))
    return 0


def cmd_sweep(args, extras):
    from .sweep import (
        apply_overrides,
        build_spec,
        raw_config_values,
        run_sweep,
        write_results,
    )

    values = raw_config_values(open(args.config).read())
    values = apply_overrides(values, _parse_overrides(extras))
    spec = build_spec(values)

    def progress(row):
        status = row.error or ", ".join(
            f"{k}={v:.4f}" for k, v in sorted(row.means.items())
        )
        print(f"[{row.axis}={row.value:g} L={row.L}] {status}", flush=True)

    rows = run_sweep(spec, progress=progress)
    paths = write_results(rows, spec.output_dir, stem=args.stem,
                          config_echo={k: str(v) for k, v in values.items()})
    print("wrote", " ".join(sorted(paths.values())))
    return 0 if all(not r.error for r in rows) else 1


def cmd_verify(args, extras):
    """Fast oracle/invariant suite (engine equivalence, Born chain, duality)."""
    from .model import SimParams
    from .dense import run_trajectory_dense
    from .mps import TruncationPolicy, run_trajectory_mps
    from .statmech import nishimori_residual, record_duality_residual, self_duality_residuals

    failures = []

    def check(name, ok, detail=""):
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        if not ok:
            failures.append(name)

    p = SimParams(lambda_x=0.35, lambda_zz=0.45, q_x=0.1, q_zz=0.1, L=5, T=10)
    dense_st, dense_traj = run_trajectory_dense(p, seed=7)
    mps_st, mps_traj = run_trajectory_mps(p, seed=7, policy=TruncationPolicy(256, 0.0))
    dev = float(np.max(np.abs(dense_st.zz_strong_matrix() - mps_st.zz_strong_matrix())))
    check("engine-equivalence", np.array_equal(dense_traj.record.m_x, mps_traj.record.m_x)
          and dev < 1e-8, f"max dev {dev:.2e}")

    res = nishimori_residual(SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.12, q_zz=0.07, L=2, T=2))
    check("born-partition-chain", res < 1e-9, f"residual {res:.2e}")

    dual = record_duality_residual(0.3, 0.6, L=2, T=2)
    check("record-duality", dual < 1e-9, f"residual {dual:.2e}")

    rw, rt = self_duality_residuals(0.6, 0.12)
    check("self-duality-weights", rw < 1e-10 and rt < 1e-10, f"{rw:.2e} {rt:.2e}")
    return 1 if failures else 0


def cmd_duality(args, extras):
    """Order/disorder susceptibility duality on the ring at q = 0.

    The order curve runs from the code space; the disorder curve runs from
    its Kramers-Wannier image |+...+>, and both average the post-X and
    post-ZZ readings of the final layer.
    """
    from .sweep import build_spec, run_sweep

    lambdas = tuple(float(v) for v in args.lambdas.split(","))
    common = dict(
        axis="lambda", values=lambdas, n_trajectories=args.n_trajectories,
        q=0.0, L=args.L, boundary="periodic", engine="pure",
        chi_max=args.chi_max, workers=args.workers, dual_timing=True,
    )
    rows_k = run_sweep(build_spec(dict(
        common, observable_list=("kappa_ea",), initial_state="ghz_plus",
        master_seed=args.seed,
    )))
    rows_d = run_sweep(build_spec(dict(
        common, observable_list=("d_ea",), initial_state="plus_product",
        master_seed=args.seed + 1,
    )))
    table_k = {round(r.value, 12): r for r in rows_k}
    table_d = {round(r.value, 12): r for r in rows_d}
    ok = True
    for lam in lambdas:
        partner = round(1.0 - lam, 12)
        a = table_k[round(lam, 12)]
        if a.error or partner not in table_d:
            print(f"lambda={lam}: {a.error or 'no dual partner on the grid'}")
            ok = False
            continue
        b = table_d[partner]
        if b.error:
            print(f"lambda={lam}: dual point failed: {b.error}")
            ok = False
            continue
        gap = abs(a.means["kappa_ea"] - b.means["d_ea"])
        band = 3.0 * (a.stderrs["kappa_ea"] + b.stderrs["d_ea"])
        ok &= gap <= band
        print(
            f"kappa(l={lam:.2f}) = {a.means['kappa_ea']:.4f} +- {a.stderrs['kappa_ea']:.4f}"
            f"  vs  d(1-l={partner:.2f}) = {b.means['d_ea']:.4f} +- {b.stderrs['d_ea']:.4f}"
            f"  gap {gap:.4f} band {band:.4f}"
        )
    print("duality", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_statmech(args, extras):
    from .model import SimParams
    from .statmech import nishimori_residual, record_duality_residual

    failures = []
    res = nishimori_residual(SimParams(lambda_x=0.5, lambda_zz=0.5, L=2, T=2,
                                       theta_x=0.0, theta_zz=0.0))
    print(f"nishimori residual (measurement-only): {res:.3e}")
    failures += [1] if res > 1e-9 else []
    res2 = nishimori_residual(SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.12,
                                        q_zz=0.07, L=2, T=2))
    print(f"nishimori residual (with dephasing):   {res2:.3e}")
    failures += [1] if res2 > 1e-9 else []
    dual = record_duality_residual(0.3, 0.6, L=2, T=2)
    print(f"record-level duality residual:         {dual:.3e}")
    failures += [1] if dual > 1e-9 else []
    return 1 if failures else 0


def cmd_continuum(args, extras):
    from .continuum import (
        HamiltonianSpec,
        build_hamiltonian,
        forced_coupling_arrays,
        replica2_gate_identity_residual,
        spectral_match,
        u1_charge_residual,
        xxz_params_from_circuit,
    )

    failures = []
    L = 4
    lx, lzz, qx, qzz = 0.4, 0.25, 0.15, 0.1
    h1 = build_hamiltonian(HamiltonianSpec(
        "ashkin_teller_h1", dict(lambda_x=lx, lambda_zz=lzz, q_x=qx, q_zz=qzz), L))
    j, d1, d2, k = xxz_params_from_circuit("forced", lx, lzz, qx, qzz)
    hx = build_hamiltonian(HamiltonianSpec(
        "staggered_xxz", dict(J=j, Delta1=d1, Delta2=d2, K=k), L))
    dev = spectral_match(h1, hx)
    print(f"H1 vs staggered XXZ spectral deviation: {dev:.3e}")
    failures += [1] if dev > 1e-9 else []
    hf = build_hamiltonian(HamiltonianSpec(
        "jw_fermion", forced_coupling_arrays(L, lx, lzz, qx, qzz), L))
    dev_f = spectral_match(h1, hf)
    print(f"H1 vs fermion model spectral deviation: {dev_f:.3e}")
    failures += [1] if dev_f > 1e-9 else []
    res = u1_charge_residual(3, lx, lzz, qx, qzz)
    print(f"U(1) commutator residual (theta = 0):   {res:.3e}")
    failures += [1] if res > 1e-10 else []
    gate = replica2_gate_identity_residual(0.5, 1e-3, "X")
    print(f"2-replica gate identity residual:       {gate:.3e}")
    failures += [1] if gate > 1e-5 else []
    return 1 if failures else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="z2chain",
        description="Monitored Z2-symmetric chain simulators and cross-checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="single-point trajectories")
    p_sim.add_argument("--config", default=None)

    p_sweep = sub.add_parser("sweep", help="run a sweep config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--stem", default="sweep")

    sub.add_parser("verify", help="fast oracle and invariant checks")

    p_dual = sub.add_parser("duality", help="order/disorder duality experiment")
    p_dual.add_argument("--L", type=int, default=12)
    p_dual.add_argument("--n-trajectories", type=int, default=200)
    p_dual.add_argument("--lambdas", default="0.2,0.35,0.5,0.65,0.8")
    p_dual.add_argument("--chi-max", type=int, default=64)
    p_dual.add_argument("--workers", type=int, default=1)
    p_dual.add_argument("--seed", type=int, default=11)

    sub.add_parser("statmech", help="partition-function cross-checks")
    sub.add_parser("continuum", help="continuum Hamiltonian checks")

    args, extras = parser.parse_known_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "verify": cmd_verify,
        "duality": cmd_duality,
        "statmech": cmd_statmech,
        "continuum": cmd_continuum,
    }
    return handlers[args.command](args, extras)


if __name__ == "__main__":
    sys.exit(main())
