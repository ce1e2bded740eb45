"""Command-line surface.

Subcommands:

  simulate   scenario -> location/observation/truth files
  fit        data + config -> chain file (optionally several chains)
  predict    chain + sites -> per-factor presence probabilities
  verify     prior/PG diagnostics -> line-delimited check report
  metrics    rand index / prediction MSE / DIC from stored artifacts

Exit codes: 0 success, 1 validation failure, 2 numerical abort.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dataio
from .dataio import ValidationError
from .gibbs import NumericalAbort, run_chain
from .kernels import FactorizationError, Location
from .multinomial import MultinomialModel
from .negbin import NegBinModel
from .predict import dic, predict_factors, prediction_mse, rand_index, rebuild_model
from .scenarios import ScenarioSpec, generate_scenario
from .verify import run_verification, write_report


def _cmd_simulate(args):
    spec = ScenarioSpec(
        scenario=args.scenario,
        n=args.n,
        n_test=args.n_test,
        M=args.m_features,
        L=args.categories,
        seed=args.seed,
    )
    data = generate_scenario(spec)
    ids = [f"s{i + 1}" for i in range(spec.n)]
    test_ids = [f"t{i + 1}" for i in range(spec.n_test)]
    locs = [Location(sid, *data.coords[i]) for i, sid in enumerate(ids)]
    test_locs = [Location(sid, *data.coords_test[i]) for i, sid in enumerate(test_ids)]
    prefix = args.out_prefix
    dataio.write_locations(f"{prefix}_locations.csv", locs)
    dataio.write_locations(f"{prefix}_test_locations.csv", test_locs)
    dataio.write_multinomial(f"{prefix}_observations.csv", ids, data.x)
    np.save(f"{prefix}_true_probs.npy", data.probs)
    np.save(f"{prefix}_true_probs_test.npy", data.probs_test)
    if data.z_true is not None:
        np.save(f"{prefix}_true_factors.npy", data.z_true)
    print(f"wrote {prefix}_locations.csv and companions (n={spec.n}, M={spec.M})")
    return 0


def _fit_one(payload):
    (locations, data_kind, x, c, model_opts, kernel, nngp_m, config) = payload
    if data_kind == "multinomial":
        from .multinomial import MultinomialData

        model = MultinomialModel(MultinomialData(x, c=c), config.K, **model_opts)
    else:
        from .negbin import CountData

        model = NegBinModel(CountData(x), config.K, **model_opts)
    return run_chain(model, locations, kernel, config, nngp_m=nngp_m)


def _cmd_fit(args):
    cfg = dataio.read_config(args.config)
    locations, data = dataio.load_dataset(
        args.locations, args.observations, model=cfg["model_kind"]
    )
    config = cfg["config"]
    if args.store_u:
        config.store_u = True
    c = getattr(data, "c", None)
    payloads = []
    for chain_idx in range(args.chains):
        cfg_i = config if args.chains == 1 else _with_seed(config, config.seed + chain_idx)
        payloads.append(
            (
                locations,
                cfg["model_kind"],
                data.x,
                c,
                cfg["model_opts"],
                cfg["kernel"],
                cfg["nngp_m"],
                cfg_i,
            )
        )
    if args.chains > 1 and args.parallel:
        with ProcessPoolExecutor(max_workers=min(args.chains, 4)) as pool:
            outputs = list(pool.map(_fit_one, payloads))
    else:
        outputs = [_fit_one(p) for p in payloads]
    for chain_idx, out in enumerate(outputs):
        path = args.out if args.chains == 1 else _numbered(args.out, chain_idx)
        dataio.write_chain(path, out)
        print(f"chain {chain_idx}: {out.n_draws} draws -> {path}")
    return 0


def _with_seed(config, seed):
    from dataclasses import replace

    return replace(config, seed=seed)


def _numbered(path, idx):
    if "." in path.rsplit("/", 1)[-1]:
        stem, ext = path.rsplit(".", 1)
        return f"{stem}_{idx}.{ext}"
    return f"{path}_{idx}"


def _cmd_predict(args):
    chain = dataio.read_chain(args.chain)
    sites = dataio.read_locations(args.sites)
    rng = np.random.default_rng(args.seed)
    pred = predict_factors(sites, chain, rng, response=False)
    dataio.write_predictions(
        args.out, [s.id for s in sites], pred.coords, pred.presence
    )
    print(f"wrote presence probabilities for {len(sites)} sites -> {args.out}")
    return 0


def _cmd_verify(args):
    records = run_verification(seed=args.seed, quick=args.quick, curves=args.curves)
    write_report(args.out, records)
    checks = [r for r in records if r["type"] == "check"]
    n_pass = sum(r["pass"] for r in checks)
    for rec in checks:
        status = "pass" if rec["pass"] else "FAIL"
        oracle = "" if rec["oracle"] is None else f" oracle={rec['oracle']:.6g}"
        print(
            f"{status} {rec['check']}: estimate={rec['estimate']:.6g}{oracle} "
            f"se={rec['se']:.3g}"
        )
    print(f"{n_pass}/{len(checks)} checks passed -> {args.out}")
    return 0 if n_pass == len(checks) else 2


def _cmd_metrics(args):
    chain = dataio.read_chain(args.chain)
    report = {}
    if args.true_factors:
        z_true = np.load(args.true_factors)
        probs = chain.presence_probabilities()
        detected = (probs > 0.5).astype(int)
        report["rand_index"] = _match_factors(z_true, detected)
    if args.true_probs and args.predicted_probs:
        truth = np.load(args.true_probs)
        est = np.load(args.predicted_probs)
        report["prediction_mse"] = prediction_mse(est, truth)
    if args.observations and args.locations:
        _, data = dataio.load_dataset(
            args.locations, args.observations, model=chain.model_kind
        )
        model = rebuild_model(chain, data)
        report["dic"] = dic(chain, model)
    if not report:
        raise ValidationError("metrics: nothing to compute (pass some inputs)")
    print(json.dumps(report, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


def _match_factors(z_true, detected):
    """Best rand index per true factor over detected columns."""
    out = []
    for k in range(z_true.shape[1]):
        scores = [
            rand_index(z_true[:, k], detected[:, j])
            for j in range(detected.shape[1])
        ]
        out.append(max(scores))
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sibp", description="Spatial feature-allocation factor models"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", choices=["I", "II", "III"], required=True)
    p.add_argument("--n", type=int, default=80)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--m-features", type=int, default=50)
    p.add_argument("--categories", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    p.add_argument("--locations", required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--store-u", action="store_true",
                   help="persist latent fields (needed for predict)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="presence probabilities at new sites")
    p.add_argument("--chain", required=True)
    p.add_argument("--sites", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("verify", help="prior and PG sampler diagnostics")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="reduced MC budgets")
    p.add_argument("--curves", action="store_true",
                   help="emit feature-count-vs-n curve records")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("metrics", help="rand index / prediction MSE / DIC")
    p.add_argument("--chain", required=True)
    p.add_argument("--true-factors", help=".npy of true binary factors")
    p.add_argument("--true-probs", help=".npy of true probabilities")
    p.add_argument("--predicted-probs", help=".npy of predicted probabilities")
    p.add_argument("--locations", help="locations file (for DIC)")
    p.add_argument("--observations", help="observations file (for DIC)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalAbort, FactorizationError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
