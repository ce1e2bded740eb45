"""File formats: sites, observations, chains, predictions, and run config.

Delimited text throughout.  Sites carry a header ``id,x,y``; multinomial
observations ``id,f1..fM`` with 1-based category labels and empty fields
for missing cells; count observations ``id,sp1..spM``.  Chains and verify
reports are line-delimited JSON records, one per draw or check, with a
leading ``meta`` record describing the run.
"""

import configparser
import json

import numpy as np

from .gibbs import ChainOutput, SamplerConfig
from .kernels import KernelSpec, Location
from .multinomial import MultinomialData
from .negbin import CountData

__all__ = [
    "ValidationError",
    "write_locations",
    "read_locations",
    "write_multinomial",
    "write_counts",
    "load_dataset",
    "write_chain",
    "read_chain",
    "write_predictions",
    "read_predictions",
    "read_config",
]


class ValidationError(ValueError):
    """Input files or arguments failed validation."""


def write_locations(path, locations):
    with open(path, "w") as fh:
        fh.write("id,x,y\n")
        for loc in locations:
            fh.write(f"{loc.id},{loc.x!r},{loc.y!r}\n")


def read_locations(path):
    locations = []
    seen = set()
    with open(path) as fh:
        header = fh.readline().strip()
        if header.split(",")[:3] != ["id", "x", "y"]:
            raise ValidationError(f"{path}:1: expected header id,x,y, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields")
            sid, xs, ys = parts
            if sid in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            try:
                x, y = float(xs), float(ys)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: bad coordinate") from exc
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ValidationError(f"{path}:{lineno}: non-finite coordinate")
            locations.append(Location(sid, x, y))
    if not locations:
        raise ValidationError(f"{path}: no data rows")
    return locations


def write_multinomial(path, ids, x, missing_mask=None):
    """1-based category labels; missing cells become empty fields."""
    x = np.asarray(x)
    with open(path, "w") as fh:
        fh.write("id," + ",".join(f"f{m + 1}" for m in range(x.shape[1])) + "\n")
        for i, sid in enumerate(ids):
            cells = []
            for m in range(x.shape[1]):
                miss = x[i, m] < 0 or (
                    missing_mask is not None and missing_mask[i, m]
                )
                cells.append("" if miss else str(int(x[i, m]) + 1))
            fh.write(f"{sid}," + ",".join(cells) + "\n")


def write_counts(path, ids, x):
    x = np.asarray(x)
    with open(path, "w") as fh:
        fh.write("id," + ",".join(f"sp{m + 1}" for m in range(x.shape[1])) + "\n")
        for i, sid in enumerate(ids):
            fh.write(f"{sid}," + ",".join(str(int(v)) for v in x[i]) + "\n")


def _read_table(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}"
                )
            rows.append((lineno, parts))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return header, rows


def load_dataset(locations_path, observations_path, model="multinomial"):
    """Aligned (locations, data) with ids matched between the two files.

    Multinomial levels are 1-based on disk; category counts are inferred as
    the per-feature maximum observed level.
    """
    locations = read_locations(locations_path)
    header, rows = _read_table(observations_path)
    if header[0] != "id":
        raise ValidationError(f"{observations_path}:1: first column must be id")
    M = len(header) - 1
    by_id = {}
    for lineno, parts in rows:
        sid = parts[0]
        if sid in by_id:
            raise ValidationError(f"{observations_path}:{lineno}: duplicate id {sid!r}")
        by_id[sid] = (lineno, parts[1:])
    obs_ids = set(by_id)
    loc_ids = [loc.id for loc in locations]
    if obs_ids != set(loc_ids):
        missing = sorted(set(loc_ids) ^ obs_ids)[:5]
        raise ValidationError(
            f"{observations_path}: ids do not align with locations (e.g. {missing})"
        )
    x = np.zeros((len(locations), M), dtype=int)
    for i, sid in enumerate(loc_ids):
        lineno, cells = by_id[sid]
        for m, cell in enumerate(cells):
            cell = cell.strip()
            if cell == "":
                if model != "multinomial":
                    raise ValidationError(
                        f"{observations_path}:{lineno}: counts cannot be missing"
                    )
                x[i, m] = -1
                continue
            try:
                v = int(cell)
            except ValueError as exc:
                raise ValidationError(
                    f"{observations_path}:{lineno}: non-integer value {cell!r}"
                ) from exc
            if model == "multinomial":
                if v < 1:
                    raise ValidationError(
                        f"{observations_path}:{lineno}: categories are 1-based"
                    )
                x[i, m] = v - 1
            else:
                if v < 0:
                    raise ValidationError(
                        f"{observations_path}:{lineno}: negative count"
                    )
                x[i, m] = v
    if model == "multinomial":
        return locations, MultinomialData(x)
    return locations, CountData(x)


# -- chain persistence ------------------------------------------------------


def write_chain(path, chain: ChainOutput):
    """One JSON record per kept draw, after a meta record; the latent field
    columns are included only when they were stored."""
    with open(path, "w") as fh:
        meta = {
            "type": "meta",
            "kernel_family": chain.kernel_family,
            "K": chain.K,
            "model_kind": chain.model_kind,
            "model_meta": chain.model_meta,
            "location_ids": list(chain.location_ids),
            "coords": np.asarray(chain.coords).tolist(),
            "param_keys": [
                k
                for k in chain.draws
                if k not in ("iteration", "tau", "mu", "psi", "Z", "U")
            ],
            "store_u": "U" in chain.draws,
            "param_shapes": {
                k: list(chain.draws[k].shape[1:])
                for k in chain.draws
                if k not in ("iteration", "tau", "mu", "psi", "Z", "U")
            },
        }
        fh.write(json.dumps(meta) + "\n")
        for d in range(chain.n_draws):
            rec = {
                "type": "draw",
                "iteration": int(chain.draws["iteration"][d]),
                "tau": float(chain.draws["tau"][d]),
                "mu": float(chain.draws["mu"][d]),
                "psi": np.asarray(chain.draws["psi"][d]).tolist(),
                "Z": chain.draws["Z"][d].ravel().astype(int).tolist(),
            }
            for key in meta["param_keys"]:
                rec[key] = np.asarray(chain.draws[key][d]).ravel().tolist()
            if meta["store_u"]:
                rec["U"] = np.asarray(chain.draws["U"][d]).ravel().tolist()
            fh.write(json.dumps(rec) + "\n")


def read_chain(path):
    with open(path) as fh:
        first = fh.readline()
        try:
            meta = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:1: not a chain file") from exc
        if meta.get("type") != "meta":
            raise ValidationError(f"{path}:1: missing meta record")
        coords = np.asarray(meta["coords"], dtype=float)
        n = coords.shape[0]
        K = int(meta["K"])
        records = {
            "iteration": [],
            "tau": [],
            "mu": [],
            "psi": [],
            "Z": [],
        }
        if meta["store_u"]:
            records["U"] = []
        for key in meta["param_keys"]:
            records[key] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type") != "draw":
                raise ValidationError(f"{path}:{lineno}: unexpected record")
            records["iteration"].append(rec["iteration"])
            records["tau"].append(rec["tau"])
            records["mu"].append(rec["mu"])
            records["psi"].append(rec["psi"])
            records["Z"].append(
                np.asarray(rec["Z"], dtype=np.int8).reshape(n, K)
            )
            if meta["store_u"]:
                records["U"].append(
                    np.asarray(rec["U"], dtype=float).reshape(n, K)
                )
            for key in meta["param_keys"]:
                shape = tuple(meta["param_shapes"][key])
                records[key].append(
                    np.asarray(rec[key], dtype=float).reshape(shape)
                )
    if not records["tau"]:
        raise ValidationError(f"{path}: chain holds no draws")
    draws = {key: np.asarray(vals) for key, vals in records.items()}
    draws["Z"] = draws["Z"].astype(np.int8)
    return ChainOutput(
        coords=coords,
        location_ids=list(meta["location_ids"]),
        kernel_family=meta["kernel_family"],
        K=K,
        model_kind=meta["model_kind"],
        model_meta=meta["model_meta"],
        draws=draws,
        config=None,
    )


def write_predictions(path, ids, coords, presence):
    """site-id x factor x probability records, with coordinates for mapping."""
    coords = np.asarray(coords, dtype=float)
    presence = np.asarray(presence, dtype=float)
    with open(path, "w") as fh:
        fh.write("site_id,x,y,factor,probability\n")
        for j, sid in enumerate(ids):
            for k in range(presence.shape[1]):
                fh.write(
                    f"{sid},{coords[j, 0]!r},{coords[j, 1]!r},{k + 1},"
                    f"{presence[j, k]!r}\n"
                )


def read_predictions(path):
    header, rows = _read_table(path)
    if header != ["site_id", "x", "y", "factor", "probability"]:
        raise ValidationError(f"{path}:1: unexpected prediction header")
    recs = {}
    order = []
    for lineno, parts in rows:
        sid, xs, ys, ks, ps = parts
        key = sid
        if key not in recs:
            recs[key] = {"x": float(xs), "y": float(ys), "probs": {}}
            order.append(key)
        recs[key]["probs"][int(ks)] = float(ps)
    ids = order
    coords = np.array([[recs[s]["x"], recs[s]["y"]] for s in ids])
    K = max(max(r["probs"]) for r in recs.values())
    presence = np.array(
        [[recs[s]["probs"].get(k + 1, np.nan) for k in range(K)] for s in ids]
    )
    return ids, coords, presence


# -- run configuration --------------------------------------------------------


def read_config(path):
    """Sectioned key=value text describing a fit; returns a dict of pieces.

    Sections: [model] kind/K/gamma/..., [kernel] family/phi/kappa/nngp,
    [sampler] burn_in/keep/... (every sampler default is overridable).
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"config file {path} not found")
    model_kind = parser.get("model", "kind", fallback="multinomial")
    if model_kind not in ("multinomial", "negbin"):
        raise ValidationError(f"unknown model kind {model_kind!r}")
    kernel_family = parser.get("kernel", "family", fallback="exponential")
    kern_kwargs = {}
    if parser.has_option("kernel", "phi"):
        kern_kwargs["phi"] = parser.getfloat("kernel", "phi")
    elif kernel_family != "exchangeable":
        kern_kwargs["phi"] = 1.0
    if parser.has_option("kernel", "kappa"):
        kern_kwargs["kappa"] = parser.getfloat("kernel", "kappa")
    try:
        kernel = KernelSpec(kernel_family, **kern_kwargs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    nngp_m = None
    if parser.has_option("kernel", "nngp_m"):
        nngp_m = parser.getint("kernel", "nngp_m")
    sampler_fields = {}
    if parser.has_section("sampler"):
        cast = {
            "K": int, "burn_in": int, "keep": int, "thin": int, "seed": int,
            "a_tau": float, "b_tau": float, "m_mu": float, "s_mu": float,
            "repulsion_delta": float, "rw_step_psi": float, "rw_step_mu": float,
            "z_update_mode": str, "adapt": lambda v: v.lower() in ("1", "true", "yes"),
            "adapt_window": int,
            "store_u": lambda v: v.lower() in ("1", "true", "yes"),
            "update_tau": lambda v: v.lower() in ("1", "true", "yes"),
            "update_mu": lambda v: v.lower() in ("1", "true", "yes"),
            "update_psi": lambda v: v.lower() in ("1", "true", "yes"),
        }
        for key, value in parser.items("sampler"):
            if key not in cast:
                raise ValidationError(f"unknown sampler option {key!r}")
            sampler_fields[key] = cast[key](value)
    psi_prior = {}
    if parser.has_section("psi_prior"):
        for key, value in parser.items("psi_prior"):
            shape, rate = (float(v) for v in value.split(","))
            psi_prior[key] = (shape, rate)
    if psi_prior:
        sampler_fields["psi_prior"] = psi_prior
    if "K" not in sampler_fields:
        raise ValidationError("config must set K under [sampler]")
    model_opts = {}
    if parser.has_section("model"):
        for key in ("gamma0", "gamma", "a_nu", "b_nu", "rw_step_nu"):
            if parser.has_option("model", key):
                model_opts[key] = parser.getfloat("model", key)
    try:
        config = SamplerConfig(**sampler_fields)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad sampler config: {exc}") from exc
    return {
        "model_kind": model_kind,
        "model_opts": model_opts,
        "kernel": kernel,
        "nngp_m": nngp_m,
        "config": config,
    }
