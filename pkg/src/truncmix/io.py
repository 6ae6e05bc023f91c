"""Configuration, data loading, run orchestration and artifact files.

A fit directory holds::

    manifest.json     config echo, seed, input hashes, rescaling, timing
    samples.csv       one row per (sample, component): weight, mean, Cholesky
    assignments.csv   one row per sample (optional)
    trace.csv         iteration, rejections, log_joint, seconds

Floats are written with 17 significant digits so files round-trip exactly.
"""

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, evaluation
from .chain import TRACE_FIELDS, run_chain
from .constraints import constraint_from_dict
from .estimator import default_niw
from .exceptions import ConfigError, DataFormatError
from .mixture import Dataset, Hyperparams
from .threshold import THRESHOLD_GRID, VARIANTS

FLOAT_FMT = "%.17g"


@dataclass
class RunConfig:
    """Everything needed to reproduce a run."""

    model: str = "tmog"
    data_path: str = None
    constraint_path: str = None
    alpha0: float = 1.0
    k_trunc: int = 50
    mu0: list = None
    lam: float = 0.1
    phi_scale: float = 0.001
    nu: float = None
    threshold_variant: str = "capped_run"
    threshold: float = 1.0
    rho: float = None
    thresholds: list = field(default_factory=lambda: list(THRESHOLD_GRID))
    iters: int = 5000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    train_fraction: float = 0.8
    test_selection: str = "random"
    edge_distance: float = 0.05
    output_dir: str = "run"
    weight_prior: str = "stick_breaking"
    assignment_mode: str = "conditional"
    m_norm: int = evaluation.DEFAULT_M_NORM
    grid_resolution: int = 100
    ppc: bool = False
    ppc_scale: float = 1.2
    ppc_reps: int = None
    rescale_from: list = None
    rescale_to: list = None
    record_timing: bool = True
    keep_assignments: bool = True
    safety_cap: int = 10 ** 6
    sweep_cap: int = 10 ** 8

    def __post_init__(self):
        if self.model not in ("tmog", "motg"):
            raise ConfigError("model must be 'tmog' or 'motg'")
        if self.threshold_variant not in VARIANTS:
            raise ConfigError("threshold_variant must be one of %s" % (VARIANTS,))
        if self.rho is not None:
            if not 0 < self.rho <= 1:
                raise ConfigError("rho must lie in (0, 1]")
            self.threshold = (1.0 - self.rho) / self.rho
        if self.threshold_variant == "exact":
            self.threshold = math.inf
        if not self.threshold >= 0:
            raise ConfigError("threshold must be nonnegative")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.test_selection not in ("random", "edge_biased"):
            raise ConfigError("test_selection must be 'random' or 'edge_biased'")
        if not 0 <= self.burn_in < self.iters:
            raise ConfigError("need 0 <= burn_in < iters")
        if self.thin < 1 or self.k_trunc < 1 or self.m_norm < 1:
            raise ConfigError("thin, k_trunc and m_norm must be positive")
        if not self.ppc_scale > 1:
            raise ConfigError("ppc_scale must exceed 1")
        if self.rescale_from is not None and self.rescale_to is None:
            raise ConfigError("rescale_from needs rescale_to")

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ConfigError("unknown config key(s): %s" % ", ".join(unknown))
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = _coerce(names[k], v)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc))

    def to_dict(self):
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and math.isinf(v):
                out[k] = "inf"
        out["thresholds"] = ["inf" if math.isinf(t) else t for t in self.thresholds]
        return out

    def replace(self, **changes):
        d = dataclasses.asdict(self)
        d.update(changes)
        return RunConfig(**d)

    def hyperparams(self, data):
        niw = default_niw(data.constraint, data.points, self.mu0, self.lam,
                          self.phi_scale, self.nu)
        return Hyperparams(niw, alpha0=self.alpha0, k_trunc=self.k_trunc,
                           threshold=self.threshold,
                           threshold_variant=("capped_run" if self.threshold_variant == "exact"
                                              else self.threshold_variant),
                           iters=self.iters, burn_in=self.burn_in, seed=self.seed,
                           weight_prior=self.weight_prior,
                           assignment_mode=self.assignment_mode,
                           safety_cap=self.safety_cap, sweep_cap=self.sweep_cap)


_FLOAT_FIELDS = {"alpha0", "lam", "phi_scale", "nu", "threshold", "rho", "train_fraction",
                 "edge_distance", "ppc_scale"}
_INT_FIELDS = {"k_trunc", "iters", "burn_in", "thin", "seed", "m_norm",
               "grid_resolution", "ppc_reps", "safety_cap", "sweep_cap"}
_BOOL_FIELDS = {"ppc", "record_timing", "keep_assignments"}


def _to_float(name, v):
    try:
        return math.inf if str(v).strip().lower() in ("inf", "infinity") else float(v)
    except (TypeError, ValueError):
        raise ConfigError("%s: expected a number, got %r" % (name, v))


def _coerce(f, v):
    name = f.name
    if v is None:
        return None
    if name in _FLOAT_FIELDS:
        return _to_float(name, v)
    if name in _INT_FIELDS:
        try:
            fv = float(v)
        except (TypeError, ValueError):
            raise ConfigError("%s: expected an integer, got %r" % (name, v))
        if fv != int(fv):
            raise ConfigError("%s: expected an integer, got %r" % (name, v))
        return int(fv)
    if name in _BOOL_FIELDS:
        if isinstance(v, str):
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError("%s: expected a boolean, got %r" % (name, v))
            return v.lower() in ("true", "1", "yes")
        return bool(v)
    if name == "thresholds":
        if isinstance(v, str):
            from .threshold import parse_threshold_list
            return parse_threshold_list(v)
        return [_to_float(name, t) for t in v]
    if name == "mu0":
        if isinstance(v, str):
            v = v.split(",")
        return [_to_float(name, t) for t in np.atleast_1d(v)]
    if name in ("rescale_from", "rescale_to"):
        if isinstance(v, str):
            v = json.loads(v)
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ConfigError("%s must be [[lo...], [hi...]]" % name)
        return arr.tolist()
    return v


def load_config(path, overrides=None):
    """Read a JSON config and apply ``overrides`` (a dict of field values)."""
    d = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError("config file %s does not exist" % path)
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config file %s is not valid JSON: %s" % (path, exc))
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(d)


def git_blob_hash(path):
    """Content hash in git's blob format (``git hash-object``)."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def read_csv_matrix(path):
    """Numeric CSV with an optional header row; returns ``(matrix, header)``."""
    rows = []
    header = None
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if r == 0 and header is None and not rows:
                    header = [c.strip() for c in row]
                    continue
                col = next(j for j, c in enumerate(row) if not _is_float(c))
                raise DataFormatError("%s: cannot parse row %d column %d (%r)"
                                      % (path, r, col, row[col]), row=r, column=col)
            if rows and len(vals) != len(rows[0]):
                raise DataFormatError("%s: row %d has %d columns, expected %d"
                                      % (path, r, len(vals), len(rows[0])), row=r,
                                      column=min(len(vals), len(rows[0])))
            rows.append(vals)
    if not rows:
        raise DataFormatError("%s holds no data rows" % path)
    return np.array(rows), header


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def affine_rescale(x, src, dst):
    """Map the box ``src = [lo, hi]`` onto ``dst`` coordinate-wise.

    Written as ``lo' (1 - u) + hi' u`` so the corners land exactly.
    """
    src, dst = np.asarray(src, dtype=float), np.asarray(dst, dtype=float)
    if np.any(src[1] <= src[0]) or np.any(dst[1] <= dst[0]):
        raise ConfigError("rescale boxes need lo < hi in every coordinate")
    u = (x - src[0]) / (src[1] - src[0])
    return dst[0] * (1.0 - u) + dst[1] * u


def load_dataset(path, constraint, rescale_from=None, rescale_to=None):
    """Read a CSV, optionally rescale it, and check it against the constraint.

    Returns
    -------
    data : Dataset
    info : dict
        Header and rescaling boxes, for the run manifest.
    """
    if not os.path.exists(path):
        raise ConfigError("data file %s does not exist" % path)
    x, header = read_csv_matrix(path)
    info = {"header": header, "rescale": None}
    if rescale_to is not None:
        src = np.array(rescale_from) if rescale_from is not None else np.stack(
            [x.min(axis=0), x.max(axis=0)])
        x = affine_rescale(x, src, rescale_to)
        info["rescale"] = {"from": src.tolist(), "to": np.asarray(rescale_to).tolist()}
    if x.shape[1] != constraint.dim:
        raise DataFormatError("%s has %d columns but the constraint is %d-dimensional"
                              % (path, x.shape[1], constraint.dim))
    return Dataset(x, constraint), info


def load_constraint_file(path, dim=None):
    if path is None:
        raise ConfigError("constraint_path is required")
    if not os.path.exists(path):
        raise ConfigError("constraint file %s does not exist" % path)
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("constraint file %s is not valid JSON: %s" % (path, exc))
    return constraint_from_dict(spec, dim)


def edge_biased_mask(points, constraint, distance):
    """Points strictly inside whose distance to the boundary is below ``distance``."""
    dist = constraint.boundary_distance(points)
    return (dist > 0) & (dist < distance)


def split_indices(n, train_fraction, seed):
    """Random train/test split, deterministic in ``seed``."""
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def prepare_data(config):
    constraint = load_constraint_file(config.constraint_path)
    if config.data_path is None:
        raise ConfigError("data_path is required")
    data, info = load_dataset(config.data_path, constraint, config.rescale_from,
                              config.rescale_to)
    train, test = split_indices(data.n, config.train_fraction, config.seed)
    return data, info, train, test


# ---------------------------------------------------------------- persistence

def _tril_names(d):
    return ["chol_%d_%d" % (i, j) for i in range(d) for j in range(i + 1)]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def save_store(store, out_dir, keep_assignments=True):
    """Write samples, assignments and trace CSVs of ``store``."""
    os.makedirs(out_dir, exist_ok=True)
    S, K, d = store.means.shape
    ii, jj = np.tril_indices(d)
    header = ["sample", "component", "weight"] + ["mean_%d" % j for j in range(d)] \
        + _tril_names(d)
    rows = []
    for s in range(S):
        for k in range(K):
            rows.append([s, k, store.weights[s, k]] + list(store.means[s, k])
                        + list(store.chols[s, k][ii, jj]))
    write_csv(os.path.join(out_dir, "samples.csv"), header, rows)
    if keep_assignments and store.assignments is not None:
        n = store.assignments.shape[1]
        write_csv(os.path.join(out_dir, "assignments.csv"),
                  ["sample"] + ["c_%d" % i for i in range(n)],
                  [[s] + list(store.assignments[s]) for s in range(S)])
    write_trace(store.traces, os.path.join(out_dir, "trace.csv"))


def write_trace(traces, path):
    n = len(traces.get("iteration", []))
    rows = [[int(traces["iteration"][i]), int(traces["rejections"][i]),
             float(traces["log_joint"][i]), float(traces["seconds"][i])] for i in range(n)]
    write_csv(path, list(TRACE_FIELDS), rows)


def load_store(run_dir, model=None):
    """Rebuild a SampleStore from a fit directory."""
    path = os.path.join(run_dir, "samples.csv")
    if not os.path.exists(path):
        raise ConfigError("no fitted samples in %s" % run_dir)
    if model is None:
        model = read_manifest(run_dir)["config"]["model"]
    m, header = read_csv_matrix(path)
    d = sum(h.startswith("mean_") for h in header)
    S = int(m[:, 0].max()) + 1
    K = int(m[:, 1].max()) + 1
    m = m.reshape(S, K, -1)
    weights = m[:, :, 2]
    means = m[:, :, 3:3 + d]
    chols = np.zeros((S, K, d, d))
    ii, jj = np.tril_indices(d)
    chols[:, :, ii, jj] = m[:, :, 3 + d:]
    covs = chols @ np.swapaxes(chols, -1, -2)
    assignments = None
    apath = os.path.join(run_dir, "assignments.csv")
    if os.path.exists(apath):
        a, _ = read_csv_matrix(apath)
        assignments = a[:, 1:].astype(np.intp)
    traces = {}
    tpath = os.path.join(run_dir, "trace.csv")
    if os.path.exists(tpath):
        t, _ = read_csv_matrix(tpath)
        t = t.reshape(-1, 4)
        traces = {"iteration": t[:, 0].astype(np.int64),
                  "rejections": t[:, 1].astype(np.int64),
                  "log_joint": t[:, 2], "seconds": t[:, 3]}
    return evaluation.SampleStore(weights, means, covs, assignments, traces, model,
                                  chols=chols)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def read_manifest(run_dir):
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise ConfigError("no manifest in %s" % run_dir)
    with open(path) as fh:
        return json.load(fh)


def config_from_manifest(run_dir):
    return RunConfig.from_dict(read_manifest(run_dir)["config"])


def _manifest(config, command, info, extra=None):
    inputs = {}
    for key in ("data_path", "constraint_path"):
        p = getattr(config, key)
        if p is not None and os.path.exists(p):
            inputs[key] = {"path": p, "sha1": git_blob_hash(p)}
    out = {"command": command, "config": config.to_dict(), "seed": config.seed,
           "inputs": inputs, "version": __version__, "data": info}
    out.update(extra or {})
    return out


# ---------------------------------------------------------------- runs

def run_fit(config, out_dir=None):
    """Fit on the training split and write a fit directory.

    A sampler failure writes the partial trace and a manifest with the
    failing sweep before re-raising.
    """
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    data, info, train, test = prepare_data(config)
    info = dict(info, n=data.n, n_train=len(train), n_test=len(test))
    train_data = data.subset(train)
    hp = config.hyperparams(train_data)
    t0 = time.perf_counter()
    try:
        store = run_chain(train_data, hp, config.model, np.random.default_rng(config.seed),
                          thin=config.thin, record_timing=config.record_timing,
                          keep_assignments=config.keep_assignments)
    except Exception as exc:
        if hasattr(exc, "partial_traces"):
            write_trace(exc.partial_traces, os.path.join(out_dir, "trace.csv"))
            write_json(os.path.join(out_dir, "manifest.json"),
                       _manifest(config, "fit", info,
                                 {"failed": {"sweep": exc.sweep, "error": str(exc)}}))
        raise
    wall = time.perf_counter() - t0 if config.record_timing else None
    save_store(store, out_dir, config.keep_assignments)
    write_json(os.path.join(out_dir, "manifest.json"),
               _manifest(config, "fit", info, {"wall_clock_seconds": wall,
                                               "n_samples": len(store)}))
    return store


def _split_datasets(config):
    data, info, train, test = prepare_data(config)
    return data.subset(train), data.subset(test)


def run_evaluate(config, store, out_dir=None):
    """Test log-likelihoods, q(S) per sample, timing and (optionally) the PPC."""
    out_dir = out_dir or config.output_dir
    train, test = _split_datasets(config)
    model = config.model
    total, per_point = evaluation.test_loglikelihood(store, test, model, config.m_norm,
                                                     config.seed)
    q = []
    for s in range(len(store)):
        z = evaluation.sample_normalizer(store, s, test.constraint, config.m_norm,
                                         config.seed, model)
        q.append(z if model == "tmog" else float(np.dot(store.weights[s], z)))
    metrics = {
        "model": model,
        "threshold": config.threshold,
        "n_samples": len(store),
        "test": {"n": test.n, "total": total, "per_point": per_point,
                 "mean": total / test.n},
        "q_mass": {"per_sample": q, "mean": float(np.mean(q))},
        "trace": evaluation.trace_summary(store),
    }
    if config.test_selection == "edge_biased":
        mask = edge_biased_mask(test.points, test.constraint, config.edge_distance)
        edge = test.subset(np.flatnonzero(mask))
        e_total = float(per_point[mask].sum())
        metrics["edge_test"] = {"n": edge.n, "distance": config.edge_distance,
                                "total": e_total, "per_point": per_point[mask],
                                "mean": e_total / edge.n if edge.n else None}
    if config.ppc:
        metrics["ppc"] = run_ppc(config, store, train, write=False)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "metrics.json"), metrics)
    return metrics


def run_ppc(config, store, train=None, out_dir=None, write=True):
    if train is None:
        train, _ = _split_datasets(config)
    rng = np.random.default_rng([config.seed, 2])
    reps, obs, p = evaluation.ppc_boundary_scale(rng, store, train.constraint, train,
                                                 config.ppc_reps, config.ppc_scale,
                                                 config.model)
    out = {"scale_factor": config.ppc_scale, "observed_fraction": obs,
           "replicate_fractions": reps, "p_value": p}
    if write:
        out_dir = out_dir or config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "ppc.json"), out)
    return out


def write_grid(grid, path):
    coords, values, inside = grid.rows()
    d = coords.shape[1]
    names = ["x%d" % j for j in range(d)] if grid.plane is None else \
        ["x%d" % j for j in grid.plane]
    rows = [list(coords[r]) + [values[r], int(inside[r])] for r in range(len(values))]
    write_csv(path, names + ["density", "inside"], rows)


def run_grid(config, store, out_dir=None):
    """Write the posterior-mean density grid(s); returns the file paths."""
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    constraint = load_constraint_file(config.constraint_path)
    grids = evaluation.posterior_mean_grid(store, constraint, config.grid_resolution,
                                           config.model, config.m_norm, config.seed)
    paths = []
    if isinstance(grids, dict):
        for (i, j), g in sorted(grids.items()):
            p = os.path.join(out_dir, "grid_%d_%d.csv" % (i, j))
            write_grid(g, p)
            paths.append(p)
    else:
        p = os.path.join(out_dir, "grid.csv")
        write_grid(grids, p)
        paths.append(p)
    return paths


def contour_script(grid_paths, out_path):
    """Write a gnuplot script that draws each grid CSV."""
    lines = ["set datafile separator ','", "set key off"]
    for p in grid_paths:
        name = os.path.basename(p)
        with open(p) as fh:
            header = fh.readline().strip().split(",")
        png = os.path.splitext(name)[0] + ".png"
        lines += ["set terminal pngcairo size 800,700", "set output '%s'" % png]
        if header[1] == "density":
            lines.append("plot '%s' every ::1 using 1:2 with lines" % name)
        else:
            lines += ["set view map", "set pm3d map",
                      "splot '%s' every ::1 using 1:2:3 with pm3d" % name]
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path


def threshold_label(t):
    return "t_inf" if math.isinf(t) else "t_%s" % ("%g" % t)


def run_sweep(config, out_dir=None):
    """Fit and evaluate once per threshold, one subdirectory each."""
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for t in config.thresholds:
        sub = os.path.join(out_dir, threshold_label(t))
        variant = "exact" if math.isinf(t) else (
            "capped_run" if config.threshold_variant == "exact" else config.threshold_variant)
        cfg = config.replace(threshold=t, rho=None, threshold_variant=variant,
                             output_dir=sub)
        store = run_fit(cfg, sub)
        metrics = run_evaluate(cfg, store, sub)
        sec = metrics["trace"].get("seconds", {})
        rows.append([t, metrics["test"]["total"], metrics["q_mass"]["mean"],
                     float(np.median(store.traces["rejections"])),
                     sec.get("per_100_iterations", 0.0)])
    write_csv(os.path.join(out_dir, "summary.csv"),
              ["threshold", "test_loglik", "q_mass", "median_rejections",
               "seconds_per_100_iterations"], rows)
    write_json(os.path.join(out_dir, "manifest.json"),
               _manifest(config, "sweep-thresholds", {}))
    return rows
