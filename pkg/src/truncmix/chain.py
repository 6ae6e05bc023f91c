"""Run a sampler for a fixed number of sweeps and collect a SampleStore."""

import numpy as np

from .evaluation import SampleStore
from .mixture import initial_state
from .motg import motg_sweep
from .tmog import tmog_sweep

SWEEPS = {"tmog": tmog_sweep, "motg": motg_sweep}
TRACE_FIELDS = ("iteration", "rejections", "log_joint", "seconds")


def _traces(records, K):
    out = {
        "iteration": np.array([r["iteration"] for r in records], dtype=np.int64),
        "rejections": np.array([r["rejections"] for r in records], dtype=np.int64),
        "log_joint": np.array([r["log_joint"] for r in records], dtype=float),
        "seconds": np.array([r["seconds"] for r in records], dtype=float),
    }
    out["occupancy"] = (np.array([r["occupancy"] for r in records], dtype=np.int64)
                        if records else np.zeros((0, K), dtype=np.int64))
    return out


def run_chain(data, hp, model="tmog", rng=None, thin=1, record_timing=True,
              keep_assignments=True, state=None, callback=None):
    """Run ``hp.iters`` sweeps and keep every ``thin``-th post-burn-in state.

    With ``record_timing=False`` the ``seconds`` trace is all zeros, making
    every output a deterministic function of the seed.  If a sweep raises,
    the exception gets ``sweep`` (index) and ``partial_traces`` attributes
    before propagating.
    """
    if model not in SWEEPS:
        raise ValueError("model must be 'tmog' or 'motg', got %r" % model)
    if thin < 1:
        raise ValueError("thin must be at least 1")
    sweep = SWEEPS[model]
    rng = np.random.default_rng(hp.seed) if rng is None else rng
    if state is None:
        state = initial_state(rng, data, hp)
    records, kept = [], []
    for it in range(hp.iters):
        try:
            state, rec = sweep(rng, state, data, hp, iteration=it)
        except Exception as exc:
            exc.sweep = it
            exc.partial_traces = _traces(records, state.K)
            raise
        if not record_timing:
            rec["seconds"] = 0.0
        records.append(rec)
        if it >= hp.burn_in and (it - hp.burn_in) % thin == 0:
            kept.append(state)
        if callback is not None:
            callback(it, state, rec)
    return SampleStore.from_states(kept, _traces(records, state.K), model,
                                   keep_assignments=keep_assignments)
