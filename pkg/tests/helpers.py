import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x``, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max absolute deviation relative to the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def supernet_grad_errors(seed: int, mode: str, num_nodes: int = 2, dim: int = 4) -> tuple[float, float]:
    """Worst relative FD error of d L_train / d w and d L_val / d (alpha, beta) for one random supernet.

    Channel masks are frozen by reseeding the mask rng identically for every evaluation.
    """
    from coreset_nas import tensor as T
    from coreset_nas.supernet import CellSpec, SupernetState, supernet_logits

    rng = np.random.default_rng(seed)
    spec = CellSpec(num_nodes=num_nodes, feature_dim=dim)
    state = SupernetState.create(spec, num_classes=3, q=2, seed=seed, mode=mode)
    for a in state.alpha.values():
        a.data[:] = rng.normal(size=a.shape)
    for b in state.beta.values():
        b.data[:] = rng.normal(size=b.shape)
    xt, yt = rng.normal(size=(6, dim)), rng.integers(0, 3, size=6)
    xv, yv = rng.normal(size=(6, dim)), rng.integers(0, 3, size=6)

    def loss(x, y):
        return T.cross_entropy(supernet_logits(state, x, np.random.default_rng(seed + 1)), y)

    worst = []
    for params, (x, y) in ((state.weights(), (xt, yt)), (state.arch_parameters(), (xv, yv))):
        grads = T.parameters_grads(params, T.backward(loss(x, y)))
        err = 0.0
        for p, g in zip(params, grads):
            num = numeric_grad(lambda: loss(x, y).item(), p.data)
            err = max(err, rel_err(g, num))
        worst.append(err)
    return worst[0], worst[1]
