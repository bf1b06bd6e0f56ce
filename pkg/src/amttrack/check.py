"""Self-verification suite behind ``amt check``.

Each check returns a :class:`CheckResult`; :func:`run_checks` collects them.
The gradient check can be pointed at a deliberately broken VJP so the
harness itself can be shown to catch errors.
"""

from dataclasses import dataclass
from importlib import resources
import json
import time

import numpy as np
from scipy.special import softmax

from .boxes import BBox, giou, giou_grad
from .head import box_loss_grad, l1_grad, l1_loss, total_loss
from .hopfield import AssocGrads, ProjectionSet, hopfield_assoc, hopfield_assoc_vjp, retrieve
from .memory import TemplateEntry, TemplateMemory

GRAD_TOL = 1e-5
ATTN_TOL = 1e-10
ENERGY_SLACK = 1e-9
BETAS = (0.1, 1.0, 4.0, 20.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x, h):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (restored afterwards)."""
    x = np.asarray(x, dtype=np.float64)
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


def perturbed_vjp(R, Y, proj, beta, upstream):
    """A VJP with a small bug in the R gradient; used to test the checker."""
    g = hopfield_assoc_vjp(R, Y, proj, beta, upstream)
    return AssocGrads(g.R * (1 + 1e-3), g.Y, g.W_Q, g.W_K, g.W_V)


def assoc_grad_errors(rng, vjp=hopfield_assoc_vjp, h=1e-4):
    """Relative errors of the five association gradients against finite differences."""
    M, N = rng.integers(2, 6, size=2)
    d_r, d_y, d_k, d_v = rng.integers(2, 6, size=4)
    R = rng.standard_normal((M, d_r))
    Y = rng.standard_normal((N, d_y))
    proj = ProjectionSet(
        rng.standard_normal((d_r, d_k)) / np.sqrt(d_r),
        rng.standard_normal((d_y, d_k)) / np.sqrt(d_y),
        rng.standard_normal((d_y, d_v)),
    )
    beta = float(rng.choice([0.25, 1.0, 2.0]))
    G = rng.standard_normal((M, d_v))
    grads = vjp(R, Y, proj, beta, G).as_dict()
    operands = {"R": R, "Y": Y, "W_Q": proj.W_Q, "W_K": proj.W_K, "W_V": proj.W_V}

    def loss():
        return float(np.sum(G * hopfield_assoc(R, Y, proj, beta)))

    return {name: rel_error(grads[name], numeric_grad(loss, x, h)) for name, x in operands.items()}


def _random_box(rng):
    return BBox(*rng.uniform(20, 60, size=2), *rng.uniform(5, 30, size=2))


def box_grad_errors(rng, h=1e-5):
    pred, target = _random_box(rng), _random_box(rng)
    x = pred.as_array()

    def at(f):
        return lambda: f(BBox(*x), target)

    return {
        "l1": rel_error(l1_grad(pred, target), numeric_grad(at(l1_loss), x, h)),
        "giou": rel_error(giou_grad(pred, target), numeric_grad(at(giou), x, h)),
        "box_loss": rel_error(
            box_loss_grad(pred, target),
            numeric_grad(at(lambda p, t: total_loss(p, t).total), x, h),
        ),
    }


def check_gradients(seed=0, trials=20, vjp=hopfield_assoc_vjp):
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(trials):
        for name, err in {**assoc_grad_errors(rng, vjp), **box_grad_errors(rng)}.items():
            worst[name] = max(worst.get(name, 0.0), err)
    bad = [k for k, v in worst.items() if not v <= GRAD_TOL]
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    return CheckResult("gradients", not bad, detail)


def reference_attention(R, Y, W_Q, W_K, W_V):
    """Scaled dot-product cross-attention written out directly."""
    Q, K, V = np.dot(R, W_Q), np.dot(Y, W_K), np.dot(Y, W_V)
    return np.dot(softmax(np.dot(Q, K.T) / np.sqrt(K.shape[1]), axis=-1), V)


def attention_errors(seed=0, trials=100):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(trials):
        M, N, d_r, d_y, d_k, d_v = rng.integers(1, 24, size=6)
        R = rng.standard_normal((M, d_r))
        Y = rng.standard_normal((N, d_y))
        W = [rng.standard_normal(s) for s in ((d_r, d_k), (d_y, d_k), (d_y, d_v))]
        ours = hopfield_assoc(R, Y, ProjectionSet(*W), 1.0 / np.sqrt(d_k))
        errs.append(float(np.max(np.abs(ours - reference_attention(R, Y, *W)))))
    return errs


def check_attention(seed=0, trials=100):
    worst = max(attention_errors(seed, trials))
    return CheckResult("attention_equivalence", worst <= ATTN_TOL, f"max abs diff {worst:.1e} over {trials} shapes")


def energy_violations(seed=0, trials=1000, max_iters=16):
    """Largest energy increase between successive retrieval iterates over random trials."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        N = int(rng.integers(4, 65))
        d = int(rng.integers(8, 129))
        beta = float(rng.choice(BETAS))
        Y = rng.standard_normal((N, d))
        r0 = rng.standard_normal(d)
        _, _, energies = retrieve(Y, r0, beta, max_iters=max_iters, tol=1e-12)
        worst = max(worst, float(np.max(np.diff(energies))))
    return worst


def check_energy(seed=0, trials=1000):
    t0 = time.perf_counter()
    worst = energy_violations(seed, trials)
    dt = time.perf_counter() - t0
    return CheckResult("energy_descent", worst <= ENERGY_SLACK,
                       f"max increase {worst:.1e} over {trials} trials in {dt:.1f}s")


def load_trace_fixture():
    text = resources.files("amttrack").joinpath("data/memory_trace.json").read_text(encoding="utf-8")
    return json.loads(text)


def replay_trace(fixture):
    """Drive a memory through the scripted trace; returns ``{n: snapshot}`` at every step."""
    static = TemplateEntry(np.array(fixture["static_embedding"]), 1.0, 0, static=True)
    mem = TemplateMemory(static, **fixture["params"])
    cands = fixture["candidates"]
    snaps = {}
    for k, score in enumerate(fixture["scores"]):
        n = k + 1
        cand = None
        if mem.wants_candidate(score):
            cand = TemplateEntry(np.array(cands[str(n)]), score, n)
        mem.step(score, cand)
        snaps[n] = mem.snapshot()
    return snaps, mem


def check_trace():
    fixture = load_trace_fixture()
    snaps, _ = replay_trace(fixture)
    wrong = []
    for n, want in fixture["expected"].items():
        got = snaps[int(n)]
        if got["ST"] != want["ST"] or got["LT"] != want["LT"]:
            wrong.append(f"n={n}: got ST={got['ST']} LT={got['LT']}")
    return CheckResult("memory_trace", not wrong,
                       "; ".join(wrong) or f"{len(fixture['expected'])} checkpoints match")


def run_checks(seed=0, vjp=hopfield_assoc_vjp):
    return [
        check_gradients(seed, vjp=vjp),
        check_attention(seed),
        check_energy(seed),
        check_trace(),
    ]
