"""Gradient-check case library shared by the unit suite and the acceptance run.

Each case builds a float64 input and a pure scalar function of it; grad_check
compares the tape gradient against central finite differences. Random inputs
live in [-1, 1]; kinked ops (relu, L1) exclude elements within 10*eps of the
kink instead of failing there.
"""

import numpy as np

from poe import tensor as T
from poe.losses import loss_ckd, loss_kd, loss_scale, loss_soft
from poe.tasks import PrimitiveTask

EPS = 1e-3
TOL = 1e-3


def _const(rng, shape, lo=-1.0, hi=1.0):
    return T.Tensor(rng.uniform(lo, hi, size=shape), dtype=np.float64)


def _proj(rng, shape):
    """Random fixed projection so structural backward errors cannot cancel."""
    r = _const(rng, shape)
    return lambda t: T.tsum(T.mul(t, r))


def _dist(rng, n):
    p = rng.uniform(0.2, 1.0, size=n)
    return p / p.sum()


def build_cases(rng: np.random.Generator):
    """Yield (name, x, scalar_fn, exclude_mask_or_None) tuples."""
    cases = []

    def case(name, x, fn, exclude=None):
        cases.append((name, np.asarray(x, dtype=np.float64), fn, exclude))

    # --- structural / elementwise ops ---
    a34 = rng.uniform(-1, 1, (3, 4))
    b42 = _const(rng, (4, 2))
    pr32 = _proj(rng, (3, 2))
    case("matmul_lhs", a34, lambda t: pr32(T.matmul(t, b42)))
    a_c = _const(rng, (3, 4))
    case("matmul_rhs", rng.uniform(-1, 1, (4, 2)), lambda t: pr32(T.matmul(a_c, t)))

    b5 = _const(rng, (5,))
    pr25 = _proj(rng, (2, 5))
    case("bias_add_x", rng.uniform(-1, 1, (2, 5)), lambda t: pr25(T.bias_add(t, b5)))
    x25 = _const(rng, (2, 5))
    case("bias_add_b", rng.uniform(-1, 1, (5,)), lambda t: pr25(T.bias_add(x25, t)))

    xr = rng.uniform(-1, 1, (3, 5))
    prr = _proj(rng, (3, 5))
    case("relu", xr, lambda t: prr(T.relu(t)), np.abs(xr) <= 10 * EPS)

    o23 = _const(rng, (2, 3))
    case("add", rng.uniform(-1, 1, (2, 3)), lambda t: T.tsum(T.mul(T.add(t, o23), o23)))
    case("mul", rng.uniform(-1, 1, (2, 3)), lambda t: T.tsum(T.mul(t, o23)))
    case("scalar_mul", rng.uniform(-1, 1, (2, 3)), lambda t: T.tsum(T.scalar_mul(t, 0.7)))
    case("tsum", rng.uniform(-1, 1, (4,)), lambda t: T.tsum(t))

    tail = _const(rng, (2, 3))
    prc = _proj(rng, (2, 7))
    case("concat_head", rng.uniform(-1, 1, (2, 4)), lambda t: prc(T.concat([t, tail], axis=1)))
    head = _const(rng, (2, 4))
    case("concat_tail", rng.uniform(-1, 1, (2, 3)), lambda t: prc(T.concat([head, t], axis=1)))

    # --- convolution / pooling / norm ---
    for k, s, hw in ((3, 1, 4), (3, 2, 5), (1, 1, 4), (1, 2, 5)):
        oh = (hw + 2 * (1 if k == 3 else 0) - k) // s + 1
        wc = _const(rng, (k, k, 2, 3), -0.5, 0.5)
        pr = _proj(rng, (2, oh, oh, 3))
        case(f"conv{k}x{k}_s{s}_x", rng.uniform(-1, 1, (2, hw, hw, 2)),
             lambda t, wc=wc, s=s, pr=pr: pr(T.conv2d(t, wc, stride=s)))
        xc = _const(rng, (2, hw, hw, 2))
        case(f"conv{k}x{k}_s{s}_w", rng.uniform(-0.5, 0.5, (k, k, 2, 3)),
             lambda t, xc=xc, s=s, pr=pr: pr(T.conv2d(xc, t, stride=s)))

    prg = _proj(rng, (2, 4))
    case("global_avg_pool", rng.uniform(-1, 1, (2, 3, 3, 4)), lambda t: prg(T.global_avg_pool(t)))

    sc = _const(rng, (4,), 0.5, 1.5)
    sh = _const(rng, (4,))
    prb = _proj(rng, (2, 3, 3, 4))

    def bn_train(t, sc=sc, sh=sh, prb=prb):
        rm, rv = np.zeros(4), np.ones(4)
        return prb(T.batch_norm(t, sc, sh, rm, rv, training=True))

    case("batch_norm_train_x", rng.uniform(-1, 1, (2, 3, 3, 4)), bn_train)

    xb = _const(rng, (2, 3, 3, 4))

    def bn_train_scale(t, xb=xb, sh=sh, prb=prb):
        rm, rv = np.zeros(4), np.ones(4)
        return prb(T.batch_norm(xb, t, sh, rm, rv, training=True))

    case("batch_norm_train_scale", rng.uniform(0.5, 1.5, (4,)), bn_train_scale)

    def bn_train_shift(t, xb=xb, sc=sc, prb=prb):
        rm, rv = np.zeros(4), np.ones(4)
        return prb(T.batch_norm(xb, sc, t, rm, rv, training=True))

    case("batch_norm_train_shift", rng.uniform(-1, 1, (4,)), bn_train_shift)

    rm_c = rng.uniform(-0.3, 0.3, 4)
    rv_c = rng.uniform(0.5, 1.5, 4)

    def bn_eval(t, sc=sc, sh=sh, prb=prb):
        return prb(T.batch_norm(t, sc, sh, rm_c.copy(), rv_c.copy(), training=False))

    case("batch_norm_eval_x", rng.uniform(-1, 1, (2, 3, 3, 4)), bn_eval)

    # --- softmax family ---
    pr6 = _proj(rng, (2, 6))
    case("softmax", rng.uniform(-1, 1, (2, 6)), lambda t: pr6(T.softmax(t)))
    case("log_softmax", rng.uniform(-1, 1, (2, 6)), lambda t: pr6(T.log_softmax(t)))

    q_c = T.Tensor(_dist(rng, 5), dtype=np.float64)
    p_c = T.Tensor(_dist(rng, 5), dtype=np.float64)
    case("kl_div_p", rng.uniform(-1, 1, (5,)), lambda t: T.kl_div(T.softmax(t), q_c))
    case("kl_div_q", rng.uniform(-1, 1, (5,)), lambda t: T.kl_div(p_c, T.softmax(t)))

    bl1 = _const(rng, (2, 5))
    xl1 = rng.uniform(-1, 1, (2, 5))
    case("l1_distance_a", xl1, lambda t: T.l1_distance(t, bl1), np.abs(xl1 - bl1.data) <= 10 * EPS)
    al1 = _const(rng, (2, 5))
    xl1b = rng.uniform(-1, 1, (2, 5))
    case("l1_distance_b", xl1b, lambda t: T.l1_distance(al1, t), np.abs(al1.data - xl1b) <= 10 * EPS)

    labels = rng.integers(0, 6, size=3)
    case("cross_entropy", rng.uniform(-1, 1, (3, 6)), lambda t: T.cross_entropy(t, labels))

    # --- the four distillation losses (gradient w.r.t. student logits) ---
    task = PrimitiveTask("h", "h", (1, 3, 4))
    t_full = rng.uniform(-2, 2, (2, 6))
    temp = 3.0
    case("loss_kd_s", rng.uniform(-2, 2, (2, 6)),
         lambda s: loss_kd(T.Tensor(t_full, dtype=np.float64), s, temp))
    case("loss_soft_s", rng.uniform(-2, 2, (2, 3)),
         lambda s: loss_soft(T.Tensor(t_full, dtype=np.float64), s, task, temp))
    xs = rng.uniform(-2, 2, (2, 3))
    case("loss_scale_s", xs,
         lambda s: loss_scale(T.Tensor(t_full, dtype=np.float64), s, task),
         np.abs(xs - t_full[:, list(task.class_indices)]) <= 10 * EPS)
    xs2 = rng.uniform(-2, 2, (2, 3))
    case("loss_ckd_s", xs2,
         lambda s: loss_ckd(T.Tensor(t_full, dtype=np.float64), s, task, temp, 0.3),
         np.abs(xs2 - t_full[:, list(task.class_indices)]) <= 10 * EPS)

    return cases


def run_suite(seed: int, instances: int):
    """Run every case `instances` times; returns {name: worst GradCheckResult}."""
    worst = {}
    for i in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        for name, x, fn, exclude in build_cases(rng):
            res = T.grad_check(fn, x, eps=EPS, exclude=exclude)
            prev = worst.get(name)
            if prev is None or res.max_rel_err > prev.max_rel_err:
                worst[name] = res
    return worst
