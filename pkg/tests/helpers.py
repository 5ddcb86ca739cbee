from decimal import ROUND_HALF_UP, Decimal

import numpy as np


def rel_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, x, h=1e-5):
    """Central differences of the scalar function ``f`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def check_layer_grads(layer, x, training=True, make_rng=None, tol=1e-3):
    """Finite-difference check of a layer's input and parameter gradients.

    The scalar objective is sum(forward(x) * r) for a fixed random r.
    """
    g = np.random.default_rng(99)

    def run():
        rng = make_rng() if make_rng else None
        return layer.forward(x, training, rng)

    r = g.standard_normal(run().shape)

    def loss():
        return float((run() * r).sum())

    run()
    dx = layer.backward(r)
    assert rel_error(dx, numeric_grad(loss, x)).max() <= tol
    for name, p in layer.params.items():
        run()
        layer.backward(r)
        analytic = layer.grads[name].copy()
        assert rel_error(analytic, numeric_grad(loss, p)).max() <= tol, name


def micro_arch():
    """8x8x1 input, 2-filter conv, 2x2 pool, flatten, dense 2."""
    from scalelab.architecture import ArchitectureSpec
    from scalelab.layers import LayerSpec

    return ArchitectureSpec(
        (8, 8, 1),
        (LayerSpec.conv(2, 3), LayerSpec.maxpool(2), LayerSpec.flatten(), LayerSpec.dense(2, "softmax")),
        "micro",
    )


def model_grad_error(model, x, labels, h=1e-5):
    """Worst relative error between backprop and central differences over all parameters."""
    from scalelab.optim import cross_entropy_loss

    def loss():
        return cross_entropy_loss(model.logits(x, training=True), labels).loss

    lv = cross_entropy_loss(model.logits(x, training=True), labels)
    model.backward(lv.grad_logits)
    analytic = [g.copy() for g in model.gradients()]
    worst = 0.0
    for p, a in zip(model.parameters(), analytic):
        worst = max(worst, float(rel_error(a, numeric_grad(loss, p, h)).max()))
    return worst


def naive_conv(x, w, b, relu):
    """Direct nested-loop valid convolution, NHWC input, (K, K, Cin, Cout) kernel."""
    n, h, wd, cin = x.shape
    k, _, _, cout = w.shape
    ho, wo = h - k + 1, wd - k + 1
    out = np.zeros((n, ho, wo, cout))
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for f in range(cout):
                    acc = float(b[f])
                    for di in range(k):
                        for dj in range(k):
                            for c in range(cin):
                                acc += float(x[s, i + di, j + dj, c]) * float(w[di, dj, c, f])
                    out[s, i, j, f] = max(acc, 0.0) if relu else acc
    return out


def mann_whitney(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties worth one half."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    diff = scores[labels == 1][:, None] - scores[labels == 0][None, :]
    wins = 2 * int((diff > 0).sum()) + int((diff == 0).sum())
    return wins / (2 * diff.size)


def round2(x):
    """Round half up to two decimals, the way printed tables do."""
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
