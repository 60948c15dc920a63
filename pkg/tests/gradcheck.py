"""Central finite-difference gradient oracle shared by the nn tests."""

import numpy as np

H = 1e-5
FLOOR = 1e-6  # denominators below this are treated as absolute error


def rel_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_param_grads(net, x, grad_out, h=H):
    """d/dp of sum(net(x) * grad_out) for every parameter entry."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = np.sum(net(x) * grad_out)
            p[i] = old - h
            down = np.sum(net(x) * grad_out)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def numeric_input_grad(net, x, grad_out, h=H):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (np.sum(net(xp) * grad_out) - np.sum(net(xm) * grad_out)) / (2 * h)
    return g


def max_rel_error(net, x, grad_out):
    """Worst elementwise relative error over all parameters and the input."""
    _, cache = net.forward(x)
    analytic = net.backward(cache, grad_out)
    pairs = zip([w for pair in zip(analytic.weights, analytic.biases) for w in pair],
                numeric_param_grads(net, x, grad_out))
    worst = max(float(rel_error(a, n).max()) for a, n in pairs)
    return max(worst, float(rel_error(analytic.input, numeric_input_grad(net, x, grad_out)).max()))
