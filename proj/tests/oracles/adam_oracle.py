"""Hand evaluation of bias-corrected Adam steps on one scalar parameter."""

B1, B2, EPS = 0.9, 0.999, 1e-8


def run(w, grads, lr):
    m = v = 0.0
    for step, g in enumerate(grads, start=1):
        m = B1 * m + (1 - B1) * g
        v = B2 * v + (1 - B2) * g * g
        m_hat = m / (1 - B1**step)
        v_hat = v / (1 - B2**step)
        w -= lr * m_hat / (v_hat**0.5 + EPS)
    return w


if __name__ == "__main__":
    print(f"one step g=1 lr=0.1 from 0: {run(0.0, [1.0], 0.1)!r}")
    print(f"three steps g=(1,-2,0.5) lr=0.01 from 1: {run(1.0, [1.0, -2.0, 0.5], 0.01)!r}")
