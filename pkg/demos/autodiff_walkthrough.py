"""Tour of the reverse-mode tensor core.

Builds a small expression by hand, backpropagates, checks one gradient
against a finite difference, then fits a two-layer network to a toy
regression target with plain gradient descent.
"""

import numpy as np

from stackalign import tensor as T


def expression_demo():
    print("== a scalar expression and its gradients ==")
    w = T.Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    x = T.Tensor(np.array([1.0, 2.0, 3.0]))
    # loss = sum((relu(w) * x)^2)
    loss = T.sum_squares(T.mul(T.relu(w), x))
    loss.backward()
    print(f"loss          = {loss.item():.4f}")
    print(f"dloss/dw      = {w.grad}")

    # the same derivative, one coordinate at a time
    fd = T.finite_difference(
        lambda: T.sum_squares(T.mul(T.relu(w), x)).item(), w.data, (2,))
    print(f"finite diff   = {fd:.6f} (analytic {w.grad[2]:.6f})")
    print()


def fit_demo():
    print("== fitting y = tanh(x @ A) with a small network ==")
    rng = np.random.default_rng(7)
    A = rng.normal(size=(4, 2))
    X = rng.normal(size=(64, 4))
    Y = np.tanh(X @ A)

    W1 = T.Tensor(rng.normal(scale=0.5, size=(4, 8)), requires_grad=True)
    W2 = T.Tensor(rng.normal(scale=0.5, size=(8, 2)), requires_grad=True)
    params = [W1, W2]

    for step in range(201):
        pred = T.matmul(T.tanh(T.matmul(T.Tensor(X), W1)), W2)
        loss = T.sum_squares(T.sub(pred, T.Tensor(Y)))
        for p in params:
            p.zero_grad()
        loss.backward(params)
        for p in params:
            p.data -= 0.002 * p.grad
        if step % 50 == 0:
            print(f"step {step:3d}  sum-squared error {loss.item():8.4f}")
    print()


def main():
    expression_demo()
    fit_demo()


if __name__ == "__main__":
    main()
