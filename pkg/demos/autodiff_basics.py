"""A tour of the tape-based autodiff engine.

Builds a few small expressions by hand, runs backward, and compares every
analytic gradient against central finite differences.
"""

import numpy as np

from opsum import autodiff as ad
from opsum.autodiff import Tensor


def scalar_chain():
    # d/dx of sum(tanh(x W)) via the tape
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    with ad.fresh_tape():
        out = ad.tsum(ad.tanh(ad.matmul(x, w)))
        ad.backward(out)
    print("loss            :", out.item())
    print("dL/dx row 0     :", np.round(x.grad[0], 4))
    print("dL/dw col 0     :", np.round(w.grad[:, 0], 4))


def finite_difference_agreement():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)

    def f(t):
        return ad.tsum(ad.softmax(ad.layer_norm(t, Tensor(np.ones(4)),
                                                Tensor(np.zeros(4)))))

    # the floor keeps near-zero gradient entries from inflating the
    # relative error through finite-difference cancellation
    err = ad.grad_check(f, x, floor=1e-5)
    print(f"layer_norm -> softmax grad check error: {err:.2e}")
    assert err < 1e-4


def gradients_accumulate():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with ad.fresh_tape():
        y = ad.add(ad.mul(x, x), x)  # x^2 + x, so dy/dx = 2x + 1 = 5
        ad.backward(ad.tsum(y))
    print("d(x^2 + x)/dx at x=2:", x.grad[0])


def no_grad_costs_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.fresh_tape() as tape:
        with ad.no_grad():
            ad.matmul(x, x)
        print("ops recorded under no_grad:", len(tape))


if __name__ == "__main__":
    scalar_chain()
    print()
    finite_difference_agreement()
    print()
    gradients_accumulate()
    no_grad_costs_nothing()
