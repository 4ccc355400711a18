"""Smoke test for the auxiv_py extension module.

Build and expose the module first, e.g.

    cargo build --release -p auxiv-python --features extension-module
    cp target/release/libauxiv_py.so python/auxiv_py.so
    python3 python/smoke_test.py
"""

import numpy as np

import auxiv_py

TWO_IVS = """
z1 -> x
z2 -> x
x -> y
x <-> y
"""

BOW = "x -> y\nx <-> y\n"

QUASI_IV = "z -> x\nz -> y\nx -> y\nx <-> y\n"


def main():
    g = auxiv_py.Graph(TWO_IVS)
    assert g.names == ["z1", "x", "z2", "y"], g.names
    assert g.edges == ["z1->x", "z2->x", "x->y"]
    assert g.d_separated("z1", "z2")
    assert not g.d_separated("z1", "y", given=["x"])

    ident = auxiv_py.identify(g)
    assert ident.status("x->y") == "identified"
    assert all(ident.verify(trials=20).values())
    print("x->y =", ident.formula("x->y"))

    sigma = np.array(g.implied_covariance(seed=1))
    value = ident.evaluate("x->y", sigma.tolist())
    assert np.isfinite(value)

    cs = auxiv_py.constraints(g)
    assert len(cs) == 1 and cs[0].s == "z2"
    assert cs[0].residual(sigma.tolist()) < 1e-9
    print("constraint:", cs[0].expression)

    assert auxiv_py.identify(auxiv_py.Graph(BOW)).status("x->y") == "unknown"

    g2 = auxiv_py.Graph(QUASI_IV)
    assert auxiv_py.identify(g2).status("x->y") == "unknown"
    z_id = auxiv_py.identify(g2, known="z -> y = ?gamma")
    assert z_id.status("x->y") == "identified"
    assert z_id.status("z->y") == "known"

    try:
        auxiv_py.Graph("a -> b\nb -> a\n")
    except ValueError as e:
        print("cycle rejected:", e)
    else:
        raise AssertionError("cyclic graph accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
