"""Finite-difference gradient check of every builtin product over several seeds.

Usage: python3 scripts/gradcheck_all.py [--seeds 10] [--dim 4] [--topology 3,5,5,2]
"""
import argparse

import numpy as np

from abipnn.bilinear import BUILTIN_KINDS, builtin_product
from abipnn.network import init_network
from abipnn.train import grad_check


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--dim", type=int, default=4, help="N for the convolution families")
    ap.add_argument("--topology", default="3,5,5,2")
    args = ap.parse_args()
    topology = [int(t) for t in args.topology.split(",")]

    print(f"{'product':<26}{'worst rel err':>14}  location")
    for kind, fixed in BUILTIN_KINDS.items():
        prod = builtin_product(kind, None if fixed else args.dim)
        worst = None
        for seed in range(args.seeds):
            rng = np.random.default_rng(seed)
            net = init_network(topology, prod, seed=seed)
            for layer in net.layers:
                layer.biases[:] = rng.normal(0.0, 0.5, size=layer.biases.shape)
            x = rng.uniform(-1, 1, (topology[0], prod.dim))
            t = rng.uniform(0, 1, (topology[-1], prod.dim))
            rep = grad_check(net, x, t)
            if worst is None or rep.max_rel_err > worst.max_rel_err:
                worst = rep
        print(f"{prod.name:<26}{worst.max_rel_err:>14.3e}  layer {worst.layer} {worst.kind} {worst.index}")


if __name__ == "__main__":
    main()
