"""Accuracy of a nearest-class-mean oracle that knows the true unseen class
means, as a function of cluster noise: the ceiling any generator-based
classifier can reach on the synthetic benchmark.

    python scripts/oracle_ceiling.py --noise 0.3 0.6 1.0 1.5
"""

import argparse

import numpy as np

from zslforge.data import SyntheticSpec, attribute_to_mean_map, make_synthetic


def ceiling(spec: SyntheticSpec, seed: int) -> float:
    ds = make_synthetic(spec, seed)
    W, b = attribute_to_mean_map(spec.d, spec.k, spec.attribute_to_mean_map_seed)
    t = ds.attributes
    all_means = t.vectors @ W.T + b
    means = t.unseen_matrix @ W.T + b
    means = (1.0 - spec.overlap) * means + spec.overlap * all_means.mean(axis=0)
    # expected location of a rectified noisy feature is close to the
    # rectified mean at low noise; the oracle only needs the nearest centre
    means = np.maximum(means, 0.0)
    classes = np.asarray(t.unseen_classes)
    pred = classes[((ds.x_unseen[:, None] - means[None]) ** 2).sum(-1).argmin(1)]
    return float(np.mean(pred == ds.unseen_test_labels))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--noise", type=float, nargs="+", default=[0.1, 0.3, 0.6, 1.0, 1.5, 2.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = p.parse_args()
    for noise in args.noise:
        accs = [ceiling(SyntheticSpec(cluster_noise=noise), s) for s in args.seeds]
        print(f"noise {noise:4.2f}: oracle accuracy {100 * np.mean(accs):5.1f}")


if __name__ == "__main__":
    main()
