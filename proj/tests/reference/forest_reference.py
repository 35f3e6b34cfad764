"""Generates tests/data/forest_synthetic.csv and prints scikit-learn's held-out R^2.

Rows 0..349 train, 350..499 test. The reference forest uses the same
hyperparameters as the C++ default (200 trees, bootstrap, max_features="sqrt",
unlimited depth, min_samples_split=2, min_samples_leaf=1). R^2 is averaged
over ten random_state values to remove seed noise from the frozen number.
"""
import pathlib
import sys

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.metrics import r2_score

N, D, N_TRAIN = 500, 10, 350


def make_data(seed=20240611):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(N, D))
    w = np.array([1.5, -2.0, 1.0, 0.5, 0.0, 0.0, 0.8, 0.0, -0.3, 0.0])
    y = x @ w + 2.0 * np.sin(2.0 * x[:, 4]) + rng.normal(0.0, 0.5, size=N)
    return x, y


def main():
    out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else \
        pathlib.Path(__file__).resolve().parents[1] / "data" / "forest_synthetic.csv"
    x, y = make_data()
    with open(out, "w") as f:
        f.write(",".join([f"x{i}" for i in range(D)] + ["y"]) + "\n")
        for row, target in zip(x, y):
            f.write(",".join(repr(float(v)) for v in row) + "," + repr(float(target)) + "\n")
    r2s = []
    for rs in range(10):
        rf = RandomForestRegressor(n_estimators=200, max_features="sqrt", bootstrap=True,
                                   random_state=rs)
        rf.fit(x[:N_TRAIN], y[:N_TRAIN])
        r2s.append(r2_score(y[N_TRAIN:], rf.predict(x[N_TRAIN:])))
    print("per_state", [round(v, 4) for v in r2s])
    print("mean_r2 %.6f std %.6f" % (np.mean(r2s), np.std(r2s)))


if __name__ == "__main__":
    main()
