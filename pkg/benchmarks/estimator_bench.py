import numpy as np

from subrank.ranks import SampleMatrix, estimate_exhaustive, estimate_random


class TimeRandomEstimator:
    param_names = ["n", "d"]
    params = [[30, 100, 1000], [2, 3, 5]]

    def setup(self, n, d):
        rng = np.random.default_rng(1945)
        self.sample = SampleMatrix(rng.standard_normal((n, d)))

    def time_random(self, n, d):
        estimate_random(self.sample, 8, 100000, seed=1)


class TimeExhaustiveEstimator:
    param_names = ["n"]
    params = [[12, 16, 20]]

    def setup(self, n):
        rng = np.random.default_rng(1945)
        self.sample = SampleMatrix(rng.standard_normal((n, 3)))

    def time_exhaustive(self, n):
        estimate_exhaustive(self.sample, 6)
