"""Counterfactual detector scoring on paired rollouts.

Each seed is run twice with identical randomness: once with the monitor, once
without. A trigger is a true positive exactly when the unmonitored twin
failed. This demo uses an untrained policy and a tiny threshold, so the
detector fires everywhere: recall 1, precision = the baseline failure rate.
"""

import numpy as np

from momart.detector import DetectorConfig, DetectorModel
from momart.evaluation import counterfactual_eval, top3_success
from momart.policy import PolicyConfig, PolicyModel
from momart.sim import OBS_DIM, TaskSpec

task = TaskSpec("setup-dishwasher")
policy = PolicyModel.create(PolicyConfig.compact(OBS_DIM, "rnn"), seed=0)
detector = DetectorModel.create(DetectorConfig.compact(OBS_DIM), seed=0)
detector.set_norm_stats(np.full(OBS_DIM, 0.5), np.full(OBS_DIM, 0.25))

res = counterfactual_eval(policy, detector, task, seeds=range(6),
                          metric_threshold=1e-8, max_steps=200)
print("counts:", res["counts"])
print("precision:", res["precision"], "recall:", res["recall"])
print("success with/without:", res["success_rate_with_detector"],
      res["success_rate_without_detector"])

# the top-3 aggregation used for the training success protocol
log = {0: [0.1, 0.5, 0.4, 0.6], 1: [0.3, 0.3, 0.3, 0.3], 2: [0.0, 0.2, 0.7, 0.1]}
print("top-3 aggregate:", top3_success(log))
