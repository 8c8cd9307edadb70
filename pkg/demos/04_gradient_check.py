"""
Checking the hand-written gradients
===================================

Every parameter of the model is nudged up and down by 1e-5 in float64 and
the change in loss is compared with the analytic gradient.
"""

from m3net.training import GRAD_CHECK_CONFIG, grad_check

report = grad_check(GRAD_CHECK_CONFIG, seed=0)
for name, err in sorted(report.errors.items(), key=lambda kv: -kv[1])[:8]:
    print(f"{name:14s} relative error {err:.2e}")
print("per group:", {g: f"{e:.1e}" for g, e in report.group_errors.items()})
print("passed" if report.passed else "FAILED", f"(redraws: {report.redraws})")
